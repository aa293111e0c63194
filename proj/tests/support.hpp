#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "kdlab/core.hpp"
#include "oracles.hpp"

namespace testing_support {

using oracles::random_simplex;
using oracles::random_tensor;

// Fresh scratch directory under the system temp dir, wiped on construction.
struct ScratchDir {
  std::filesystem::path path;
  explicit ScratchDir(const std::string& name) : path(std::filesystem::temp_directory_path() / ("kdlab_" + name)) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~ScratchDir() { std::filesystem::remove_all(path); }
  std::string str(const std::string& leaf = "") const { return leaf.empty() ? path.string() : (path / leaf).string(); }
};

template <typename F>
kdl::ErrorKind error_kind_of(F&& f) {
  try {
    f();
  } catch (const kdl::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected kdl::Error";
  return kdl::ErrorKind::io;
}

}  // namespace testing_support
