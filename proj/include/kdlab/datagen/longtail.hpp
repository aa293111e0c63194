#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "kdlab/datagen/dataset.hpp"

namespace kdl::data {

/// Samples kept for class c: max(1, round(n_max * rho^(-c / (C - 1)))).
inline std::vector<std::size_t> longtail_counts(std::size_t n_max, std::size_t classes, double rho) {
  std::vector<std::size_t> out(classes);
  for (std::size_t c = 0; c < classes; ++c) {
    double frac = classes > 1 ? static_cast<double>(c) / static_cast<double>(classes - 1) : 0.0;
    double n = static_cast<double>(n_max) * std::pow(rho, -frac);
    out[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(n)));
  }
  return out;
}

/// Exponential long-tail subsample of a training split. Kept samples are a seeded draw per
/// class and retain their original relative order.
inline Dataset longtail_subsample(const Dataset& train, double rho, std::uint64_t seed) {
  if (!(rho >= 1.0)) fail(ErrorKind::argument, "longtail_subsample: imbalance factor must be >= 1, got ", rho);
  if (train.split != Split::train) fail(ErrorKind::argument, "longtail_subsample: only training splits are subsampled");
  std::vector<std::vector<std::size_t>> by_class(train.classes);
  for (std::size_t i = 0; i < train.size(); ++i) by_class[train.labels[i]].push_back(i);
  std::size_t n_max = 0;
  for (const auto& v : by_class) n_max = std::max(n_max, v.size());
  auto target = longtail_counts(n_max, train.classes, rho);

  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < train.classes; ++c) {
    auto idx = by_class[c];
    Rng rng = keyed_rng(seed, Stream::longtail, c);
    shuffle(idx, rng);
    idx.resize(std::min(idx.size(), target[c]));
    keep.insert(keep.end(), idx.begin(), idx.end());
  }
  std::sort(keep.begin(), keep.end());

  Dataset out = train.empty_like(Split::train);
  out.imbalance_factor = rho;
  out.pixels.reserve(keep.size() * train.image_size());
  for (std::size_t i : keep) out.push_back(train.image(i), train.labels[i]);
  return out;
}

}  // namespace kdl::data
