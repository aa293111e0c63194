#pragma once

#include <algorithm>
#include <cstddef>
#include <vector>

#include "kdlab/core.hpp"

namespace kdl {

/// Spatial saliency grid with values in [0,1]. The binary mask keeps cells >= threshold * max.
struct AttentionMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;
  double threshold = 0.5;

  AttentionMap() = default;
  AttentionMap(std::size_t h, std::size_t w, double fill = 0.0, double theta = 0.5)
      : height(h), width(w), values(h * w, fill), threshold(theta) {}

  double& at(std::size_t y, std::size_t x) { return values[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }

  double max_value() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }

  std::vector<bool> mask() const {
    std::vector<bool> m(values.size(), false);
    const double peak = max_value();
    if (peak <= 0.0) return m;
    const double cut = threshold * peak;
    for (std::size_t i = 0; i < values.size(); ++i) m[i] = values[i] >= cut;
    return m;
  }

  bool operator==(const AttentionMap&) const = default;
};

}  // namespace kdl
