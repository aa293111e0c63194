#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "kdlab/core.hpp"

namespace kdl {

/// HWC image with interleaved channels.
template <typename T>
struct BasicImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<T> pixels;

  BasicImage() = default;
  BasicImage(std::size_t h, std::size_t w, std::size_t c, T fill = T(0))
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  T& at(std::size_t y, std::size_t x, std::size_t ch) { return pixels[(y * width + x) * channels + ch]; }
  const T& at(std::size_t y, std::size_t x, std::size_t ch) const {
    return pixels[(y * width + x) * channels + ch];
  }

  bool operator==(const BasicImage&) const = default;
};

using Image = BasicImage<float>;

// Half-pixel-centre convention (align_corners = false), edge clamped.
template <typename T>
BasicImage<T> resize_bilinear(const BasicImage<T>& src, std::size_t out_h, std::size_t out_w) {
  if (src.height == 0 || src.width == 0) fail(ErrorKind::shape, "resize_bilinear: empty source image");
  BasicImage<T> out(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / static_cast<double>(out_h);
  const double sx = static_cast<double>(src.width) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(src.height - 1));
    auto y0 = static_cast<std::size_t>(fy);
    std::size_t y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(src.width - 1));
      auto x0 = static_cast<std::size_t>(fx);
      std::size_t x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < src.channels; ++c) {
        double top = (1.0 - wx) * src.at(y0, x0, c) + wx * src.at(y0, x1, c);
        double bot = (1.0 - wx) * src.at(y1, x0, c) + wx * src.at(y1, x1, c);
        out.at(y, x, c) = static_cast<T>((1.0 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

// Columns [x_begin, x_end) of src, all rows.
template <typename T>
BasicImage<T> crop_columns(const BasicImage<T>& src, std::size_t x_begin, std::size_t x_end) {
  BasicImage<T> out(src.height, x_end - x_begin, src.channels);
  for (std::size_t y = 0; y < src.height; ++y)
    for (std::size_t x = x_begin; x < x_end; ++x)
      for (std::size_t c = 0; c < src.channels; ++c) out.at(y, x - x_begin, c) = src.at(y, x, c);
  return out;
}

}  // namespace kdl
