#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>

#include "kdlab/attention_map.hpp"
#include "kdlab/image.hpp"
#include "kdlab/netcore/convnet.hpp"

namespace kdl::net {

/// Lowest index among maximal entries.
template <typename T>
std::size_t argmax_row(const T* row, std::size_t n) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < n; ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

/// Class-activation map from one image's final features [h', w', K]:
/// weight by head row `class_index`, rectify, min-max normalise, bilinearly upsample to
/// out_h x out_w, then rescale so the peak is exactly 1. An all-zero rectified map stays zero.
template <typename T>
AttentionMap cam_from_features(const T* features, std::size_t fh, std::size_t fw, std::size_t k,
                               const Tensor<T>& head_w, std::size_t class_index, std::size_t out_h,
                               std::size_t out_w, double threshold = 0.5) {
  if (head_w.dims.size() != 2 || head_w.dim(1) != k)
    fail(ErrorKind::shape, "cam: head weight ", dims_string(head_w.dims), " does not match ", k, " feature channels");
  if (class_index >= head_w.dim(0))
    fail(ErrorKind::out_of_range, "cam: class index ", class_index, " out of range [0, ", head_w.dim(0), ")");

  BasicImage<double> raw(fh, fw, 1);
  const T* w = head_w.data() + class_index * k;
  for (std::size_t p = 0; p < fh * fw; ++p) {
    double acc = 0.0;
    for (std::size_t c = 0; c < k; ++c) acc += static_cast<double>(w[c]) * static_cast<double>(features[p * k + c]);
    raw.pixels[p] = std::max(acc, 0.0);
  }
  auto [lo_it, hi_it] = std::minmax_element(raw.pixels.begin(), raw.pixels.end());
  const double lo = *lo_it, hi = *hi_it;
  if (hi <= 0.0) return AttentionMap(out_h, out_w, 0.0, threshold);
  for (double& v : raw.pixels) v = hi > lo ? (v - lo) / (hi - lo) : 1.0;

  auto up = resize_bilinear(raw, out_h, out_w);
  AttentionMap map(out_h, out_w, 0.0, threshold);
  double peak = *std::max_element(up.pixels.begin(), up.pixels.end());
  for (std::size_t i = 0; i < map.values.size(); ++i)
    map.values[i] = peak > 0.0 ? std::clamp(up.pixels[i] / peak, 0.0, 1.0) : 0.0;
  return map;
}

/// Attention map of a single image [H, W, Ch] (or [1, H, W, Ch]) for one class.
template <typename T>
AttentionMap cam(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& image,
                 std::size_t class_index, double threshold = 0.5) {
  Tensor<T> batch = image;
  if (batch.dims.size() == 3) batch.dims.insert(batch.dims.begin(), 1);
  if (batch.dims.size() != 4 || batch.dim(0) != 1) fail(ErrorKind::shape, "cam: expects exactly one image");
  if (class_index >= spec.head_classes)
    fail(ErrorKind::out_of_range, "cam: class index ", class_index, " out of range [0, ", spec.head_classes, ")");
  auto res = forward(spec, params, batch);
  const auto& f = res.feature_maps;
  return cam_from_features(f.data(), f.dim(1), f.dim(2), f.dim(3), params.head_w, class_index, spec.height,
                           spec.width, threshold);
}

/// Attention map for the model's own top-1 class (ties -> lowest index).
template <typename T>
AttentionMap cam_predicted(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& image,
                           double threshold = 0.5) {
  Tensor<T> batch = image;
  if (batch.dims.size() == 3) batch.dims.insert(batch.dims.begin(), 1);
  auto res = forward(spec, params, batch);
  std::size_t cls = argmax_row(res.logits.data(), spec.head_classes);
  const auto& f = res.feature_maps;
  return cam_from_features(f.data(), f.dim(1), f.dim(2), f.dim(3), params.head_w, cls, spec.height, spec.width,
                           threshold);
}

}  // namespace kdl::net
