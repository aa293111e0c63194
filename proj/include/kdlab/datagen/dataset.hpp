#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/image.hpp"

namespace kdl::data {

enum class Split { train, val, val_augmented };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::val_augmented: return "val_augmented";
  }
  return "?";
}

/// N RGB images in [0,1] stored NHWC, with labels in [0, classes).
struct Dataset {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::size_t classes = 0;
  std::vector<float> pixels;
  Labels labels;
  Split split = Split::train;
  double imbalance_factor = 1.0;

  std::size_t size() const { return labels.size(); }
  std::size_t image_size() const { return height * width * channels; }

  Image image(std::size_t i) const {
    Image img(height, width, channels);
    auto first = pixels.begin() + static_cast<std::ptrdiff_t>(i * image_size());
    std::copy(first, first + static_cast<std::ptrdiff_t>(image_size()), img.pixels.begin());
    return img;
  }

  void push_back(const Image& img, std::uint32_t label) {
    if (img.height != height || img.width != width || img.channels != channels)
      fail(ErrorKind::shape, "dataset expects ", height, "x", width, "x", channels, " images");
    pixels.insert(pixels.end(), img.pixels.begin(), img.pixels.end());
    labels.push_back(label);
  }

  Dataset empty_like(Split s) const {
    Dataset d;
    d.height = height;
    d.width = width;
    d.channels = channels;
    d.classes = classes;
    d.split = s;
    d.imbalance_factor = imbalance_factor;
    return d;
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (auto l : labels) ++counts.at(l);
    return counts;
  }

  void validate() const {
    if (pixels.size() != labels.size() * image_size())
      fail(ErrorKind::shape, "dataset holds ", pixels.size(), " pixel values for ", labels.size(), " images");
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] >= classes) fail(ErrorKind::out_of_range, "label ", labels[i], " at index ", i, " >= ", classes);
    for (float v : pixels)
      if (!(v >= 0.0f && v <= 1.0f)) fail(ErrorKind::out_of_range, "pixel value ", v, " outside [0,1]");
  }

  /// Content fingerprint for cache keys.
  std::uint64_t fingerprint() const {
    std::uint64_t h = fnv1a(pixels.data(), pixels.size() * sizeof(float));
    h = fnv1a(labels.data(), labels.size() * sizeof(std::uint32_t), h);
    std::uint64_t dims[4] = {height, width, channels, classes};
    return fnv1a(dims, sizeof dims, h);
  }

  bool operator==(const Dataset&) const = default;
};

struct SplitDataset {
  Dataset train;
  Dataset val;
};

/// Nearest 8-bit level, as stored by the raw format.
inline float quantize8(double v) {
  return static_cast<float>(std::clamp(std::lround(v * 255.0), 0L, 255L)) / 255.0f;
}

}  // namespace kdl::data
