#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "kdlab/datagen/dataset.hpp"

namespace kdl::data {

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  h = h - std::floor(h);
  double hh = h * 6.0;
  int sector = static_cast<int>(hh) % 6;
  double f = hh - std::floor(hh);
  double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  const double table[6][3] = {{v, t, p}, {q, v, p}, {p, v, t}, {p, q, v}, {t, p, v}, {v, p, q}};
  for (int i = 0; i < 3; ++i) rgb[i] = table[sector][i];
}

// Flip-invariant texture families: vertical stripes, horizontal stripes, checker, rings, dots.
inline double texture(std::size_t family, double period, double phase, double dx, double dy) {
  const double w = 2.0 * std::numbers::pi / period;
  switch (family) {
    case 0: return 0.5 + 0.5 * std::cos(w * dx + phase);
    case 1: return 0.5 + 0.5 * std::cos(w * dy + phase);
    case 2: return std::cos(w * dx + phase) * std::cos(w * dy + phase) > 0 ? 1.0 : 0.0;
    case 3: return 0.5 + 0.5 * std::cos(w * std::hypot(dx, dy) + phase);
    default: {
      double c = std::cos(w * dx + phase) + std::cos(w * dy + phase);
      return c > 1.0 ? 1.0 : 0.0;
    }
  }
}

// Shape families: disk, square, diamond. Returns true inside the object.
inline bool inside(std::size_t family, double dx, double dy, double r) {
  switch (family) {
    case 0: return dx * dx + dy * dy <= r * r;
    case 1: return std::abs(dx) <= r * 0.85 && std::abs(dy) <= r * 0.85;
    default: return std::abs(dx) + std::abs(dy) <= r * 1.15;
  }
}

inline Image render(std::size_t cls, std::size_t classes, std::size_t h, std::size_t w, Rng& rng) {
  Image img(h, w, 3);
  const double scale = static_cast<double>(std::min(h, w));

  // Background: muted random colour with a linear gradient.
  double bg[3], bg2[3];
  hsv_to_rgb(uniform01(rng), uniform(rng, 0.05, 0.35), uniform(rng, 0.25, 0.75), bg);
  hsv_to_rgb(uniform01(rng), uniform(rng, 0.05, 0.35), uniform(rng, 0.25, 0.75), bg2);
  const double gx = uniform(rng, -1.0, 1.0), gy = uniform(rng, -1.0, 1.0);

  // Object: class texture family/period, class shape, class hue prior (sometimes replaced).
  const std::size_t tex_family = cls % 5;
  const double period = scale * (cls / 5 % 2 == 0 ? 0.22 : 0.4);
  const std::size_t shape_family = cls % 3;
  double hue = static_cast<double>(cls) / static_cast<double>(classes) + uniform(rng, -0.03, 0.03);
  if (uniform01(rng) < 0.05) hue = uniform01(rng);
  double fg[3];
  hsv_to_rgb(hue, uniform(rng, 0.55, 0.95), uniform(rng, 0.7, 1.0), fg);
  const double radius = scale * uniform(rng, 0.2, 0.3);
  const double cx = uniform(rng, radius * 0.8, static_cast<double>(w) - radius * 0.8);
  const double cy = uniform(rng, radius * 0.8, static_cast<double>(h) - radius * 0.8);
  const double phase = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double noise = 0.04;

  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double u = (static_cast<double>(x) / static_cast<double>(w) - 0.5) * gx +
                       (static_cast<double>(y) / static_cast<double>(h) - 0.5) * gy + 0.5;
      const double dx = static_cast<double>(x) + 0.5 - cx, dy = static_cast<double>(y) + 0.5 - cy;
      const bool obj = inside(shape_family, dx, dy, radius);
      const double t = obj ? texture(tex_family, period, phase, dx, dy) : 0.0;
      for (std::size_t c = 0; c < 3; ++c) {
        double v = obj ? fg[c] * (0.35 + 0.65 * t) : bg[c] * (1.0 - u) + bg2[c] * u;
        v += noise * normal(rng);
        img.at(y, x, c) = quantize8(v);
      }
    }
  }
  return img;
}

}  // namespace detail

/// Balanced, procedurally generated, class-structured RGB images with a deterministic
/// 80/20 train/val split per class. Pixels sit on 8-bit levels.
inline SplitDataset synth_dataset(std::uint64_t seed, std::size_t classes, std::size_t per_class, std::size_t height,
                                  std::size_t width) {
  if (classes < 2) fail(ErrorKind::argument, "synth_dataset: need at least 2 classes");
  if (height < 4 || width < 4) fail(ErrorKind::argument, "synth_dataset: images must be at least 4x4");
  SplitDataset out;
  Dataset proto;
  proto.height = height;
  proto.width = width;
  proto.channels = 3;
  proto.classes = classes;
  out.train = proto.empty_like(Split::train);
  out.val = proto.empty_like(Split::val);

  const std::size_t n_train = per_class - per_class / 5;
  // Interleave classes so that any prefix of the split is roughly balanced.
  for (std::size_t i = 0; i < per_class; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      Rng rng = keyed_rng(seed, Stream::synth, c, i);
      Image img = detail::render(c, classes, height, width, rng);
      (i < n_train ? out.train : out.val).push_back(img, static_cast<std::uint32_t>(c));
    }
  }
  return out;
}

}  // namespace kdl::data
