#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "kdlab/datagen/dataset.hpp"

namespace kdl::data {

enum class PolicyKind { identity, weak, strong };

inline const char* to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::identity: return "identity";
    case PolicyKind::weak: return "weak";
    case PolicyKind::strong: return "strong";
  }
  return "?";
}

inline PolicyKind policy_from_string(const std::string& s) {
  if (s == "identity") return PolicyKind::identity;
  if (s == "weak") return PolicyKind::weak;
  if (s == "strong") return PolicyKind::strong;
  fail(ErrorKind::config, "unknown augmentation policy '", s, "'");
}

struct WeakParams {
  std::size_t pad = 4;
  double flip_prob = 0.5;
  double jitter = 0.2;  // brightness and contrast factors drawn from [1 - jitter, 1 + jitter]
};

struct StrongParams {
  std::size_t ops = 2;
  double magnitude = 5.0;  // [0, 10]; 9 wipes out most of the colour cue on 32x32 synth images
};

/// A strong policy runs the weak pipeline first and then `ops` randomly drawn operations.
struct AugmentPolicy {
  PolicyKind kind = PolicyKind::identity;
  WeakParams weak;
  StrongParams strong;
  std::uint64_t stream = 0;
};

enum class StrongOp { rotate, translate_x, translate_y, shear_x, solarize, posterize, contrast, brightness, sharpness, cutout };

inline constexpr std::array<StrongOp, 10> strong_op_set = {
    StrongOp::rotate,    StrongOp::translate_x, StrongOp::translate_y, StrongOp::shear_x,   StrongOp::solarize,
    StrongOp::posterize, StrongOp::contrast,    StrongOp::brightness,  StrongOp::sharpness, StrongOp::cutout};

inline const char* to_string(StrongOp op) {
  constexpr const char* names[] = {"rotate",   "translate_x", "translate_y", "shear_x",   "solarize",
                                   "posterize", "contrast",   "brightness",  "sharpness", "cutout"};
  return names[static_cast<int>(op)];
}

/// RNG for one (seed, stream id, epoch, sample) tuple.
inline Rng augment_rng(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t epoch, std::uint64_t index) {
  return Rng(stream_key(seed, stream_id, epoch, index));
}

namespace detail {

inline void clamp01(Image& img) {
  for (float& v : img.pixels) v = std::clamp(v, 0.0f, 1.0f);
}

inline std::size_t reflect(std::ptrdiff_t i, std::size_t n) {
  if (n == 1) return 0;
  const auto period = static_cast<std::ptrdiff_t>(2 * (n - 1));
  i %= period;
  if (i < 0) i += period;
  return static_cast<std::size_t>(i < static_cast<std::ptrdiff_t>(n) ? i : period - i);
}

inline void flip_horizontal(Image& img) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width / 2; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) std::swap(img.at(y, x, c), img.at(y, img.width - 1 - x, c));
}

inline double mean_luma(const Image& img) {
  double s = 0.0;
  for (float v : img.pixels) s += v;
  return img.pixels.empty() ? 0.0 : s / static_cast<double>(img.pixels.size());
}

inline void scale_brightness(Image& img, double f) {
  for (float& v : img.pixels) v = static_cast<float>(v * f);
}

inline void scale_contrast(Image& img, double f) {
  const double m = mean_luma(img);
  for (float& v : img.pixels) v = static_cast<float>(m + f * (v - m));
}

// Inverse-mapped affine warp: dst(x, y) = src(a*x + b*y + c, d*x + e*y + f), bilinear, grey fill.
inline Image warp(const Image& src, const std::array<double, 6>& m, float fill = 0.5f) {
  Image out(src.height, src.width, src.channels, fill);
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      const double xd = static_cast<double>(x), yd = static_cast<double>(y);
      const double sx = m[0] * xd + m[1] * yd + m[2];
      const double sy = m[3] * xd + m[4] * yd + m[5];
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double wx = sx - fx, wy = sy - fy;
      const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy);
      for (std::size_t c = 0; c < src.channels; ++c) {
        auto sample = [&](std::ptrdiff_t yy, std::ptrdiff_t xx) -> double {
          if (yy < 0 || xx < 0 || yy >= static_cast<std::ptrdiff_t>(src.height) ||
              xx >= static_cast<std::ptrdiff_t>(src.width))
            return fill;
          return src.at(static_cast<std::size_t>(yy), static_cast<std::size_t>(xx), c);
        };
        double v = (1 - wy) * ((1 - wx) * sample(y0, x0) + (wx > 0 ? wx * sample(y0, x0 + 1) : 0.0));
        if (wy > 0) v += wy * ((1 - wx) * sample(y0 + 1, x0) + (wx > 0 ? wx * sample(y0 + 1, x0 + 1) : 0.0));
        out.at(y, x, c) = static_cast<float>(v);
      }
    }
  }
  return out;
}

inline Image rotate(const Image& img, double degrees) {
  const double a = degrees * std::numbers::pi / 180.0;
  const double cx = (static_cast<double>(img.width) - 1) / 2, cy = (static_cast<double>(img.height) - 1) / 2;
  const double c = std::cos(a), s = std::sin(a);
  // source = R^-1 (dst - centre) + centre
  return warp(img, {c, s, cx - c * cx - s * cy, -s, c, cy + s * cx - c * cy});
}

inline Image sharpen(const Image& img, double f) {
  Image blur = img;
  for (std::size_t y = 1; y + 1 < img.height; ++y)
    for (std::size_t x = 1; x + 1 < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        double s = 5.0 * img.at(y, x, c);
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx)
            if (dy || dx) s += img.at(y + dy, x + dx, c);
        blur.at(y, x, c) = static_cast<float>(s / 13.0);
      }
  Image out = img;
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = static_cast<float>(blur.pixels[i] + f * (img.pixels[i] - blur.pixels[i]));
  return out;
}

}  // namespace detail

/// Applies one strong op at magnitude m in [0,10] (r = m/10). Parameter maps:
///   rotate ±30r deg, translate ±0.3r * size, shear-x ±0.3r, solarize above 1-r,
///   posterize to 8-round(4r) bits, contrast/brightness/sharpness factor 1 ± 0.9r,
///   cutout square of side round(0.5r * min(H, W)) filled with grey.
/// Every op is the identity at m = 0 (up to float resampling error).
inline Image apply_strong_op(const Image& img, StrongOp op, double magnitude, Rng& rng) {
  const double r = std::clamp(magnitude, 0.0, 10.0) / 10.0;
  const double sign = uniform01(rng) < 0.5 ? -1.0 : 1.0;
  Image out = img;
  switch (op) {
    case StrongOp::rotate:
      out = detail::rotate(img, sign * 30.0 * r);
      break;
    case StrongOp::translate_x:
      out = detail::warp(img, {1, 0, sign * 0.3 * r * static_cast<double>(img.width), 0, 1, 0});
      break;
    case StrongOp::translate_y:
      out = detail::warp(img, {1, 0, 0, 0, 1, sign * 0.3 * r * static_cast<double>(img.height)});
      break;
    case StrongOp::shear_x: {
      const double sh = sign * 0.3 * r, cy = (static_cast<double>(img.height) - 1) / 2;
      out = detail::warp(img, {1, sh, -sh * cy, 0, 1, 0});
      break;
    }
    case StrongOp::solarize: {
      const double thr = 1.0 - r;
      for (float& v : out.pixels)
        if (v > thr) v = 1.0f - v;
      break;
    }
    case StrongOp::posterize: {
      const long bits = 8 - std::lround(4.0 * r);
      if (bits >= 8) break;
      const long mask = (0xff << (8 - bits)) & 0xff;
      for (float& v : out.pixels) v = static_cast<float>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f) & mask) / 255.0f;
      break;
    }
    case StrongOp::contrast:
      if (r > 0) detail::scale_contrast(out, 1.0 + sign * 0.9 * r);
      break;
    case StrongOp::brightness:
      if (r > 0) detail::scale_brightness(out, 1.0 + sign * 0.9 * r);
      break;
    case StrongOp::sharpness:
      if (r > 0) out = detail::sharpen(img, 1.0 + sign * 0.9 * r);
      break;
    case StrongOp::cutout: {
      const auto side = static_cast<std::size_t>(std::lround(0.5 * r * static_cast<double>(std::min(img.height, img.width))));
      if (side == 0) break;
      const auto half = static_cast<std::ptrdiff_t>(side / 2);
      const auto y0 = static_cast<std::ptrdiff_t>(uniform_index(rng, img.height)) - half;
      const auto x0 = static_cast<std::ptrdiff_t>(uniform_index(rng, img.width)) - half;
      const auto h = static_cast<std::ptrdiff_t>(img.height), w = static_cast<std::ptrdiff_t>(img.width);
      const auto s = static_cast<std::ptrdiff_t>(side);
      for (std::ptrdiff_t y = std::max<std::ptrdiff_t>(0, y0); y < std::min(h, y0 + s); ++y)
        for (std::ptrdiff_t x = std::max<std::ptrdiff_t>(0, x0); x < std::min(w, x0 + s); ++x)
          for (std::size_t c = 0; c < img.channels; ++c)
            out.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x), c) = 0.5f;
      break;
    }
  }
  detail::clamp01(out);
  return out;
}

/// Reflect-pad and randomly crop back to size, flip with flip_prob, jitter brightness and contrast.
inline Image weak_augment(const Image& img, const WeakParams& p, Rng& rng) {
  Image out = img;
  if (p.pad > 0) {
    const auto pad = static_cast<std::ptrdiff_t>(p.pad);
    const auto dy = static_cast<std::ptrdiff_t>(uniform_index(rng, 2 * p.pad + 1)) - pad;
    const auto dx = static_cast<std::ptrdiff_t>(uniform_index(rng, 2 * p.pad + 1)) - pad;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        std::size_t sy = detail::reflect(static_cast<std::ptrdiff_t>(y) + dy, img.height);
        std::size_t sx = detail::reflect(static_cast<std::ptrdiff_t>(x) + dx, img.width);
        for (std::size_t c = 0; c < img.channels; ++c) out.at(y, x, c) = img.at(sy, sx, c);
      }
  }
  if (p.flip_prob > 0.0 && uniform01(rng) < p.flip_prob) detail::flip_horizontal(out);
  if (p.jitter > 0.0) {
    detail::scale_brightness(out, 1.0 + uniform(rng, -p.jitter, p.jitter));
    detail::scale_contrast(out, 1.0 + uniform(rng, -p.jitter, p.jitter));
  }
  detail::clamp01(out);
  return out;
}

/// Draws `ops` operations uniformly with replacement and applies them in order.
inline Image strong_augment(const Image& img, const StrongParams& p, Rng& rng) {
  Image out = img;
  for (std::size_t i = 0; i < p.ops; ++i) {
    StrongOp op = strong_op_set[uniform_index(rng, strong_op_set.size())];
    out = apply_strong_op(out, op, p.magnitude, rng);
  }
  return out;
}

inline Image augment(const Image& img, const AugmentPolicy& policy, Rng& rng) {
  switch (policy.kind) {
    case PolicyKind::identity: return img;
    case PolicyKind::weak: return weak_augment(img, policy.weak, rng);
    case PolicyKind::strong: return strong_augment(weak_augment(img, policy.weak, rng), policy.strong, rng);
  }
  return img;
}

enum class Side { left, right };

/// Columns [0, W/2) or [W/2, W), bilinearly resized back to H x W.
inline Image half_crop(const Image& img, Side side) {
  if (img.width < 2) fail(ErrorKind::shape, "half_crop: width must be >= 2");
  const std::size_t mid = img.width / 2;
  Image half = side == Side::left ? crop_columns(img, 0, mid) : crop_columns(img, mid, img.width);
  return resize_bilinear(half, img.height, img.width);
}

/// D'_val: the student's policy applied once per validation image under a fixed seed.
inline Dataset augmented_val_set(const Dataset& val, const AugmentPolicy& policy, std::uint64_t seed) {
  if (val.split != Split::val) fail(ErrorKind::argument, "augmented_val_set: input must be a validation split");
  Dataset out = val.empty_like(Split::val_augmented);
  out.pixels.reserve(val.pixels.size());
  for (std::size_t i = 0; i < val.size(); ++i) {
    Rng rng = augment_rng(seed, static_cast<std::uint64_t>(Stream::val_augment) ^ (policy.stream << 8), 0, i);
    out.push_back(augment(val.image(i), policy, rng), val.labels[i]);
  }
  return out;
}

}  // namespace kdl::data
