#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "kdlab/core.hpp"

namespace kdl::net {

struct BlockSpec {
  std::size_t out_channels = 0;
  std::size_t kernel_size = 3;
  std::size_t stride = 1;
  bool pool = false;

  bool operator==(const BlockSpec&) const = default;
};

/// Spatial bookkeeping for one conv block: input -> conv -> relu -> [2x2 average pool].
struct BlockShape {
  std::size_t in_h, in_w, in_c;
  std::size_t conv_h, conv_w;
  std::size_t out_h, out_w, out_c;
  std::size_t pad;
};

/// Conv blocks, then global average pooling and one linear layer to head_classes outputs.
/// Convolutions use zero padding of kernel_size / 2.
struct ConvNetSpec {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 3;
  std::vector<BlockSpec> blocks;
  std::size_t head_classes = 10;

  bool operator==(const ConvNetSpec&) const = default;

  std::vector<BlockShape> shapes() const {
    if (height == 0 || width == 0 || channels == 0) fail(ErrorKind::shape, "network input dims must be positive");
    if (head_classes < 2) fail(ErrorKind::shape, "head_classes must be >= 2, got ", head_classes);
    if (blocks.empty()) fail(ErrorKind::shape, "network needs at least one conv block");
    std::vector<BlockShape> out;
    std::size_t h = height, w = width, c = channels;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      if (b.out_channels == 0 || b.kernel_size == 0 || b.stride == 0)
        fail(ErrorKind::shape, "block ", i, ": channels, kernel and stride must be positive");
      BlockShape s{};
      s.in_h = h;
      s.in_w = w;
      s.in_c = c;
      s.pad = b.kernel_size / 2;
      if (h + 2 * s.pad < b.kernel_size || w + 2 * s.pad < b.kernel_size)
        fail(ErrorKind::shape, "block ", i, ": kernel ", b.kernel_size, " larger than padded input ", h, "x", w);
      s.conv_h = (h + 2 * s.pad - b.kernel_size) / b.stride + 1;
      s.conv_w = (w + 2 * s.pad - b.kernel_size) / b.stride + 1;
      s.out_h = b.pool ? s.conv_h / 2 : s.conv_h;
      s.out_w = b.pool ? s.conv_w / 2 : s.conv_w;
      s.out_c = b.out_channels;
      if (s.out_h == 0 || s.out_w == 0)
        fail(ErrorKind::shape, "block ", i, ": spatial dims collapse to ", s.out_h, "x", s.out_w);
      out.push_back(s);
      h = s.out_h;
      w = s.out_w;
      c = s.out_c;
    }
    return out;
  }

  std::size_t feature_channels() const { return blocks.empty() ? 0 : blocks.back().out_channels; }

  std::string to_text() const {
    std::ostringstream oss;
    oss << "input " << height << ' ' << width << ' ' << channels << '\n';
    for (const auto& b : blocks)
      oss << "block " << b.out_channels << ' ' << b.kernel_size << ' ' << b.stride << ' ' << (b.pool ? 1 : 0) << '\n';
    oss << "head " << head_classes << '\n';
    return oss.str();
  }

  static ConvNetSpec from_text(const std::string& text) {
    ConvNetSpec spec;
    spec.blocks.clear();
    std::istringstream iss(text);
    std::string word;
    bool saw_input = false, saw_head = false;
    while (iss >> word) {
      if (word == "input") {
        iss >> spec.height >> spec.width >> spec.channels;
        saw_input = true;
      } else if (word == "block") {
        BlockSpec b;
        int pool = 0;
        iss >> b.out_channels >> b.kernel_size >> b.stride >> pool;
        b.pool = pool != 0;
        spec.blocks.push_back(b);
      } else if (word == "head") {
        iss >> spec.head_classes;
        saw_head = true;
      } else {
        fail(ErrorKind::schema, "unknown network header token '", word, "'");
      }
      if (!iss) fail(ErrorKind::schema, "malformed network header near '", word, "'");
    }
    if (!saw_input || !saw_head) fail(ErrorKind::schema, "network header lacks input or head line");
    spec.shapes();
    return spec;
  }
};

inline ConvNetSpec default_teacher_spec(std::size_t h, std::size_t w, std::size_t c, std::size_t classes) {
  return ConvNetSpec{h, w, c, {{32, 3, 2, true}, {64, 3, 1, true}, {64, 3, 1, false}}, classes};
}

inline ConvNetSpec default_student_spec(std::size_t h, std::size_t w, std::size_t c, std::size_t classes) {
  return ConvNetSpec{h, w, c, {{16, 3, 2, true}, {32, 3, 1, true}}, classes};
}

template <typename T>
struct ConvParams {
  Tensor<T> kernel;  // [k, k, in_c, out_c]
  Tensor<T> bias;    // [out_c]
  bool operator==(const ConvParams&) const = default;
};

/// Parameters in declaration order: conv kernels/biases block by block, then head W [C x K], head b [C].
template <typename T>
struct ModelParams {
  std::vector<ConvParams<T>> convs;
  Tensor<T> head_w;
  Tensor<T> head_b;

  bool operator==(const ModelParams&) const = default;

  std::vector<Tensor<T>*> tensors() {
    std::vector<Tensor<T>*> out;
    for (auto& c : convs) {
      out.push_back(&c.kernel);
      out.push_back(&c.bias);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }
  std::vector<const Tensor<T>*> tensors() const {
    std::vector<const Tensor<T>*> out;
    for (const auto& c : convs) {
      out.push_back(&c.kernel);
      out.push_back(&c.bias);
    }
    out.push_back(&head_w);
    out.push_back(&head_b);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* t : tensors()) n += t->size();
    return n;
  }

  static ModelParams zeros(const ConvNetSpec& spec) {
    ModelParams p;
    for (const auto& s : spec.shapes()) {
      std::size_t k = spec.blocks[p.convs.size()].kernel_size;
      p.convs.push_back({Tensor<T>({k, k, s.in_c, s.out_c}), Tensor<T>({s.out_c})});
    }
    p.head_w = Tensor<T>({spec.head_classes, spec.feature_channels()});
    p.head_b = Tensor<T>({spec.head_classes});
    return p;
  }
};

template <typename To, typename From>
ModelParams<To> params_cast(const ModelParams<From>& p) {
  ModelParams<To> out;
  for (const auto& c : p.convs) out.convs.push_back({tensor_cast<To>(c.kernel), tensor_cast<To>(c.bias)});
  out.head_w = tensor_cast<To>(p.head_w);
  out.head_b = tensor_cast<To>(p.head_b);
  return out;
}

template <typename T>
void check_params(const ConvNetSpec& spec, const ModelParams<T>& params) {
  auto expected = ModelParams<T>::zeros(spec);
  if (params.convs.size() != expected.convs.size())
    fail(ErrorKind::shape, "params have ", params.convs.size(), " conv blocks, network has ", expected.convs.size());
  for (std::size_t i = 0; i < expected.convs.size(); ++i) {
    if (params.convs[i].kernel.dims != expected.convs[i].kernel.dims)
      fail(ErrorKind::shape, "conv block ", i, " kernel is ", dims_string(params.convs[i].kernel.dims), ", expected ",
           dims_string(expected.convs[i].kernel.dims));
    if (params.convs[i].bias.dims != expected.convs[i].bias.dims)
      fail(ErrorKind::shape, "conv block ", i, " bias is ", dims_string(params.convs[i].bias.dims), ", expected ",
           dims_string(expected.convs[i].bias.dims));
  }
  if (params.head_w.dims != expected.head_w.dims)
    fail(ErrorKind::shape, "head weight is ", dims_string(params.head_w.dims), ", expected ",
         dims_string(expected.head_w.dims));
  if (params.head_b.dims != expected.head_b.dims)
    fail(ErrorKind::shape, "head bias is ", dims_string(params.head_b.dims), ", expected ",
         dims_string(expected.head_b.dims));
}

/// He-normal conv kernels, 1/sqrt(K) head weights, zero biases.
template <typename T>
ModelParams<T> init_params(const ConvNetSpec& spec, std::uint64_t seed) {
  auto p = ModelParams<T>::zeros(spec);
  Rng rng = keyed_rng(seed, Stream::init);
  for (auto& c : p.convs) {
    double fan_in = static_cast<double>(c.kernel.dim(0) * c.kernel.dim(1) * c.kernel.dim(2));
    double sd = std::sqrt(2.0 / fan_in);
    for (auto& v : c.kernel.values) v = static_cast<T>(sd * normal(rng));
  }
  double sd = std::sqrt(1.0 / static_cast<double>(spec.feature_channels()));
  for (auto& v : p.head_w.values) v = static_cast<T>(sd * normal(rng));
  return p;
}

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;

template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
struct BlockCache {
  RowMat<T> cols;     // im2col patches [N*conv_h*conv_w, k*k*in_c]
  RowMat<T> preact;   // conv output before relu [N*conv_h*conv_w, out_c]
};

/// Intermediate activations retained by forward_cached for backward_cached.
template <typename T>
struct ForwardCache {
  std::size_t batch = 0;
  std::vector<BlockCache<T>> blocks;
  Tensor<T> features;  // [N, h', w', K], final block output before global pooling
  RowMat<T> pooled;    // [N, K]
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;        // [N, C]
  Tensor<T> feature_maps;  // [N, h', w', K]
};

namespace detail {

template <typename T>
void im2col(const T* in, std::size_t n, const BlockShape& s, std::size_t k, std::size_t stride, RowMat<T>& cols) {
  const std::size_t patch = k * k * s.in_c;
  cols.resize(static_cast<Eigen::Index>(n * s.conv_h * s.conv_w), static_cast<Eigen::Index>(patch));
  T* out = cols.data();
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = in + b * s.in_h * s.in_w * s.in_c;
    for (std::size_t oy = 0; oy < s.conv_h; ++oy) {
      for (std::size_t ox = 0; ox < s.conv_w; ++ox) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
            if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(s.in_h) ||
                ix >= static_cast<std::ptrdiff_t>(s.in_w)) {
              std::fill(out, out + s.in_c, T(0));
            } else {
              const T* src = img + (static_cast<std::size_t>(iy) * s.in_w + static_cast<std::size_t>(ix)) * s.in_c;
              std::copy(src, src + s.in_c, out);
            }
            out += s.in_c;
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const RowMat<T>& dcols, std::size_t n, const BlockShape& s, std::size_t k, std::size_t stride, T* din) {
  std::fill(din, din + n * s.in_h * s.in_w * s.in_c, T(0));
  const T* src = dcols.data();
  for (std::size_t b = 0; b < n; ++b) {
    T* img = din + b * s.in_h * s.in_w * s.in_c;
    for (std::size_t oy = 0; oy < s.conv_h; ++oy) {
      for (std::size_t ox = 0; ox < s.conv_w; ++ox) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(s.pad);
          for (std::size_t kx = 0; kx < k; ++kx) {
            auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(s.pad);
            if (iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(s.in_h) &&
                ix < static_cast<std::ptrdiff_t>(s.in_w)) {
              T* dst = img + (static_cast<std::size_t>(iy) * s.in_w + static_cast<std::size_t>(ix)) * s.in_c;
              for (std::size_t c = 0; c < s.in_c; ++c) dst[c] += src[c];
            }
            src += s.in_c;
          }
        }
      }
    }
  }
}

template <typename T>
void avg_pool2(const T* in, std::size_t n, const BlockShape& s, T* out) {
  const std::size_t c = s.out_c;
  for (std::size_t b = 0; b < n; ++b) {
    const T* img = in + b * s.conv_h * s.conv_w * c;
    T* dst = out + b * s.out_h * s.out_w * c;
    for (std::size_t y = 0; y < s.out_h; ++y)
      for (std::size_t x = 0; x < s.out_w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          auto at = [&](std::size_t yy, std::size_t xx) { return img[(yy * s.conv_w + xx) * c + ch]; };
          dst[(y * s.out_w + x) * c + ch] =
              T(0.25) * (at(2 * y, 2 * x) + at(2 * y, 2 * x + 1) + at(2 * y + 1, 2 * x) + at(2 * y + 1, 2 * x + 1));
        }
  }
}

template <typename T>
void avg_pool2_backward(const T* dout, std::size_t n, const BlockShape& s, T* din) {
  const std::size_t c = s.out_c;
  // Odd conv sizes leave a last row/column the pool never reads.
  if (s.conv_h % 2 || s.conv_w % 2) std::fill(din, din + n * s.conv_h * s.conv_w * c, T(0));
  for (std::size_t b = 0; b < n; ++b) {
    T* img = din + b * s.conv_h * s.conv_w * c;
    const T* src = dout + b * s.out_h * s.out_w * c;
    for (std::size_t y = 0; y < s.out_h; ++y)
      for (std::size_t x = 0; x < s.out_w; ++x)
        for (std::size_t ch = 0; ch < c; ++ch) {
          T g = T(0.25) * src[(y * s.out_w + x) * c + ch];
          img[((2 * y) * s.conv_w + 2 * x) * c + ch] = g;
          img[((2 * y) * s.conv_w + 2 * x + 1) * c + ch] = g;
          img[((2 * y + 1) * s.conv_w + 2 * x) * c + ch] = g;
          img[((2 * y + 1) * s.conv_w + 2 * x + 1) * c + ch] = g;
        }
  }
}

inline void check_batch(const ConvNetSpec& spec, const std::vector<std::size_t>& dims) {
  if (dims.size() != 4 || dims[1] != spec.height || dims[2] != spec.width || dims[3] != spec.channels)
    fail(ErrorKind::shape, "input layer: batch is ", dims_string(dims), ", network expects [N x ", spec.height, "x",
         spec.width, "x", spec.channels, "]");
  if (dims[0] == 0) fail(ErrorKind::shape, "input layer: empty batch");
}

}  // namespace detail

/// Forward pass retaining every activation needed by backward_cached.
template <typename T>
Tensor<T> forward_cached(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch,
                         ForwardCache<T>& cache) {
  detail::check_batch(spec, batch.dims);
  check_params(spec, params);
  const auto shapes = spec.shapes();
  const std::size_t n = batch.dim(0);
  cache.batch = n;
  cache.blocks.resize(shapes.size());

  std::vector<T> current, next;
  const T* src = batch.data();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const auto& s = shapes[i];
    const auto& bs = spec.blocks[i];
    auto& bc = cache.blocks[i];
    detail::im2col(src, n, s, bs.kernel_size, bs.stride, bc.cols);
    const RowMat<T> w = ConstMatMap<T>(params.convs[i].kernel.data(), static_cast<Eigen::Index>(bc.cols.cols()),
                                       static_cast<Eigen::Index>(s.out_c));
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bias(params.convs[i].bias.data(),
                                                               static_cast<Eigen::Index>(s.out_c));
    bc.preact.noalias() = bc.cols * w;
    bc.preact.rowwise() += bias;
    next.resize(static_cast<std::size_t>(bc.preact.size()));
    MatMap<T>(next.data(), bc.preact.rows(), bc.preact.cols()) = bc.preact.cwiseMax(T(0));
    if (bs.pool) {
      current.resize(n * s.out_h * s.out_w * s.out_c);
      detail::avg_pool2(next.data(), n, s, current.data());
    } else {
      current.swap(next);
    }
    src = current.data();
  }

  const auto& last = shapes.back();
  const std::size_t k = last.out_c;
  const std::size_t area = last.out_h * last.out_w;
  cache.features = Tensor<T>({n, last.out_h, last.out_w, k}, std::move(current));
  cache.pooled.setZero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  for (std::size_t b = 0; b < n; ++b) {
    const T* f = cache.features.data() + b * area * k;
    for (std::size_t p = 0; p < area; ++p)
      for (std::size_t c = 0; c < k; ++c) cache.pooled(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) += f[p * k + c];
  }
  cache.pooled /= static_cast<T>(area);

  const RowMat<T> hw =
      ConstMatMap<T>(params.head_w.data(), static_cast<Eigen::Index>(spec.head_classes), static_cast<Eigen::Index>(k));
  Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> hb(params.head_b.data(),
                                                           static_cast<Eigen::Index>(spec.head_classes));
  Tensor<T> logits({n, spec.head_classes});
  MatMap<T> out(logits.data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.head_classes));
  RowMat<T> z = cache.pooled * hw.transpose();
  z.rowwise() += hb;
  out = z;
  if (!logits.all_finite()) fail(ErrorKind::numeric, "forward produced non-finite logits");
  return logits;
}

template <typename T>
ForwardResult<T> forward(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch) {
  ForwardCache<T> cache;
  Tensor<T> logits = forward_cached(spec, params, batch, cache);
  return {std::move(logits), std::move(cache.features)};
}

/// Reverse pass over a cache filled by forward_cached. `source` names the loss in diagnostics.
template <typename T>
ModelParams<T> backward_cached(const ConvNetSpec& spec, const ModelParams<T>& params, ForwardCache<T>& cache,
                               const Tensor<T>& dlogits, std::string_view source = "loss") {
  const auto shapes = spec.shapes();
  const std::size_t n = cache.batch;
  if (dlogits.dims != std::vector<std::size_t>{n, spec.head_classes})
    fail(ErrorKind::shape, "head layer: upstream gradient is ", dlogits.dims.size() ? dims_string(dlogits.dims) : "[]",
         ", expected [", n, "x", spec.head_classes, "]");
  if (!dlogits.all_finite()) fail(ErrorKind::numeric, "non-finite upstream gradient from ", source);

  ModelParams<T> grads = ModelParams<T>::zeros(spec);
  const std::size_t k = spec.feature_channels();
  const auto C = static_cast<Eigen::Index>(spec.head_classes);
  const RowMat<T> dz = ConstMatMap<T>(dlogits.data(), static_cast<Eigen::Index>(n), C);
  const RowMat<T> hw = ConstMatMap<T>(params.head_w.data(), C, static_cast<Eigen::Index>(k));
  const RowMat<T> dhw = dz.transpose() * cache.pooled;
  MatMap<T>(grads.head_w.data(), C, static_cast<Eigen::Index>(k)) = dhw;
  const RowMat<T> dhb = dz.colwise().sum();
  Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads.head_b.data(), C) = dhb;
  RowMat<T> dpooled = dz * hw;

  const auto& last = shapes.back();
  const std::size_t area = last.out_h * last.out_w;
  std::vector<T> dcur(n * area * k);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t p = 0; p < area; ++p)
      for (std::size_t c = 0; c < k; ++c)
        dcur[(b * area + p) * k + c] =
            dpooled(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(c)) / static_cast<T>(area);

  for (std::size_t ii = shapes.size(); ii-- > 0;) {
    const auto& s = shapes[ii];
    const auto& bs = spec.blocks[ii];
    auto& bc = cache.blocks[ii];
    const auto rows = static_cast<Eigen::Index>(n * s.conv_h * s.conv_w);
    RowMat<T> dpre(rows, static_cast<Eigen::Index>(s.out_c));
    if (bs.pool) {
      detail::avg_pool2_backward(dcur.data(), n, s, dpre.data());
    } else {
      std::copy(dcur.begin(), dcur.end(), dpre.data());
    }
    dpre = (bc.preact.array() > T(0)).select(dpre, T(0));

    const auto patch = bc.cols.cols();
    const RowMat<T> dw = bc.cols.transpose() * dpre;
    MatMap<T>(grads.convs[ii].kernel.data(), patch, static_cast<Eigen::Index>(s.out_c)) = dw;
    const RowMat<T> db = dpre.colwise().sum();
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(grads.convs[ii].bias.data(), static_cast<Eigen::Index>(s.out_c)) =
        db;
    if (ii == 0) break;
    const RowMat<T> w = ConstMatMap<T>(params.convs[ii].kernel.data(), patch, static_cast<Eigen::Index>(s.out_c));
    RowMat<T> dcols = dpre * w.transpose();
    dcur.resize(n * s.in_h * s.in_w * s.in_c);
    detail::col2im(dcols, n, s, bs.kernel_size, bs.stride, dcur.data());
  }

  for (const auto* t : grads.tensors())
    if (!t->all_finite()) fail(ErrorKind::numeric, "backward produced non-finite gradients from ", source);
  return grads;
}

template <typename T>
ModelParams<T> backward(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch,
                        const Tensor<T>& dlogits, std::string_view source = "loss") {
  ForwardCache<T> cache;
  forward_cached(spec, params, batch, cache);
  return backward_cached(spec, params, cache, dlogits, source);
}

}  // namespace kdl::net
