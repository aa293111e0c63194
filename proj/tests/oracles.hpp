#pragma once

// Independent brute-force implementations used as test oracles. Deliberately naive:
// nested loops, no shared helpers with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/harness/stats.hpp"
#include "kdlab/metrics/metrics.hpp"
#include "kdlab/netcore/convnet.hpp"

namespace oracles {

inline kdl::Tensor<double> random_tensor(std::vector<std::size_t> dims, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  kdl::Tensor<double> t(std::move(dims));
  for (auto& v : t.values) v = u(rng);
  return t;
}

inline std::vector<double> random_simplex(std::size_t n, std::mt19937_64& rng) {
  std::exponential_distribution<double> e(1.0);
  std::vector<double> p(n);
  double s = 0;
  for (auto& v : p) s += (v = e(rng));
  for (auto& v : p) v /= s;
  return p;
}

// Straightforward reference: explicit loops over every output element, no im2col.
struct RefOut {
  std::vector<double> logits;
  std::vector<double> features;
};

inline RefOut reference_forward(const kdl::net::ConvNetSpec& spec, const kdl::net::ModelParams<double>& p, const kdl::Tensor<double>& x) {
  const std::size_t n = x.dim(0);
  std::size_t h = spec.height, w = spec.width, c = spec.channels;
  std::vector<double> cur = x.values;
  for (std::size_t bi = 0; bi < spec.blocks.size(); ++bi) {
    const auto& b = spec.blocks[bi];
    const auto& K = p.convs[bi].kernel;
    const auto& B = p.convs[bi].bias;
    const long pad = static_cast<long>(b.kernel_size / 2);
    const std::size_t oh = (h + 2 * pad - b.kernel_size) / b.stride + 1;
    const std::size_t ow = (w + 2 * pad - b.kernel_size) / b.stride + 1;
    const std::size_t oc = b.out_channels;
    std::vector<double> conv(n * oh * ow * oc);
    for (std::size_t img = 0; img < n; ++img)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t xx = 0; xx < ow; ++xx)
          for (std::size_t o = 0; o < oc; ++o) {
            double acc = B[o];
            for (std::size_t ky = 0; ky < b.kernel_size; ++ky)
              for (std::size_t kx = 0; kx < b.kernel_size; ++kx) {
                long sy = static_cast<long>(y * b.stride + ky) - pad;
                long sx = static_cast<long>(xx * b.stride + kx) - pad;
                if (sy < 0 || sx < 0 || sy >= static_cast<long>(h) || sx >= static_cast<long>(w)) continue;
                for (std::size_t ci = 0; ci < c; ++ci)
                  acc += cur[((img * h + sy) * w + sx) * c + ci] * K[((ky * b.kernel_size + kx) * c + ci) * oc + o];
              }
            conv[((img * oh + y) * ow + xx) * oc + o] = acc > 0 ? acc : 0.0;
          }
    if (b.pool) {
      const std::size_t ph = oh / 2, pw = ow / 2;
      std::vector<double> pooled(n * ph * pw * oc);
      for (std::size_t img = 0; img < n; ++img)
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t xx = 0; xx < pw; ++xx)
            for (std::size_t o = 0; o < oc; ++o) {
              double s = 0;
              for (std::size_t dy = 0; dy < 2; ++dy)
                for (std::size_t dx = 0; dx < 2; ++dx) s += conv[((img * oh + 2 * y + dy) * ow + 2 * xx + dx) * oc + o];
              pooled[((img * ph + y) * pw + xx) * oc + o] = s / 4.0;
            }
      cur = std::move(pooled);
      h = ph;
      w = pw;
    } else {
      cur = std::move(conv);
      h = oh;
      w = ow;
    }
    c = oc;
  }
  RefOut out;
  out.features = cur;
  const std::size_t C = spec.head_classes;
  out.logits.assign(n * C, 0.0);
  for (std::size_t img = 0; img < n; ++img)
    for (std::size_t k = 0; k < C; ++k) {
      double z = p.head_b[k];
      for (std::size_t f = 0; f < c; ++f) {
        double g = 0;
        for (std::size_t q = 0; q < h * w; ++q) g += cur[(img * h * w + q) * c + f];
        z += p.head_w[k * c + f] * g / static_cast<double>(h * w);
      }
      out.logits[img * C + k] = z;
    }
  return out;
}

inline kdl::net::ModelParams<double> random_params(const kdl::net::ConvNetSpec& spec, std::mt19937_64& rng,
                                                   double scale = 0.5) {
  auto p = kdl::net::ModelParams<double>::zeros(spec);
  for (auto* t : p.tensors()) *t = random_tensor(t->dims, rng, -scale, scale);
  return p;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Random valid small net: 1-3 blocks, odd kernels up to 5, stride 1-2, optional pooling.
inline kdl::net::ConvNetSpec random_spec(std::mt19937_64& rng) {
  for (;;) {
    std::uniform_int_distribution<int> nb(1, 3), ch(1, 4), hw(3, 9), ks(0, 2), st(1, 2), coin(0, 1), cls(2, 5);
    kdl::net::ConvNetSpec spec;
    spec.height = hw(rng);
    spec.width = hw(rng);
    spec.channels = ch(rng);
    spec.head_classes = cls(rng);
    int blocks = nb(rng);
    for (int b = 0; b < blocks; ++b)
      spec.blocks.push_back({static_cast<std::size_t>(ch(rng)), static_cast<std::size_t>(1 + 2 * ks(rng)),
                             static_cast<std::size_t>(st(rng)), coin(rng) == 1});
    try {
      spec.shapes();
      return spec;
    } catch (const kdl::Error&) {
    }
  }
}

inline double forward_sweep(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t i = 0; i < instances; ++i) {
    auto spec = random_spec(rng);
    auto p = random_params(spec, rng);
    auto x = random_tensor({2, spec.height, spec.width, spec.channels}, rng);
    auto got = kdl::net::forward(spec, p, x);
    auto ref = reference_forward(spec, p, x);
    worst = std::max(worst, max_abs_diff(got.logits.values, ref.logits));
    worst = std::max(worst, max_abs_diff(got.feature_maps.values, ref.features));
  }
  return worst;
}

// MI as H(T) + H(S) - H(T,S) from the raw count table.
inline double mutual_information(const std::vector<std::vector<std::uint64_t>>& counts) {
  double n = 0;
  for (const auto& r : counts)
    for (auto v : r) n += static_cast<double>(v);
  auto h = [n](const std::vector<double>& xs) {
    double s = 0;
    for (double x : xs)
      if (x > 0) s -= (x / n) * std::log(x / n);
    return s;
  };
  const std::size_t c = counts.size();
  std::vector<double> rows(c, 0), cols(c, 0), cells;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      rows[i] += static_cast<double>(counts[i][j]);
      cols[j] += static_cast<double>(counts[i][j]);
      cells.push_back(static_cast<double>(counts[i][j]));
    }
  return std::max(0.0, h(rows) + h(cols) - h(cells));
}

// ECE by scanning every bin for every sample.
inline double ece(const std::vector<std::vector<double>>& probs, const kdl::Labels& labels, std::size_t m) {
  std::vector<double> cnt(m, 0), hit(m, 0), conf(m, 0);
  for (std::size_t i = 0; i < probs.size(); ++i) {
    std::size_t pred = 0;
    for (std::size_t j = 1; j < probs[i].size(); ++j)
      if (probs[i][j] > probs[i][pred]) pred = j;
    const double c = probs[i][pred];
    std::size_t bin = m - 1;
    for (std::size_t b = 0; b < m; ++b) {
      const double lo = static_cast<double>(b) / static_cast<double>(m);
      const double hi = static_cast<double>(b + 1) / static_cast<double>(m);
      if (c >= lo && c < hi) {
        bin = b;
        break;
      }
    }
    cnt[bin] += 1;
    hit[bin] += pred == labels[i] ? 1 : 0;
    conf[bin] += c;
  }
  double e = 0;
  for (std::size_t b = 0; b < m; ++b)
    if (cnt[b] > 0) e += cnt[b] / static_cast<double>(probs.size()) * std::abs(hit[b] / cnt[b] - conf[b] / cnt[b]);
  return e;
}

// Spearman with ranks from pairwise counting: rank = #smaller + (#equal + 1) / 2.
inline double spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, eq = 0;
      for (double w : v) {
        less += w < v[i];
        eq += w == v[i];
      }
      r[i] = less + (eq + 1) / 2;
    }
    return r;
  };
  auto rx = ranks(xs), ry = ranks(ys);
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += rx[i];
    sy += ry[i];
    sxy += rx[i] * ry[i];
    sxx += rx[i] * rx[i];
    syy += ry[i] * ry[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

inline kdl::Tensor<double> random_probs(std::size_t n, std::size_t c, std::mt19937_64& rng) {
  kdl::Tensor<double> t({n, c});
  for (std::size_t i = 0; i < n; ++i) {
    auto p = random_simplex(c, rng);
    std::copy(p.begin(), p.end(), t.values.begin() + static_cast<std::ptrdiff_t>(i * c));
  }
  return t;
}

inline double mi_sweep(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t c = 2 + rng() % 6, n = 1 + rng() % 200;
    std::vector<std::size_t> a(n), b(n);
    std::vector<std::vector<std::uint64_t>> counts(c, std::vector<std::uint64_t>(c, 0));
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = rng() % c;
      b[i] = rng() % 3 == 0 ? a[i] : rng() % c;
      ++counts[a[i]][b[i]];
    }
    const double got = kdl::metrics::mutual_information(kdl::metrics::joint_histogram(a, b, c));
    worst = std::max(worst, std::abs(got - mutual_information(counts)));
  }
  return worst;
}

inline double ece_sweep(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t c = 2 + rng() % 8, n = 1 + rng() % 300, m = 1 + rng() % 20;
    auto p = random_probs(n, c, rng);
    // sharpen some rows so the high-confidence bins and exact boundaries get used
    for (std::size_t i = 0; i < n; i += 3) {
      for (std::size_t j = 0; j < c; ++j) p[i * c + j] = 0.0;
      p[i * c + rng() % c] = 1.0;
    }
    std::vector<std::vector<double>> rows(n);
    kdl::Labels y(n);
    for (std::size_t i = 0; i < n; ++i) {
      rows[i].assign(p.values.begin() + static_cast<std::ptrdiff_t>(i * c),
                     p.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
      y[i] = rng() % c;
    }
    worst = std::max(worst, std::abs(kdl::metrics::ece(p, y, m).ece - ece(rows, y, m)));
  }
  return worst;
}

inline double spearman_sweep(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  std::size_t done = 0;
  while (done < instances) {
    const std::size_t n = 2 + rng() % 30;
    std::vector<double> xs(n), ys(n);
    // small integer ranges force ties
    for (auto& v : xs) v = static_cast<double>(rng() % 6);
    for (auto& v : ys) v = std::uniform_real_distribution<double>(-1, 1)(rng);
    if (rng() % 2) ys[rng() % n] = ys[0];
    auto got = kdl::harness::spearman(xs, ys);
    if (!got) continue;  // constant input, checked separately
    worst = std::max(worst, std::abs(*got - spearman(xs, ys)));
    ++done;
  }
  return worst;
}

inline double ensemble_sweep(std::uint64_t seed, std::size_t instances) {
  std::mt19937_64 rng(seed);
  double worst = 0;
  for (std::size_t t = 0; t < instances; ++t) {
    const std::size_t k = 1 + rng() % 4, n = 1 + rng() % 20, c = 2 + rng() % 8;
    std::vector<kdl::Tensor<double>> batches;
    for (std::size_t i = 0; i < k; ++i) batches.push_back(random_probs(n, c, rng));
    auto got = kdl::metrics::ensemble_average(batches);
    for (std::size_t e = 0; e < n * c; ++e) {
      double s = 0;
      for (const auto& b : batches) s += b[e];
      worst = std::max(worst, std::abs(got[e] - s / static_cast<double>(k)));
    }
  }
  return worst;
}

}  // namespace oracles
