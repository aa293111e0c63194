#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "kdlab/distill/losses.hpp"
#include "kdlab/netcore/convnet.hpp"
#include "kdlab/netcore/gradcheck.hpp"

namespace kdl::distill {

struct GradSuiteResult {
  std::string loss;
  std::string level;  // "logits" or "network"
  std::uint64_t seed = 0;
  net::GradCheckReport report;
};

/// Small enough for a full finite-difference sweep: 6x6x2 input, two blocks, 4 classes.
inline net::ConvNetSpec gradcheck_spec() { return net::ConvNetSpec{6, 6, 2, {{3, 3, 1, true}, {4, 3, 1, false}}, 4}; }

/// Smallest |pre-activation| over the whole net for this batch.
template <typename T>
double relu_margin(const net::ConvNetSpec& spec, const net::ModelParams<T>& params, const Tensor<T>& x) {
  net::ForwardCache<T> cache;
  net::forward_cached(spec, params, x, cache);
  double m = std::numeric_limits<double>::infinity();
  for (const auto& b : cache.blocks) m = std::min(m, static_cast<double>(b.preact.cwiseAbs().minCoeff()));
  return m;
}

namespace detail {

struct GradProblem {
  net::ConvNetSpec spec = gradcheck_spec();
  net::ModelParams<double> params;
  Tensor<double> x;
  Labels labels;
  std::vector<Tensor<double>> teachers;
};

// A ReLU kink inside the difference stencil wrecks central differences, so the input batch is
// redrawn until every pre-activation sits at least `margin` away from zero.
inline GradProblem grad_problem(std::uint64_t seed, std::size_t batch, double margin) {
  GradProblem p;
  const std::size_t c = p.spec.head_classes;
  p.params = net::init_params<double>(p.spec, seed);
  Rng rng = keyed_rng(seed, Stream::synth, 7);
  for (auto& v : p.params.head_b.values) v = 0.3 * normal(rng);
  for (auto& cv : p.params.convs)
    for (auto& v : cv.bias.values) v = 0.1 * normal(rng);
  p.labels.resize(batch);
  for (auto& l : p.labels) l = static_cast<std::uint32_t>(uniform_index(rng, c));
  p.teachers.assign(2, Tensor<double>({batch, c}));
  for (auto& t : p.teachers)
    for (auto& v : t.values) v = 3.0 * normal(rng);
  p.x = Tensor<double>({batch, p.spec.height, p.spec.width, p.spec.channels});
  for (int attempt = 0;; ++attempt) {
    if (attempt == 100000) fail(ErrorKind::numeric, "gradient suite: no kink-free batch for seed ", seed);
    for (auto& v : p.x.values) v = normal(rng);
    if (relu_margin(p.spec, p.params, p.x) >= margin) break;
  }
  return p;
}

inline std::vector<std::pair<std::string, net::LossFn<double>>> suite_losses(const GradProblem& p) {
  std::vector<std::pair<std::string, net::LossFn<double>>> out;
  out.emplace_back("nll", [&p](const Tensor<double>& z) { return nll_loss(z, p.labels); });
  for (double tau : {1.0, 4.0, 10.0})
    out.emplace_back("kd_tau" + std::to_string(static_cast<int>(tau)),
                     [&p, tau](const Tensor<double>& z) { return kd_loss(z, p.teachers[0], tau); });
  for (bool zs : {false, true}) {
    for (std::size_t k : {std::size_t{1}, std::size_t{2}}) {
      LossWeights w;
      w.zscore = zs;
      std::vector<Tensor<double>> ts(p.teachers.begin(), p.teachers.begin() + static_cast<std::ptrdiff_t>(k));
      out.emplace_back(std::string(zs ? "total_zscore" : "total") + "_k" + std::to_string(k),
                       [&p, w, ts](const Tensor<double>& z) { return total_loss(z, ts, p.labels, w); });
    }
  }
  return out;
}

}  // namespace detail

/// Finite-difference checks of every distillation loss in 64-bit, twice: on the logits of a tiny
/// random net (step 1e-6) and through the whole net onto its parameters (step 2e-4).
inline std::vector<GradSuiteResult> loss_gradient_suite(std::uint64_t seed, std::size_t batch = 3) {
  // a 2e-4 parameter step moves any pre-activation by under 1e-3 at these input scales. Larger steps
  // pick up truncation error on the z-scored losses, smaller ones rounding error on the tau=10 ones.
  const auto p = detail::grad_problem(seed, batch, 2e-3);
  const auto logits = net::forward(p.spec, p.params, p.x).logits;
  std::vector<GradSuiteResult> out;
  for (const auto& [name, fn] : detail::suite_losses(p)) {
    out.push_back({name, "logits", seed, net::logit_grad_check(logits, fn)});
    out.push_back({name, "network", seed, net::grad_check(p.spec, p.params, p.x, fn, 2e-4)});
  }
  return out;
}

}  // namespace kdl::distill
