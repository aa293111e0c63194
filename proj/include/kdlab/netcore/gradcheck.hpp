#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <utility>

#include "kdlab/netcore/convnet.hpp"

namespace kdl::net {

/// Scalar loss on logits plus its gradient with respect to those logits.
template <typename T>
struct LossValue {
  T value{};
  Tensor<T> grad;
};

template <typename T>
using LossFn = std::function<LossValue<T>(const Tensor<T>& logits)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against central differences on every parameter.
/// Relative error is |a - n| / max(|a|, |n|, 1e-12). Intended for 64-bit, tiny networks.
template <typename T>
GradCheckReport grad_check(const ConvNetSpec& spec, const ModelParams<T>& params, const Tensor<T>& batch,
                           const LossFn<T>& loss_fn, double step = 1e-3) {
  auto base = forward(spec, params, batch);
  auto loss = loss_fn(base.logits);
  ModelParams<T> analytic = backward(spec, params, batch, loss.grad, "grad_check loss");

  ModelParams<T> probe = params;
  auto probe_tensors = probe.tensors();
  auto analytic_tensors = analytic.tensors();
  GradCheckReport report;
  for (std::size_t t = 0; t < probe_tensors.size(); ++t) {
    Tensor<T>& tensor = *probe_tensors[t];
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const T original = tensor[i];
      tensor[i] = original + static_cast<T>(step);
      double up = static_cast<double>(loss_fn(forward(spec, probe, batch).logits).value);
      tensor[i] = original - static_cast<T>(step);
      double down = static_cast<double>(loss_fn(forward(spec, probe, batch).logits).value);
      tensor[i] = original;

      double numeric = (up - down) / (2.0 * step);
      double a = static_cast<double>((*analytic_tensors[t])[i]);
      double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      double rel = std::abs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_relative_error) {
        report.max_relative_error = rel;
        report.worst_tensor = t;
        report.worst_index = i;
        report.analytic = a;
        report.numeric = numeric;
      }
    }
  }
  return report;
}

/// Same comparison for a loss taken directly on a logits batch (no network in between).
template <typename T>
GradCheckReport logit_grad_check(const Tensor<T>& logits, const LossFn<T>& loss_fn, double step = 1e-6) {
  auto analytic = loss_fn(logits).grad;
  Tensor<T> probe = logits;
  GradCheckReport report;
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const T original = probe[i];
    probe[i] = original + static_cast<T>(step);
    double up = static_cast<double>(loss_fn(probe).value);
    probe[i] = original - static_cast<T>(step);
    double down = static_cast<double>(loss_fn(probe).value);
    probe[i] = original;
    double numeric = (up - down) / (2.0 * step);
    double a = static_cast<double>(analytic[i]);
    double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-12});
    ++report.checked;
    if (rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_index = i;
      report.analytic = a;
      report.numeric = numeric;
    }
  }
  return report;
}

}  // namespace kdl::net
