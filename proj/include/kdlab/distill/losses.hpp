#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/metrics/metrics.hpp"
#include "kdlab/netcore/gradcheck.hpp"

namespace kdl::distill {

using net::LossValue;

struct LossWeights {
  double temperature = 10.0;
  double alpha = 0.2;
  bool zscore = false;
  double zscore_epsilon = 1e-6;
};

namespace detail {

template <typename T>
void require_logits(const Tensor<T>& z, const char* what) {
  if (z.dims.size() != 2 || z.dim(1) < 2) fail(ErrorKind::shape, what, ": expected N x C logits with C >= 2, got ", dims_string(z.dims));
}

// log softmax of z/tau for one row, in double.
template <typename T>
void log_softmax_row(const T* z, std::size_t c, double tau, std::vector<double>& out) {
  out.resize(c);
  double peak = static_cast<double>(z[0]) / tau;
  for (std::size_t j = 1; j < c; ++j) peak = std::max(peak, static_cast<double>(z[j]) / tau);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j) total += std::exp(static_cast<double>(z[j]) / tau - peak);
  const double lse = peak + std::log(total);
  for (std::size_t j = 0; j < c; ++j) out[j] = static_cast<double>(z[j]) / tau - lse;
}

}  // namespace detail

/// Mean cross-entropy against hard labels; gradient (softmax - onehot) / N.
template <typename T>
LossValue<T> nll_loss(const Tensor<T>& logits, const Labels& labels) {
  detail::require_logits(logits, "nll_loss");
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (labels.size() != n) fail(ErrorKind::shape, "nll_loss: ", n, " rows vs ", labels.size(), " labels");
  LossValue<T> out{T(0), Tensor<T>({n, c})};
  std::vector<double> logp;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] >= c) fail(ErrorKind::out_of_range, "nll_loss: label ", labels[i], " at row ", i, " not in [0,", c, ")");
    detail::log_softmax_row(logits.data() + i * c, c, 1.0, logp);
    total -= logp[labels[i]];
    for (std::size_t j = 0; j < c; ++j) {
      double g = std::exp(logp[j]) - (j == labels[i] ? 1.0 : 0.0);
      out.grad[i * c + j] = static_cast<T>(g / static_cast<double>(n));
    }
  }
  out.value = static_cast<T>(total / static_cast<double>(n));
  return out;
}

/// Mean over rows of -tau^2 * sum_c softmax(t/tau)_c * log softmax(s/tau)_c.
/// Gradient on the student: tau * (softmax(s/tau) - softmax(t/tau)) / N. Teacher logits are constants.
template <typename T>
LossValue<T> kd_loss(const Tensor<T>& student, const Tensor<T>& teacher, double tau) {
  detail::require_logits(student, "kd_loss");
  if (student.dims != teacher.dims)
    fail(ErrorKind::shape, "kd_loss: student ", dims_string(student.dims), " vs teacher ", dims_string(teacher.dims));
  if (!(tau > 0.0)) fail(ErrorKind::argument, "kd_loss: temperature must be > 0, got ", tau);
  const std::size_t n = student.dim(0), c = student.dim(1);
  LossValue<T> out{T(0), Tensor<T>({n, c})};
  std::vector<double> logs, logt;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    detail::log_softmax_row(student.data() + i * c, c, tau, logs);
    detail::log_softmax_row(teacher.data() + i * c, c, tau, logt);
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double pt = std::exp(logt[j]);
      row -= pt * logs[j];
      out.grad[i * c + j] = static_cast<T>(tau * (std::exp(logs[j]) - pt) / static_cast<double>(n));
    }
    total += tau * tau * row;
  }
  out.value = static_cast<T>(total / static_cast<double>(n));
  return out;
}

/// (z - mean) / (population std + eps) for one row.
template <typename T>
std::vector<T> zscore(std::span<const T> row, double eps = 1e-6) {
  if (row.size() < 2) fail(ErrorKind::shape, "zscore: row needs at least 2 entries");
  const double c = static_cast<double>(row.size());
  double mean = 0.0;
  for (T v : row) mean += static_cast<double>(v);
  mean /= c;
  double var = 0.0;
  for (T v : row) var += (static_cast<double>(v) - mean) * (static_cast<double>(v) - mean);
  const double denom = std::sqrt(var / c) + eps;
  std::vector<T> out(row.size());
  for (std::size_t j = 0; j < row.size(); ++j) out[j] = static_cast<T>((static_cast<double>(row[j]) - mean) / denom);
  return out;
}

template <typename T>
Tensor<T> zscore_rows(const Tensor<T>& z, double eps = 1e-6) {
  detail::require_logits(z, "zscore_rows");
  const std::size_t n = z.dim(0), c = z.dim(1);
  Tensor<T> out(z.dims);
  for (std::size_t i = 0; i < n; ++i) {
    auto row = zscore(std::span<const T>(z.data() + i * c, c), eps);
    std::copy(row.begin(), row.end(), out.data() + i * c);
  }
  return out;
}

/// Pulls a gradient on zscore_rows(z) back onto z.
template <typename T>
Tensor<T> zscore_backward(const Tensor<T>& z, const Tensor<T>& upstream, double eps = 1e-6) {
  const std::size_t n = z.dim(0), c = z.dim(1);
  const double cd = static_cast<double>(c);
  Tensor<T> out(z.dims);
  for (std::size_t i = 0; i < n; ++i) {
    const T* zr = z.data() + i * c;
    const T* g = upstream.data() + i * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += static_cast<double>(zr[j]);
    mean /= cd;
    double var = 0.0, gmean = 0.0, gu = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double u = static_cast<double>(zr[j]) - mean;
      var += u * u;
      gmean += static_cast<double>(g[j]);
      gu += static_cast<double>(g[j]) * u;
    }
    gmean /= cd;
    const double sd = std::sqrt(var / cd);
    const double d = sd + eps;
    for (std::size_t j = 0; j < c; ++j) {
      const double u = static_cast<double>(zr[j]) - mean;
      double v = (static_cast<double>(g[j]) - gmean) / d;
      if (sd > 0.0) v -= gu * u / (cd * sd * d * d);
      out[i * c + j] = static_cast<T>(v);
    }
  }
  return out;
}

/// Breakdown of the combined objective, for diagnostics.
struct LossTerms {
  double nll = 0.0;
  std::vector<double> kd;
};

/// alpha * NLL + (1 - alpha) * mean_k KD_k. With zscore on, each KD term sees standardised
/// student and teacher logits (the NLL term never does).
template <typename T>
LossValue<T> total_loss(const Tensor<T>& student, const std::vector<Tensor<T>>& teachers, const Labels& labels,
                        const LossWeights& w, LossTerms* terms = nullptr) {
  if (teachers.empty()) fail(ErrorKind::argument, "total_loss: at least one teacher is required");
  if (w.alpha < 0.0 || w.alpha > 1.0) fail(ErrorKind::config, "total_loss: alpha must lie in [0,1], got ", w.alpha);
  if (w.zscore && !(w.zscore_epsilon > 0.0)) fail(ErrorKind::config, "total_loss: zscore epsilon must be > 0");

  auto nll = nll_loss(student, labels);
  if (!std::isfinite(static_cast<double>(nll.value))) fail(ErrorKind::numeric, "total_loss: NLL term is not finite");
  const double k = static_cast<double>(teachers.size());
  double value = w.alpha * static_cast<double>(nll.value);
  Tensor<double> grad(student.dims);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = w.alpha * static_cast<double>(nll.grad[i]);
  if (terms) {
    terms->nll = static_cast<double>(nll.value);
    terms->kd.clear();
  }

  const Tensor<T> s_in = w.zscore ? zscore_rows(student, w.zscore_epsilon) : student;
  Tensor<T> kd_grad_sum(student.dims);
  for (std::size_t t = 0; t < teachers.size(); ++t) {
    const Tensor<T> t_in = w.zscore ? zscore_rows(teachers[t], w.zscore_epsilon) : teachers[t];
    auto kd = kd_loss(s_in, t_in, w.temperature);
    if (!std::isfinite(static_cast<double>(kd.value)) || !kd.grad.all_finite())
      fail(ErrorKind::numeric, "total_loss: KD term for teacher ", t + 1, " is not finite");
    value += (1.0 - w.alpha) / k * static_cast<double>(kd.value);
    for (std::size_t i = 0; i < kd_grad_sum.size(); ++i) kd_grad_sum[i] += kd.grad[i];
    if (terms) terms->kd.push_back(static_cast<double>(kd.value));
  }
  if (w.zscore) kd_grad_sum = zscore_backward(student, kd_grad_sum, w.zscore_epsilon);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += (1.0 - w.alpha) / k * static_cast<double>(kd_grad_sum[i]);

  LossValue<T> out{static_cast<T>(value), tensor_cast<T>(grad)};
  return out;
}

}  // namespace kdl::distill
