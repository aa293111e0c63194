#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "kdlab/attention_map.hpp"
#include "kdlab/core.hpp"

namespace kdl::metrics {

/// Row-stochastic N x C matrix.
using ProbBatch = Tensor<double>;

inline constexpr double prob_floor = 1e-12;

namespace detail {
template <typename T>
void require_matrix(const Tensor<T>& t, const char* what) {
  if (t.dims.size() != 2) fail(ErrorKind::shape, what, ": expected an N x C matrix, got ", dims_string(t.dims));
}
}  // namespace detail

/// Temperature softmax with max subtraction. Writes `n` probabilities to `out`.
template <typename T, typename U>
void softmax_into(const T* z, std::size_t n, double tau, U* out) {
  double peak = static_cast<double>(z[0]);
  for (std::size_t i = 1; i < n; ++i) peak = std::max(peak, static_cast<double>(z[i]));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = std::exp((static_cast<double>(z[i]) - peak) / tau);
    out[i] = static_cast<U>(e);
    total += e;
  }
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<U>(static_cast<double>(out[i]) / total);
}

template <typename T>
std::vector<double> softmax_t(std::span<const T> row, double tau = 1.0) {
  if (!(tau > 0.0)) fail(ErrorKind::argument, "softmax temperature must be > 0, got ", tau);
  if (row.empty()) fail(ErrorKind::shape, "softmax of an empty row");
  std::vector<double> p(row.size());
  softmax_into(row.data(), row.size(), tau, p.data());
  return p;
}

template <typename T>
ProbBatch softmax_rows(const Tensor<T>& logits, double tau = 1.0) {
  detail::require_matrix(logits, "softmax_rows");
  if (!(tau > 0.0)) fail(ErrorKind::argument, "softmax temperature must be > 0, got ", tau);
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  ProbBatch out({n, c});
  for (std::size_t i = 0; i < n; ++i) softmax_into(logits.data() + i * c, c, tau, out.data() + i * c);
  return out;
}

/// Lowest index among maximal entries.
template <typename T>
std::size_t argmax(std::span<const T> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& m) {
  detail::require_matrix(m, "argmax_rows");
  const std::size_t n = m.dim(0), c = m.dim(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = argmax(std::span<const T>(m.data() + i * c, c));
  return out;
}

/// Mean over samples of sum_c p_t log(p_t / p_s), probabilities floored at 1e-12.
inline double kl_fidelity(const ProbBatch& teacher, const ProbBatch& student) {
  detail::require_matrix(teacher, "kl_fidelity");
  if (teacher.dims != student.dims)
    fail(ErrorKind::shape, "kl_fidelity: ", dims_string(teacher.dims), " vs ", dims_string(student.dims));
  const std::size_t n = teacher.dim(0), c = teacher.dim(1);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      double pt = std::max(teacher[i * c + j], prob_floor);
      double ps = std::max(student[i * c + j], prob_floor);
      row += pt * std::log(pt / ps);
    }
    total += row;
  }
  return std::max(0.0, total / static_cast<double>(n));
}

template <typename T, typename U>
double top1_agreement(const Tensor<T>& teacher, const Tensor<U>& student) {
  detail::require_matrix(teacher, "top1_agreement");
  if (teacher.dims != student.dims)
    fail(ErrorKind::shape, "top1_agreement: ", dims_string(teacher.dims), " vs ", dims_string(student.dims));
  auto a = argmax_rows(teacher);
  auto b = argmax_rows(student);
  if (a.empty()) return 0.0;
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i) same += a[i] == b[i];
  return static_cast<double>(same) / static_cast<double>(a.size());
}

/// C x C counts of (teacher-ensemble class, student class).
struct JointHistogram {
  std::size_t classes = 0;
  std::vector<std::uint64_t> counts;
  std::uint64_t total = 0;

  JointHistogram() = default;
  explicit JointHistogram(std::size_t c) : classes(c), counts(c * c, 0) {}

  void add(std::size_t teacher_class, std::size_t student_class) {
    if (teacher_class >= classes || student_class >= classes)
      fail(ErrorKind::out_of_range, "joint histogram class out of range");
    ++counts[teacher_class * classes + student_class];
    ++total;
  }
  std::uint64_t at(std::size_t t, std::size_t s) const { return counts[t * classes + s]; }
};

inline JointHistogram joint_histogram(const std::vector<std::size_t>& teacher, const std::vector<std::size_t>& student,
                                      std::size_t classes) {
  if (teacher.size() != student.size()) fail(ErrorKind::shape, "joint_histogram: prediction lists differ in length");
  JointHistogram h(classes);
  for (std::size_t i = 0; i < teacher.size(); ++i) h.add(teacher[i], student[i]);
  return h;
}

/// Plug-in mutual information (nats) of the empirical joint distribution.
inline double mutual_information(const JointHistogram& joint) {
  if (joint.total == 0) fail(ErrorKind::argument, "mutual_information: empty histogram");
  const std::size_t c = joint.classes;
  const double n = static_cast<double>(joint.total);
  std::vector<double> row(c, 0.0), col(c, 0.0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      row[i] += static_cast<double>(joint.at(i, j));
      col[j] += static_cast<double>(joint.at(i, j));
    }
  double mi = 0.0;
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      const double nij = static_cast<double>(joint.at(i, j));
      if (nij == 0.0) continue;
      mi += (nij / n) * std::log(nij * n / (row[i] * col[j]));
    }
  return std::max(0.0, mi);
}

/// Elementwise mean of per-teacher probability batches.
inline ProbBatch ensemble_average(const std::vector<ProbBatch>& batches) {
  if (batches.empty()) fail(ErrorKind::argument, "ensemble_average: no teachers");
  ProbBatch out(batches.front().dims, 0.0);
  for (const auto& b : batches) {
    if (b.dims != out.dims)
      fail(ErrorKind::shape, "ensemble_average: ", dims_string(b.dims), " vs ", dims_string(out.dims));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  }
  const double k = static_cast<double>(batches.size());
  for (double& v : out.values) v /= k;
  return out;
}

/// |A ∩ B| / |A ∪ B| of the binarised maps; two empty masks give 1, exactly one empty gives 0.
inline double attention_iou(const AttentionMap& a, const AttentionMap& b) {
  if (a.height != b.height || a.width != b.width)
    fail(ErrorKind::shape, "attention_iou: ", a.height, "x", a.width, " vs ", b.height, "x", b.width);
  auto ma = a.mask();
  auto mb = b.mask();
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < ma.size(); ++i) {
    inter += ma[i] && mb[i];
    uni += ma[i] || mb[i];
  }
  if (uni == 0) return 1.0;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

template <typename T>
double accuracy(const Tensor<T>& logits, const Labels& labels) {
  auto pred = argmax_rows(logits);
  if (pred.size() != labels.size())
    fail(ErrorKind::shape, "accuracy: ", pred.size(), " predictions vs ", labels.size(), " labels");
  if (pred.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

/// Acc(augmented val) / Acc(clean val).
inline double affinity(double acc_augmented_val, double acc_clean_val) {
  if (!(acc_clean_val > 0.0)) fail(ErrorKind::argument, "affinity: clean validation accuracy is 0, ratio undefined");
  return acc_augmented_val / acc_clean_val;
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

inline double mean_entropy(const ProbBatch& probs) {
  detail::require_matrix(probs, "mean_entropy");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) total += entropy(std::span<const double>(probs.data() + i * c, c));
  return total / static_cast<double>(n);
}

struct ReliabilityBin {
  double low = 0.0;
  double high = 0.0;
  std::uint64_t count = 0;
  double accuracy = 0.0;
  double confidence = 0.0;

  bool operator==(const ReliabilityBin&) const = default;
};

using ReliabilityBins = std::vector<ReliabilityBin>;

struct EceResult {
  double ece = 0.0;
  ReliabilityBins bins;
};

/// Bin m covers [m/M, (m+1)/M); confidence 1.0 lands in the last bin.
inline std::size_t confidence_bin(double confidence, std::size_t m) {
  const double md = static_cast<double>(m);
  auto idx = static_cast<std::size_t>(std::clamp(std::floor(confidence * md), 0.0, md - 1.0));
  while (idx > 0 && confidence < static_cast<double>(idx) / md) --idx;
  while (idx + 1 < m && confidence >= static_cast<double>(idx + 1) / md) ++idx;
  return idx;
}

/// Expected calibration error with M equal-width confidence bins; confidence is the row maximum.
inline EceResult ece(const ProbBatch& probs, const Labels& labels, std::size_t m = 15) {
  detail::require_matrix(probs, "ece");
  if (m == 0) fail(ErrorKind::argument, "ece: need at least one bin");
  const std::size_t n = probs.dim(0), c = probs.dim(1);
  if (labels.size() != n) fail(ErrorKind::shape, "ece: ", n, " rows vs ", labels.size(), " labels");

  EceResult res;
  res.bins.resize(m);
  std::vector<double> hits(m, 0.0), conf(m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> row(probs.data() + i * c, c);
    std::size_t pred = argmax(row);
    double confidence = row[pred];
    std::size_t b = confidence_bin(confidence, m);
    ++res.bins[b].count;
    hits[b] += pred == labels[i] ? 1.0 : 0.0;
    conf[b] += confidence;
  }
  for (std::size_t b = 0; b < m; ++b) {
    auto& bin = res.bins[b];
    bin.low = static_cast<double>(b) / static_cast<double>(m);
    bin.high = static_cast<double>(b + 1) / static_cast<double>(m);
    if (bin.count == 0) continue;
    const double cnt = static_cast<double>(bin.count);
    bin.accuracy = hits[b] / cnt;
    bin.confidence = conf[b] / cnt;
    res.ece += (cnt / static_cast<double>(n)) * std::abs(bin.accuracy - bin.confidence);
  }
  return res;
}

}  // namespace kdl::metrics
