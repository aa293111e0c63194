#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "kdlab/metrics/export.hpp"
#include "kdlab/metrics/metrics.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace kdl;
using namespace kdl::metrics;
using testing_support::error_kind_of;
using testing_support::random_tensor;

namespace {

ProbBatch probs(std::size_t n, std::size_t c, std::vector<double> v) { return ProbBatch({n, c}, std::move(v)); }

AttentionMap mask_map(std::size_t h, std::size_t w, std::vector<std::size_t> on) {
  AttentionMap m(h, w);
  for (auto i : on) m.values[i] = 1.0;
  return m;
}

}  // namespace

TEST(Softmax, Examples) {
  auto u = softmax_t(std::span<const double>(std::vector<double>{0, 0, 0, 0}));
  for (double v : u) EXPECT_DOUBLE_EQ(v, 0.25);
  std::vector<double> z = {1, 2, 3};
  auto p = softmax_t(std::span<const double>(z));
  EXPECT_NEAR(p[0], 0.0900, 5e-5);
  EXPECT_NEAR(p[1], 0.2447, 5e-5);
  EXPECT_NEAR(p[2], 0.6652, 5e-5);
  for (double v : softmax_t(std::span<const double>(z), 1e6)) EXPECT_NEAR(v, 1.0 / 3, 1e-5);
}

TEST(Softmax, StableAndNormalised) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    auto z = random_tensor({3, 7}, rng, -800, 800);
    auto p = softmax_rows(z, 0.5 + t % 5);
    for (std::size_t i = 0; i < 3; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 7; ++j) {
        ASSERT_TRUE(std::isfinite(p[i * 7 + j]));
        s += p[i * 7 + j];
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
  EXPECT_EQ(error_kind_of([] { softmax_rows(Tensor<double>({1, 2}), 0.0); }), ErrorKind::argument);
}

TEST(KlFidelity, Examples) {
  auto p = probs(2, 3, {0.2, 0.3, 0.5, 0.9, 0.05, 0.05});
  EXPECT_EQ(kl_fidelity(p, p), 0.0);
  // the floored zero contributes 1e-12 * ln(1e-12 / 0.5)
  EXPECT_NEAR(kl_fidelity(probs(1, 2, {1, 0}), probs(1, 2, {0.5, 0.5})), std::log(2.0) + 1e-12 * std::log(2e-12), 1e-15);
  EXPECT_EQ(error_kind_of([&] { kl_fidelity(p, probs(1, 3, {1, 0, 0})); }), ErrorKind::shape);
}

TEST(KlFidelity, NonNegativeSweep) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 1000; ++t) {
    auto a = oracles::random_probs(4, 5, rng), b = oracles::random_probs(4, 5, rng);
    ASSERT_GE(kl_fidelity(a, b), 0.0);
  }
}

TEST(Top1Agreement, Examples) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({6, 4}, rng);
  EXPECT_EQ(top1_agreement(x, x), 1.0);
  Tensor<double> a({4, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 0, 1});
  Tensor<double> b({4, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 1, 0});
  EXPECT_EQ(top1_agreement(a, b), 0.75);
  EXPECT_EQ(top1_agreement(b, a), 0.75);
  // ties go to the lowest index
  Tensor<double> tie({1, 3}, std::vector<double>{2, 2, 1});
  Tensor<double> first({1, 3}, std::vector<double>{3, 0, 0});
  EXPECT_EQ(top1_agreement(tie, first), 1.0);
}

TEST(Top1Agreement, InvariantUnderIncreasingMaps) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 200; ++t) {
    auto a = random_tensor({5, 6}, rng, -3, 3), b = random_tensor({5, 6}, rng, -3, 3);
    auto c = b;
    for (auto& v : c.values) v = std::exp(v) * 3.0 - 1.0;
    EXPECT_EQ(top1_agreement(a, b), top1_agreement(a, c));
  }
}

TEST(MutualInformation, Examples) {
  // independent uniform: exact product counts
  JointHistogram ind(2);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 2; ++j) ind.counts[i * 2 + j] = 5, ind.total += 5;
  EXPECT_EQ(mutual_information(ind), 0.0);
  auto diag = joint_histogram({0, 1, 0, 1}, {0, 1, 0, 1}, 2);
  EXPECT_NEAR(mutual_information(diag), std::log(2.0), 1e-12);
  auto mixed = joint_histogram({0, 0, 0, 1, 1, 1}, {0, 0, 1, 0, 1, 1}, 2);
  EXPECT_NEAR(mutual_information(mixed), oracles::mutual_information({{2, 1}, {1, 2}}), 1e-12);
  EXPECT_EQ(error_kind_of([] { mutual_information(JointHistogram(3)); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([] { joint_histogram({0, 3}, {0, 1}, 3); }), ErrorKind::out_of_range);
}

TEST(MutualInformation, DiagonalEqualsMarginalEntropy) {
  std::mt19937_64 rng(5);
  for (int t = 0; t < 50; ++t) {
    std::vector<std::size_t> a(40);
    for (auto& v : a) v = rng() % 4;
    auto h = joint_histogram(a, a, 4);
    std::vector<double> marg(4, 0);
    for (auto v : a) marg[v] += 1.0 / 40;
    EXPECT_NEAR(mutual_information(h), entropy(marg), 1e-12);
  }
}

TEST(MutualInformation, MatchesBruteForce) { EXPECT_LE(oracles::mi_sweep(6, 200), 1e-10); }

TEST(Ensemble, Examples) {
  std::mt19937_64 rng(7);
  auto p = oracles::random_probs(3, 4, rng);
  EXPECT_EQ(ensemble_average({p}), p);
  auto e = ensemble_average({probs(1, 3, {1, 0, 0}), probs(1, 3, {0, 1, 0})});
  EXPECT_EQ(e.values, (std::vector<double>{0.5, 0.5, 0.0}));
  EXPECT_EQ(error_kind_of([] { ensemble_average({}); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([&] { ensemble_average({p, probs(1, 3, {1, 0, 0})}); }), ErrorKind::shape);
}

TEST(Ensemble, RowsSumToOneAndMatchBruteForce) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 100; ++t) {
    std::vector<ProbBatch> bs;
    for (int k = 0; k < 3; ++k) bs.push_back(oracles::random_probs(4, 6, rng));
    auto e = ensemble_average(bs);
    for (std::size_t i = 0; i < 4; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 6; ++j) s += e[i * 6 + j];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
  EXPECT_LE(oracles::ensemble_sweep(9, 200), 1e-12);
}

TEST(AttentionIou, Examples) {
  auto a = mask_map(3, 3, {0, 1, 2});
  auto b = mask_map(3, 3, {1, 2, 3});
  EXPECT_EQ(attention_iou(a, a), 1.0);
  EXPECT_EQ(attention_iou(a, mask_map(3, 3, {6, 7})), 0.0);
  EXPECT_EQ(attention_iou(a, b), 0.5);
  EXPECT_EQ(attention_iou(AttentionMap(3, 3), AttentionMap(3, 3)), 1.0);
  EXPECT_EQ(attention_iou(a, AttentionMap(3, 3)), 0.0);
  EXPECT_EQ(error_kind_of([&] { attention_iou(a, AttentionMap(3, 4)); }), ErrorKind::shape);
}

TEST(AttentionIou, ThresholdIsRelativeToPeak) {
  AttentionMap m(1, 4);
  m.values = {0.2, 0.1, 0.09, 0.0};
  auto mask = m.mask();
  EXPECT_EQ(mask, (std::vector<bool>{true, true, false, false}));
  m.threshold = 1.0;
  EXPECT_EQ(m.mask(), (std::vector<bool>{true, false, false, false}));
}

TEST(AttentionIou, SymmetricAndBounded) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 300; ++t) {
    AttentionMap a(4, 5), b(4, 5);
    for (auto& v : a.values) v = u(rng);
    for (auto& v : b.values) v = u(rng);
    double x = attention_iou(a, b);
    EXPECT_EQ(x, attention_iou(b, a));
    EXPECT_GE(x, 0.0);
    EXPECT_LE(x, 1.0);
    EXPECT_EQ(x == 1.0, a.mask() == b.mask());
  }
}

TEST(Accuracy, Examples) {
  Labels y = {0, 1, 2, 1, 0, 2, 2, 1, 0, 1};
  Tensor<double> onehot({10, 3});
  for (std::size_t i = 0; i < 10; ++i) onehot[i * 3 + y[i]] = 10.0;
  EXPECT_EQ(accuracy(onehot, y), 1.0);
  Tensor<double> wrong({10, 3});
  for (std::size_t i = 0; i < 10; ++i) wrong[i * 3 + (y[i] + 1) % 3] = 10.0;
  EXPECT_EQ(accuracy(wrong, y), 0.0);
  auto mixed = onehot;
  for (std::size_t i : {0u, 4u, 7u}) {
    mixed[i * 3 + y[i]] = 0.0;
    mixed[i * 3 + (y[i] + 2) % 3] = 10.0;
  }
  EXPECT_DOUBLE_EQ(accuracy(mixed, y), 0.7);
}

TEST(Affinity, Examples) {
  EXPECT_EQ(affinity(0.63, 0.63), 1.0);
  EXPECT_DOUBLE_EQ(affinity(0.4, 0.5), 0.8);
  EXPECT_EQ(error_kind_of([] { affinity(0.3, 0.0); }), ErrorKind::argument);
}

TEST(Entropy, Examples) {
  EXPECT_EQ(entropy(std::vector<double>{0, 1, 0}), 0.0);
  EXPECT_NEAR(entropy(std::vector<double>(4, 0.25)), std::log(4.0), 1e-12);
  EXPECT_NEAR(entropy(std::vector<double>{0.5, 0.25, 0.25}), 1.0397, 5e-5);
  EXPECT_NEAR(mean_entropy(probs(2, 2, {0.5, 0.5, 1, 0})), std::log(2.0) / 2, 1e-15);
}

TEST(Ece, Examples) {
  auto perfect = ece(probs(3, 2, {1, 0, 0, 1, 1, 0}), {0, 1, 0});
  EXPECT_EQ(perfect.ece, 0.0);
  EXPECT_EQ(perfect.bins.size(), 15u);
  EXPECT_EQ(perfect.bins.back().count, 3u);
  auto two = ece(probs(2, 2, {0.9, 0.1, 0.1, 0.9}), {0, 1}, 1);
  EXPECT_NEAR(two.ece, 0.1, 1e-15);
  EXPECT_EQ(error_kind_of([] { ece(probs(1, 2, {1, 0}), {0}, 0); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([] { ece(probs(1, 2, {1, 0}), {0, 1}); }), ErrorKind::shape);
}

TEST(Ece, BoundariesGoToHigherBin) {
  for (std::size_t m : {2u, 4u, 5u, 10u, 15u})
    for (std::size_t b = 1; b < m; ++b) EXPECT_EQ(confidence_bin(static_cast<double>(b) / m, m), b) << m << " " << b;
  EXPECT_EQ(confidence_bin(1.0, 15), 14u);
  EXPECT_EQ(confidence_bin(0.0, 15), 0u);
}

TEST(Ece, BinsAreConsistent) {
  std::mt19937_64 rng(11);
  for (int t = 0; t < 100; ++t) {
    auto p = oracles::random_probs(50, 4, rng);
    Labels y(50);
    for (auto& v : y) v = rng() % 4;
    auto r = ece(p, y);
    std::uint64_t n = 0;
    for (const auto& b : r.bins) {
      n += b.count;
      EXPECT_GE(b.accuracy, 0.0);
      EXPECT_LE(b.accuracy, 1.0);
      EXPECT_GE(b.confidence, 0.0);
      EXPECT_LE(b.confidence, 1.0);
      if (b.count) {
        EXPECT_GE(b.confidence, b.low);
        EXPECT_LE(b.confidence, b.high);
      }
    }
    EXPECT_EQ(n, 50u);
  }
}

TEST(Ece, PermutationInvariantAndMatchesBruteForce) {
  std::mt19937_64 rng(12);
  auto p = oracles::random_probs(40, 5, rng);
  Labels y(40);
  for (auto& v : y) v = rng() % 5;
  std::vector<std::size_t> idx(40);
  for (std::size_t i = 0; i < 40; ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  ProbBatch q({40, 5});
  Labels z(40);
  for (std::size_t i = 0; i < 40; ++i) {
    for (std::size_t j = 0; j < 5; ++j) q[i * 5 + j] = p[idx[i] * 5 + j];
    z[i] = y[idx[i]];
  }
  auto a = ece(p, y), b = ece(q, z);
  EXPECT_NEAR(a.ece, b.ece, 1e-15);
  for (std::size_t i = 0; i < a.bins.size(); ++i) EXPECT_EQ(a.bins[i].count, b.bins[i].count);
  EXPECT_LE(oracles::ece_sweep(13, 200), 1e-12);
}

TEST(Metrics, PureFunctions) {
  std::mt19937_64 rng(14);
  auto p = oracles::random_probs(20, 5, rng), q = oracles::random_probs(20, 5, rng);
  Labels y(20);
  for (auto& v : y) v = rng() % 5;
  EXPECT_EQ(kl_fidelity(p, q), kl_fidelity(p, q));
  EXPECT_EQ(ece(p, y).bins, ece(p, y).bins);
  EXPECT_EQ(mean_entropy(p), mean_entropy(p));
}

TEST(Export, ReliabilityAndAttentionFormats) {
  auto r = ece(probs(2, 2, {0.9, 0.1, 0.1, 0.9}), {0, 1}, 2);
  auto csv = reliability_csv(r.bins);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "bin_low,bin_high,count,accuracy,confidence");
  EXPECT_NE(csv.find("0.5,1,2,1,0.90000000000000002"), std::string::npos);
  AttentionMap m(1, 2);
  m.values = {0.0, 1.0};
  auto pgm = attention_pgm(m);
  EXPECT_EQ(pgm.substr(0, 11), "P5\n2 1\n255\n");
  EXPECT_EQ(static_cast<unsigned char>(pgm.back()), 255);
  EXPECT_EQ(attention_csv(m), "0,1\n");
}
