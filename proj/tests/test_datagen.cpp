#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "kdlab/datagen/augment.hpp"
#include "kdlab/datagen/longtail.hpp"
#include "kdlab/datagen/rawio.hpp"
#include "kdlab/datagen/synth.hpp"
#include "kdlab/distill/train.hpp"
#include "support.hpp"

using namespace kdl;
using namespace kdl::data;
using testing_support::error_kind_of;

namespace {

Image random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  Image img(h, w, 3);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto& v : img.pixels) v = u(rng);
  return img;
}

bool in_unit_range(const Image& img) {
  for (float v : img.pixels)
    if (!(v >= 0.0f && v <= 1.0f)) return false;
  return true;
}

double mean_abs_delta(const Dataset& a, const Dataset& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) s += std::abs(a.pixels[i] - b.pixels[i]);
  return s / static_cast<double>(a.pixels.size());
}

// Softmax regression on raw pixels, full-batch gradient descent.
double linear_val_accuracy(const SplitDataset& d, int steps) {
  const auto n = static_cast<Eigen::Index>(d.train.size()), f = static_cast<Eigen::Index>(d.train.image_size());
  const auto c = static_cast<Eigen::Index>(d.train.classes);
  auto design = [&](const Dataset& ds) {
    Eigen::MatrixXd x(static_cast<Eigen::Index>(ds.size()), f + 1);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = 0; j < f; ++j) x(i, j) = ds.pixels[static_cast<std::size_t>(i * f + j)] - 0.5;
      x(i, f) = 1.0;
    }
    return x;
  };
  Eigen::MatrixXd x = design(d.train), xv = design(d.val);
  Eigen::MatrixXd y = Eigen::MatrixXd::Zero(n, c);
  for (Eigen::Index i = 0; i < n; ++i) y(i, d.train.labels[static_cast<std::size_t>(i)]) = 1.0;
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(f + 1, c);
  for (int s = 0; s < steps; ++s) {
    Eigen::MatrixXd z = x * w;
    z = (z.colwise() - z.rowwise().maxCoeff()).array().exp();
    z = z.array().colwise() / z.rowwise().sum().array();
    w -= 0.5 * x.transpose() * (z - y) / static_cast<double>(n);
  }
  Eigen::MatrixXd zv = xv * w;
  std::size_t hit = 0;
  for (Eigen::Index i = 0; i < zv.rows(); ++i) {
    Eigen::Index k;
    zv.row(i).maxCoeff(&k);
    hit += static_cast<std::uint32_t>(k) == d.val.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(hit) / static_cast<double>(zv.rows());
}

AugmentPolicy policy(PolicyKind k, std::uint64_t stream = 1) {
  AugmentPolicy p;
  p.kind = k;
  p.stream = stream;
  return p;
}

}  // namespace

TEST(Synth, SizesAndSplit) {
  auto d = synth_dataset(1, 10, 100, 16, 16);
  EXPECT_EQ(d.train.size(), 800u);
  EXPECT_EQ(d.val.size(), 200u);
  EXPECT_EQ(d.train.split, Split::train);
  EXPECT_EQ(d.val.split, Split::val);
  for (auto n : d.train.class_counts()) EXPECT_EQ(n, 80u);
  for (auto n : d.val.class_counts()) EXPECT_EQ(n, 20u);
  EXPECT_NO_THROW(d.train.validate());
  EXPECT_NO_THROW(d.val.validate());
  for (float v : d.train.pixels) ASSERT_EQ(v, quantize8(v));
}

TEST(Synth, DeterministicPerSeed) {
  auto a = synth_dataset(5, 4, 20, 12, 12), b = synth_dataset(5, 4, 20, 12, 12), c = synth_dataset(6, 4, 20, 12, 12);
  EXPECT_EQ(a.train, b.train);
  EXPECT_EQ(a.val, b.val);
  EXPECT_NE(a.train.pixels, c.train.pixels);
}

TEST(Synth, Errors) {
  EXPECT_EQ(error_kind_of([] { synth_dataset(0, 1, 10, 8, 8); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([] { synth_dataset(0, 3, 10, 2, 8); }), ErrorKind::argument);
}

TEST(Synth, LinearModelLearnsAndConvNetDoesBetter) {
  auto d = synth_dataset(0, 10, 100, 32, 32);
  const double lin = linear_val_accuracy(d, 150);
  EXPECT_GT(lin, 0.1);

  AugmentPolicy p = policy(PolicyKind::weak);
  auto spec = net::default_teacher_spec(32, 32, 3, 10);
  auto m = distill::train_teacher<float>(spec, d.train, d.val, p, distill::TrainConfig{}, 0);
  EXPECT_GT(m.record.final_val_acc, lin) << "linear " << lin;
}

TEST(LongTail, FormulaExamples) {
  auto c = longtail_counts(500, 10, 100.0);
  EXPECT_EQ(c.front(), 500u);
  EXPECT_EQ(c.back(), 5u);
  for (std::size_t i = 1; i < c.size(); ++i) EXPECT_LE(c[i], c[i - 1]);
  EXPECT_EQ(longtail_counts(3, 4, 1000.0).back(), 1u);
}

TEST(LongTail, RatioSweep) {
  for (std::size_t n_max : {50u, 100u, 500u, 1000u})
    for (std::size_t classes : {2u, 5u, 10u, 100u})
      for (double rho : {1.0, 2.0, 10.0, 50.0, 100.0}) {
        // below this the floor of one sample per class caps the ratio
        if (static_cast<double>(n_max) < 3 * rho) continue;
        auto c = longtail_counts(n_max, classes, rho);
        const double ratio = static_cast<double>(c.front()) / static_cast<double>(c.back());
        EXPECT_GE(ratio, 0.8 * rho) << n_max << " " << classes << " " << rho;
        EXPECT_LE(ratio, 1.2 * rho) << n_max << " " << classes << " " << rho;
      }
}

TEST(LongTail, SubsampleKeepsProfile) {
  auto d = synth_dataset(2, 5, 50, 8, 8);
  auto lt = longtail_subsample(d.train, 10.0, 3);
  auto counts = lt.class_counts();
  EXPECT_EQ(counts, longtail_counts(40, 5, 10.0));
  EXPECT_EQ(lt.imbalance_factor, 10.0);
  EXPECT_EQ(lt, longtail_subsample(d.train, 10.0, 3));
  auto same = longtail_subsample(d.train, 1.0, 3);
  EXPECT_EQ(same, [&] {
    auto t = d.train;
    t.imbalance_factor = 1.0;
    return t;
  }());
  EXPECT_EQ(error_kind_of([&] { longtail_subsample(d.train, 0.5, 0); }), ErrorKind::argument);
  EXPECT_EQ(error_kind_of([&] { longtail_subsample(d.val, 10.0, 0); }), ErrorKind::argument);
}

TEST(Augment, IdentityIsExact) {
  std::mt19937_64 g(1);
  auto img = random_image(9, 7, g);
  Rng rng(0);
  EXPECT_EQ(augment(img, policy(PolicyKind::identity), rng), img);
  WeakParams off{0, 0.0, 0.0};
  EXPECT_EQ(weak_augment(img, off, rng), img);
  StrongParams none{0, 9.0};
  EXPECT_EQ(strong_augment(img, none, rng), img);
}

TEST(Augment, FlipIsAnInvolution) {
  std::mt19937_64 g(2);
  auto img = random_image(5, 6, g);
  WeakParams flip{0, 1.0, 0.0};
  Rng rng(1);
  auto once = weak_augment(img, flip, rng);
  EXPECT_NE(once, img);
  EXPECT_EQ(once.at(2, 0, 1), img.at(2, 5, 1));
  EXPECT_EQ(weak_augment(once, flip, rng), img);
}

TEST(Augment, ZeroMagnitudeOpsAreIdentity) {
  std::mt19937_64 g(3);
  auto img = random_image(12, 12, g);
  for (auto op : strong_op_set) {
    Rng rng(4);
    auto out = apply_strong_op(img, op, 0.0, rng);
    double worst = 0;
    for (std::size_t i = 0; i < img.pixels.size(); ++i) worst = std::max(worst, double(std::abs(out.pixels[i] - img.pixels[i])));
    EXPECT_LE(worst, 1e-6) << to_string(op);
  }
}

TEST(Augment, RangeDimsAndDeterminism) {
  std::mt19937_64 g(4);
  for (int t = 0; t < 30; ++t) {
    auto img = random_image(10, 11, g);
    for (auto k : {PolicyKind::weak, PolicyKind::strong}) {
      auto p = policy(k);
      p.strong.magnitude = 9.0;
      Rng a = augment_rng(7, 3, 1, t), b = augment_rng(7, 3, 1, t);
      auto x = augment(img, p, a), y = augment(img, p, b);
      EXPECT_EQ(x, y);
      EXPECT_EQ(x.height, 10u);
      EXPECT_EQ(x.width, 11u);
      EXPECT_TRUE(in_unit_range(x));
    }
  }
  for (auto op : strong_op_set) {
    auto img = random_image(8, 8, g);
    Rng rng(9);
    EXPECT_TRUE(in_unit_range(apply_strong_op(img, op, 10.0, rng))) << to_string(op);
  }
}

TEST(Augment, StreamIdChangesDraws) {
  std::mt19937_64 g(5);
  auto img = random_image(16, 16, g);
  auto p = policy(PolicyKind::strong);
  Rng a = augment_rng(1, 3, 0, 0), b = augment_rng(1, 4, 0, 0);
  EXPECT_NE(augment(img, p, a), augment(img, p, b));
}

TEST(Augment, PolicyNames) {
  for (auto k : {PolicyKind::identity, PolicyKind::weak, PolicyKind::strong}) EXPECT_EQ(policy_from_string(to_string(k)), k);
  EXPECT_EQ(error_kind_of([] { policy_from_string("medium"); }), ErrorKind::config);
}

TEST(HalfCrop, SolidHalves) {
  Image img(4, 6, 3);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 6; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = x < 3 ? 0.25f : 0.75f;
  auto l = half_crop(img, Side::left), r = half_crop(img, Side::right);
  EXPECT_EQ(l.height, 4u);
  EXPECT_EQ(l.width, 6u);
  for (float v : l.pixels) EXPECT_EQ(v, 0.25f);
  for (float v : r.pixels) EXPECT_EQ(v, 0.75f);
}

TEST(HalfCrop, HalvesUseDisjointColumns) {
  // perturbing a right-half column leaves the left crop untouched and vice versa
  std::mt19937_64 g(6);
  for (std::size_t w : {2u, 5u, 8u, 9u}) {
    auto img = random_image(4, w, g);
    auto l0 = half_crop(img, Side::left), r0 = half_crop(img, Side::right);
    auto img2 = img;
    for (std::size_t y = 0; y < 4; ++y) img2.at(y, w - 1, 0) = 1.0f - img2.at(y, w - 1, 0);
    EXPECT_EQ(half_crop(img2, Side::left), l0);
    auto img3 = img;
    for (std::size_t y = 0; y < 4; ++y) img3.at(y, 0, 0) = 1.0f - img3.at(y, 0, 0);
    EXPECT_EQ(half_crop(img3, Side::right), r0);
  }
  EXPECT_EQ(error_kind_of([] { half_crop(Image(3, 1, 3), Side::left); }), ErrorKind::shape);
}

TEST(AugmentedVal, IdentityDeterminismAndStrength) {
  auto d = synth_dataset(3, 10, 20, 32, 32);
  auto id = augmented_val_set(d.val, policy(PolicyKind::identity), 1);
  EXPECT_EQ(id.pixels, d.val.pixels);
  EXPECT_EQ(id.labels, d.val.labels);
  EXPECT_EQ(id.split, Split::val_augmented);
  auto w1 = augmented_val_set(d.val, policy(PolicyKind::weak), 1);
  EXPECT_EQ(w1, augmented_val_set(d.val, policy(PolicyKind::weak), 1));
  auto s1 = augmented_val_set(d.val, policy(PolicyKind::strong), 1);
  EXPECT_GT(mean_abs_delta(s1, d.val), mean_abs_delta(w1, d.val));
  EXPECT_EQ(error_kind_of([&] { augmented_val_set(d.train, policy(PolicyKind::weak), 1); }), ErrorKind::argument);
}

TEST(RawIo, RoundTripIsExact) {
  testing_support::ScratchDir dir("rawio");
  auto d = synth_dataset(4, 3, 10, 8, 6);
  save_raw_dataset(dir.str("train.kdds"), d.train);
  auto back = load_raw_dataset(dir.str("train.kdds"));
  EXPECT_EQ(back, d.train);
  EXPECT_EQ(encode_raw_dataset(back), encode_raw_dataset(d.train));
  EXPECT_EQ(load_raw_dataset(dir.str("train.kdds"), Split::val).split, Split::val);
}

TEST(RawIo, DistinctErrors) {
  auto d = synth_dataset(4, 3, 5, 4, 4);
  const auto bytes = encode_raw_dataset(d.train);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_EQ(error_kind_of([&] { decode_raw_dataset(bad_magic); }), ErrorKind::bad_magic);
  EXPECT_EQ(error_kind_of([&] { decode_raw_dataset(bytes.substr(0, bytes.size() - 1)); }), ErrorKind::truncated);
  EXPECT_EQ(error_kind_of([&] { decode_raw_dataset(bytes.substr(0, 10)); }), ErrorKind::truncated);
  auto bad_label = bytes;
  bad_label[24] = 7;  // first label, low byte; C = 3
  EXPECT_EQ(error_kind_of([&] { decode_raw_dataset(bad_label); }), ErrorKind::out_of_range);
  EXPECT_EQ(error_kind_of([&] { decode_raw_dataset(bytes + "x"); }), ErrorKind::schema);
  EXPECT_EQ(error_kind_of([] { load_raw_dataset("/nonexistent/kdlab.kdds"); }), ErrorKind::io);
}

TEST(RawIo, CifarBatchDecoding) {
  std::string rec(1 + 3072, '\0');
  rec[0] = 7;
  rec[1] = static_cast<char>(255);         // R of pixel 0
  rec[1 + 1024 + 1] = static_cast<char>(51);  // G of pixel 1
  auto d = decode_cifar_binary({rec + rec}, false);
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.labels[0], 7u);
  EXPECT_EQ(d.pixels[0], 1.0f);
  EXPECT_EQ(d.pixels[3 + 1], 0.2f);
  EXPECT_EQ(error_kind_of([&] { decode_cifar_binary({rec.substr(1)}, false); }), ErrorKind::truncated);
  rec[0] = 12;
  EXPECT_EQ(error_kind_of([&] { decode_cifar_binary({rec}, false); }), ErrorKind::out_of_range);
}
