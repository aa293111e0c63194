#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "kdlab/attention_map.hpp"
#include "kdlab/datagen/augment.hpp"
#include "kdlab/datagen/dataset.hpp"
#include "kdlab/distill/config.hpp"
#include "kdlab/distill/losses.hpp"
#include "kdlab/harness/record.hpp"
#include "kdlab/metrics/metrics.hpp"
#include "kdlab/netcore/cam.hpp"
#include "kdlab/netcore/convnet.hpp"
#include "kdlab/netcore/optim.hpp"

namespace kdl::distill {

using data::Dataset;
using kdl::Image;
using harness::EpochMetrics;
using harness::RunRecord;

/// Which part of each image a teacher sees during distillation.
enum class View { full, left_half, right_half };

inline Image apply_view(const Image& img, View v) {
  switch (v) {
    case View::full: return img;
    case View::left_half: return data::half_crop(img, data::Side::left);
    case View::right_half: return data::half_crop(img, data::Side::right);
  }
  return img;
}

template <typename T>
Tensor<T> images_to_tensor(const std::vector<Image>& imgs) {
  if (imgs.empty()) fail(ErrorKind::shape, "images_to_tensor: empty image list");
  const auto& f = imgs.front();
  Tensor<T> out({imgs.size(), f.height, f.width, f.channels});
  T* dst = out.data();
  for (const auto& img : imgs) {
    if (img.height != f.height || img.width != f.width || img.channels != f.channels)
      fail(ErrorKind::shape, "images_to_tensor: mixed image sizes");
    for (float v : img.pixels) *dst++ = static_cast<T>(2.0f * v - 1.0f);
  }
  return out;
}

template <typename T>
Tensor<T> dataset_slice(const Dataset& d, std::size_t begin, std::size_t end) {
  Tensor<T> out({end - begin, d.height, d.width, d.channels});
  auto first = d.pixels.begin() + static_cast<std::ptrdiff_t>(begin * d.image_size());
  std::transform(first, first + static_cast<std::ptrdiff_t>((end - begin) * d.image_size()), out.data(),
                 [](float v) { return static_cast<T>(2.0f * v - 1.0f); });
  return out;
}

/// Logits for every image of `d`, evaluated in chunks.
template <typename T>
Tensor<T> predict_logits(const net::ConvNetSpec& spec, const net::ModelParams<T>& params, const Dataset& d,
                         std::size_t chunk = 128) {
  Tensor<T> out({d.size(), spec.head_classes});
  for (std::size_t b = 0; b < d.size(); b += chunk) {
    const std::size_t e = std::min(d.size(), b + chunk);
    auto res = net::forward(spec, params, dataset_slice<T>(d, b, e));
    std::copy(res.logits.values.begin(), res.logits.values.end(), out.data() + b * spec.head_classes);
  }
  return out;
}

template <typename T>
double evaluate_accuracy(const net::ConvNetSpec& spec, const net::ModelParams<T>& params, const Dataset& d) {
  if (d.size() == 0) return 0.0;
  return metrics::accuracy(predict_logits(spec, params, d), d.labels);
}

template <typename T>
struct TrainedModel {
  net::ConvNetSpec spec;
  net::ModelParams<T> params;
  RunRecord record;
};

/// A frozen teacher and the view it receives during distillation.
template <typename T>
struct TeacherRef {
  const net::ConvNetSpec* spec = nullptr;
  const net::ModelParams<T>* params = nullptr;
  View view = View::full;
};

inline std::uint64_t policy_stream(Stream base, const data::AugmentPolicy& p) {
  return static_cast<std::uint64_t>(base) ^ (p.stream << 8);
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng = keyed_rng(seed, Stream::order, epoch);
  shuffle(idx, rng);
  return idx;
}

namespace detail {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, const Labels& labels) {
  const std::size_t c = logits.dim(1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) n += net::argmax_row(logits.data() + i * c, c) == labels[i];
  return n;
}

template <typename T>
void finish_record(RunRecord& rec, const net::ConvNetSpec& spec, const net::ModelParams<T>& params,
                   const Dataset& val, const data::AugmentPolicy& policy, std::uint64_t seed, std::size_t ece_bins) {
  const auto& last = rec.last();
  rec.final_train_acc = last.train_acc;
  rec.final_val_acc = last.val_acc;
  rec.acc_gap = rec.final_train_acc - rec.final_val_acc;
  auto val_aug = data::augmented_val_set(val, policy, seed);
  rec.augmented_val_acc = evaluate_accuracy(spec, params, val_aug);
  rec.affinity = metrics::affinity(rec.augmented_val_acc, rec.final_val_acc);
  auto probs = metrics::softmax_rows(predict_logits(spec, params, val));
  auto e = metrics::ece(probs, val.labels, ece_bins);
  rec.ece = e.ece;
  rec.reliability = std::move(e.bins);
}

// Attention map of a half view placed back into the original image columns.
inline AttentionMap place_half(const AttentionMap& m, View v) {
  if (v == View::full) return m;
  const std::size_t mid = m.width / 2;
  const std::size_t x0 = v == View::left_half ? 0 : mid;
  const std::size_t w = v == View::left_half ? mid : m.width - mid;
  BasicImage<double> src(m.height, m.width, 1);
  src.pixels = m.values;
  auto small = resize_bilinear(src, m.height, w);
  AttentionMap out(m.height, m.width, 0.0, m.threshold);
  for (std::size_t y = 0; y < m.height; ++y)
    for (std::size_t x = 0; x < w; ++x) out.at(y, x0 + x) = small.at(y, x, 0);
  return out;
}

}  // namespace detail

/// Per-teacher attention maps (each teacher's own top-1 class) for a batch of images.
template <typename T>
std::vector<std::vector<AttentionMap>> teacher_attention(const std::vector<TeacherRef<T>>& teachers,
                                                         const std::vector<Image>& images, double threshold) {
  std::vector<std::vector<AttentionMap>> maps(teachers.size());
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    const auto& t = teachers[k];
    std::vector<Image> views;
    views.reserve(images.size());
    for (const auto& img : images) views.push_back(apply_view(img, t.view));
    auto res = net::forward(*t.spec, *t.params, images_to_tensor<T>(views));
    const auto& f = res.feature_maps;
    const std::size_t fh = f.dim(1), fw = f.dim(2), kc = f.dim(3), c = t.spec->head_classes;
    for (std::size_t i = 0; i < images.size(); ++i) {
      std::size_t cls = net::argmax_row(res.logits.data() + i * c, c);
      auto m = net::cam_from_features(f.data() + i * fh * fw * kc, fh, fw, kc, t.params->head_w, cls,
                                      t.spec->height, t.spec->width, threshold);
      maps[k].push_back(detail::place_half(m, t.view));
    }
  }
  return maps;
}

/// Mean IoU over all teacher pairs and images; a single teacher scores 1.
inline double mean_pairwise_iou(const std::vector<std::vector<AttentionMap>>& maps) {
  if (maps.size() < 2) return 1.0;
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < maps.size(); ++a)
    for (std::size_t b = a + 1; b < maps.size(); ++b)
      for (std::size_t i = 0; i < maps[a].size(); ++i) {
        total += metrics::attention_iou(maps[a][i], maps[b][i]);
        ++count;
      }
  return count ? total / static_cast<double>(count) : 1.0;
}

/// Supervised training with the NLL loss under the model's own augmentation policy.
template <typename T>
TrainedModel<T> train_teacher(const net::ConvNetSpec& spec, const Dataset& train, const Dataset& val,
                              const data::AugmentPolicy& policy, const TrainConfig& cfg, std::uint64_t seed,
                              std::size_t ece_bins = 15) {
  if (train.size() == 0) fail(ErrorKind::argument, "train_teacher: empty training set");
  if (spec.head_classes != train.classes)
    fail(ErrorKind::shape, "train_teacher: network has ", spec.head_classes, " classes, dataset ", train.classes);
  const auto start = std::chrono::steady_clock::now();
  TrainedModel<T> out{spec, net::init_params<T>(spec, seed), {}};
  net::OptimState<T> state(spec, cfg.lr, cfg.momentum, cfg.schedule);
  net::ForwardCache<T> cache;
  const std::uint64_t aug_stream = policy_stream(Stream::train_augment, policy);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto order = epoch_order(train.size(), seed, epoch);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0, batch_no = 0; b < order.size(); b += cfg.batch_size, ++batch_no) {
      const std::size_t e = std::min(order.size(), b + cfg.batch_size);
      std::vector<Image> views;
      Labels labels;
      for (std::size_t i = b; i < e; ++i) {
        Rng rng = data::augment_rng(seed, aug_stream, epoch, order[i]);
        views.push_back(data::augment(train.image(order[i]), policy, rng));
        labels.push_back(train.labels[order[i]]);
      }
      auto logits = net::forward_cached(spec, out.params, images_to_tensor<T>(views), cache);
      auto loss = nll_loss(logits, labels);
      if (!std::isfinite(static_cast<double>(loss.value)))
        fail(ErrorKind::numeric, "train_teacher: non-finite loss at epoch ", epoch, " batch ", batch_no);
      loss_sum += static_cast<double>(loss.value) * static_cast<double>(e - b);
      correct += detail::count_correct(logits, labels);
      auto grads = net::backward_cached(spec, out.params, cache, loss.grad, "nll_loss");
      net::sgd_step(out.params, grads, state, epoch);
    }
    EpochMetrics m;
    m.train_loss = loss_sum / static_cast<double>(train.size());
    m.train_acc = static_cast<double>(correct) / static_cast<double>(train.size());
    auto val_logits = predict_logits(spec, out.params, val);
    m.val_acc = val.size() ? metrics::accuracy(val_logits, val.labels) : 0.0;
    m.mean_entropy = val.size() ? metrics::mean_entropy(metrics::softmax_rows(val_logits)) : 0.0;
    out.record.epochs.push_back(m);
  }

  out.record.kind = "teacher";
  out.record.seed = seed;
  out.record.trial = std::string("T") + policy_letter(policy.kind);
  out.record.config = {{"train", to_json(cfg)}, {"augment", to_json(policy)}, {"network", to_json(spec)}};
  if (cfg.epochs > 0 && val.size() > 0) detail::finish_record(out.record, spec, out.params, val, policy, seed, ece_bins);
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Teacher logits for one batch of student views, honouring each teacher's view selector.
template <typename T>
std::vector<Tensor<T>> teacher_logits(const std::vector<TeacherRef<T>>& teachers, const std::vector<Image>& views,
                                      const Tensor<T>& full_batch) {
  std::vector<Tensor<T>> out;
  for (const auto& t : teachers) {
    if (t.view == View::full) {
      out.push_back(net::forward(*t.spec, *t.params, full_batch).logits);
    } else {
      std::vector<Image> halves;
      halves.reserve(views.size());
      for (const auto& v : views) halves.push_back(apply_view(v, t.view));
      out.push_back(net::forward(*t.spec, *t.params, images_to_tensor<T>(halves)).logits);
    }
  }
  return out;
}

/// Memo of frozen-teacher logits on student views. Views depend only on (seed, student policy, epoch,
/// sample), so grid cells sharing a teacher and a student policy can reuse them. Only valid while the
/// teachers it has seen stay alive and unmodified, and for a single batch size.
template <typename T>
class TeacherLogitCache {
 public:
  using Key = std::tuple<const void*, int, std::uint64_t, std::uint64_t, std::size_t, std::size_t>;

  template <typename F>
  Tensor<T> get(const Key& key, F&& compute) {
    {
      std::lock_guard lock(mu_);
      if (auto it = memo_.find(key); it != memo_.end()) return it->second;
    }
    Tensor<T> v = compute();
    std::lock_guard lock(mu_);
    return memo_.emplace(key, std::move(v)).first->second;
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return memo_.size();
  }

 private:
  mutable std::mutex mu_;
  std::map<Key, Tensor<T>> memo_;
};

/// Ensemble distillation of a fresh (or given) student against frozen teachers.
template <typename T>
TrainedModel<T> distill_student(const net::ConvNetSpec& student_spec, const std::vector<TeacherRef<T>>& teachers,
                                const Dataset& train, const Dataset& val, const TrialSpec& trial,
                                const data::AugmentPolicy& student_policy, const DistillConfig& cfg,
                                const std::optional<net::ModelParams<T>>& init = std::nullopt,
                                TeacherLogitCache<T>* logit_cache = nullptr) {
  cfg.validate();
  if (teachers.empty()) fail(ErrorKind::argument, "distill_student: no teachers");
  if (trial.hkd && teachers.size() != 2) fail(ErrorKind::argument, "distill_student: hKD needs exactly 2 teachers");
  for (std::size_t k = 0; k < teachers.size(); ++k) {
    if (teachers[k].spec->head_classes != student_spec.head_classes)
      fail(ErrorKind::shape, "distill_student: teacher ", k + 1, " predicts ", teachers[k].spec->head_classes,
           " classes, student ", student_spec.head_classes);
    if (teachers[k].spec->height != student_spec.height || teachers[k].spec->width != student_spec.width)
      fail(ErrorKind::shape, "distill_student: teacher ", k + 1, " input size differs from the student's");
  }
  if (student_spec.head_classes != train.classes)
    fail(ErrorKind::shape, "distill_student: student has ", student_spec.head_classes, " classes, dataset ",
         train.classes);
  if (student_policy.kind != trial.student_policy)
    fail(ErrorKind::argument, "distill_student: student policy does not match trial ", trial.label());

  std::vector<TeacherRef<T>> refs = teachers;
  if (trial.hkd) {
    refs[0].view = View::left_half;
    refs[1].view = View::right_half;
  }

  const auto start = std::chrono::steady_clock::now();
  const std::uint64_t seed = cfg.seed;
  const std::size_t classes = student_spec.head_classes;
  TrainedModel<T> out{student_spec,
                      init ? *init : net::init_params<T>(student_spec, stream_key(seed, Stream::init, 1)), {}};
  net::check_params(student_spec, out.params);
  net::OptimState<T> state(student_spec, cfg.train.lr, cfg.train.momentum, cfg.train.schedule);
  net::ForwardCache<T> cache;
  LossWeights weights{cfg.temperature, cfg.alpha, cfg.zscore, cfg.zscore_epsilon};
  const std::uint64_t view_stream = policy_stream(Stream::student_view, student_policy);
  const std::uint64_t probe_stream = policy_stream(Stream::probe_view, student_policy);
  const std::size_t probe_n = std::min(cfg.probe_size, val.size());

  for (std::size_t epoch = 0; epoch < cfg.train.epochs; ++epoch) {
    auto order = epoch_order(train.size(), seed, epoch);
    double loss_sum = 0.0, kl_sum = 0.0, entropy_sum = 0.0;
    std::size_t agree = 0, correct = 0;
    metrics::JointHistogram joint(classes);

    for (std::size_t b = 0, batch_no = 0; b < order.size(); b += cfg.train.batch_size, ++batch_no) {
      const std::size_t e = std::min(order.size(), b + cfg.train.batch_size);
      std::vector<Image> views;
      Labels labels;
      for (std::size_t i = b; i < e; ++i) {
        Rng rng = data::augment_rng(seed, view_stream, epoch, order[i]);
        views.push_back(data::augment(train.image(order[i]), student_policy, rng));
        labels.push_back(train.labels[order[i]]);
      }
      const Tensor<T> batch = images_to_tensor<T>(views);
      std::vector<Tensor<T>> t_logits;
      if (logit_cache) {
        for (const auto& r : refs) {
          typename TeacherLogitCache<T>::Key key{r.params, static_cast<int>(r.view), view_stream, seed, epoch, batch_no};
          t_logits.push_back(logit_cache->get(key, [&] { return teacher_logits<T>({r}, views, batch).front(); }));
        }
      } else {
        t_logits = teacher_logits(refs, views, batch);
      }
      auto s_logits = net::forward_cached(student_spec, out.params, batch, cache);

      LossTerms terms;
      auto loss = total_loss(s_logits, t_logits, labels, weights, &terms);
      if (!std::isfinite(static_cast<double>(loss.value)))
        fail(ErrorKind::numeric, "distill_student: non-finite loss at epoch ", epoch, " batch ", batch_no,
             " (nll=", terms.nll, ")");
      loss_sum += static_cast<double>(loss.value) * static_cast<double>(e - b);
      correct += detail::count_correct(s_logits, labels);

      // Fidelity bookkeeping at temperature 1, teacher probabilities averaged.
      std::vector<metrics::ProbBatch> tp;
      for (const auto& tl : t_logits) tp.push_back(metrics::softmax_rows(tl));
      auto ens = metrics::ensemble_average(tp);
      auto sp = metrics::softmax_rows(s_logits);
      auto ens_pred = metrics::argmax_rows(ens);
      auto s_pred = metrics::argmax_rows(sp);
      const double nb = static_cast<double>(e - b);
      kl_sum += metrics::kl_fidelity(ens, sp) * nb;
      entropy_sum += metrics::mean_entropy(sp) * nb;
      for (std::size_t i = 0; i < ens_pred.size(); ++i) {
        agree += ens_pred[i] == s_pred[i];
        joint.add(ens_pred[i], s_pred[i]);
      }

      auto grads = net::backward_cached(student_spec, out.params, cache, loss.grad, "total_loss");
      net::sgd_step(out.params, grads, state, epoch);
    }

    EpochMetrics m;
    const double n = static_cast<double>(train.size());
    m.train_loss = loss_sum / n;
    m.top1_agreement = static_cast<double>(agree) / n;
    m.kl_fidelity = kl_sum / n;
    m.mutual_information = metrics::mutual_information(joint);
    m.mean_entropy = entropy_sum / n;
    m.train_acc = static_cast<double>(correct) / n;
    m.val_acc = evaluate_accuracy(student_spec, out.params, val);
    if (probe_n > 0) {
      std::vector<Image> probe;
      for (std::size_t i = 0; i < probe_n; ++i) {
        Rng rng = data::augment_rng(seed, probe_stream, epoch, i);
        probe.push_back(data::augment(val.image(i), student_policy, rng));
      }
      m.mean_teacher_iou = mean_pairwise_iou(teacher_attention(refs, probe, cfg.iou_threshold));
    }
    out.record.epochs.push_back(m);
  }

  out.record.kind = "student";
  out.record.seed = seed;
  out.record.trial = trial.label();
  out.record.config = {{"distill", to_json(cfg)},
                       {"trial", to_json(trial)},
                       {"augment", to_json(student_policy)},
                       {"network", to_json(student_spec)}};
  if (cfg.train.epochs > 0 && val.size() > 0)
    detail::finish_record(out.record, student_spec, out.params, val, student_policy, seed, cfg.ece_bins);
  out.record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

}  // namespace kdl::distill
