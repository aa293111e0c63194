#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "kdlab/core.hpp"
#include "kdlab/datagen/augment.hpp"
#include "kdlab/netcore/convnet.hpp"
#include "kdlab/netcore/optim.hpp"

namespace kdl::distill {

using data::PolicyKind;

/// Supervised optimisation settings shared by teacher training and distillation.
struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  double lr = 0.1;
  double momentum = 0.9;
  net::Schedule schedule = net::CosineSchedule{10, 0.0};
};

struct DistillConfig {
  double temperature = 10.0;
  double alpha = 0.2;
  bool zscore = false;
  double zscore_epsilon = 1e-6;
  TrainConfig train;
  std::uint64_t seed = 0;
  std::size_t probe_size = 64;
  double iou_threshold = 0.5;
  std::size_t ece_bins = 15;

  void validate() const {
    if (!(temperature > 0.0)) fail(ErrorKind::config, "distill.temperature must be > 0");
    if (alpha < 0.0 || alpha > 1.0) fail(ErrorKind::config, "distill.alpha must lie in [0,1]");
    if (!(zscore_epsilon > 0.0)) fail(ErrorKind::config, "distill.zscore_epsilon must be > 0");
    if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) fail(ErrorKind::config, "distill.iou_threshold must lie in (0,1]");
    if (ece_bins == 0) fail(ErrorKind::config, "distill.ece_bins must be >= 1");
    if (train.batch_size == 0) fail(ErrorKind::config, "batch_size must be >= 1");
  }
};

inline char policy_letter(PolicyKind k) {
  switch (k) {
    case PolicyKind::identity: return 'i';
    case PolicyKind::weak: return 'w';
    case PolicyKind::strong: return 's';
  }
  return '?';
}

/// One grid cell: an augmentation policy per teacher and one for the student.
struct TrialSpec {
  std::vector<PolicyKind> teacher_policies;
  PolicyKind student_policy = PolicyKind::weak;
  std::string dataset_id = "synthetic";
  bool hkd = false;

  /// e.g. "T1sT2wSs". The hKD flag is not part of the label so paired cells share it.
  std::string label() const {
    std::string s;
    for (std::size_t k = 0; k < teacher_policies.size(); ++k)
      s += "T" + std::to_string(k + 1) + policy_letter(teacher_policies[k]);
    return s + "S" + policy_letter(student_policy);
  }
};

inline PolicyKind policy_from_letter(char c) {
  switch (c) {
    case 'i': return PolicyKind::identity;
    case 'w': return PolicyKind::weak;
    case 's': return PolicyKind::strong;
  }
  fail(ErrorKind::config, "unknown policy letter '", c, "'");
}

/// Inverse of TrialSpec::label(): "T1wT2sSs" -> teachers {weak, strong}, student strong.
inline TrialSpec parse_trial_label(const std::string& label) {
  TrialSpec t;
  std::size_t i = 0;
  while (i < label.size() && label[i] == 'T') {
    std::size_t j = i + 1;
    while (j < label.size() && std::isdigit(static_cast<unsigned char>(label[j]))) ++j;
    if (j == i + 1 || j >= label.size() || std::stoul(label.substr(i + 1, j - i - 1)) != t.teacher_policies.size() + 1)
      fail(ErrorKind::config, "malformed trial label '", label, "'");
    t.teacher_policies.push_back(policy_from_letter(label[j]));
    i = j + 1;
  }
  if (t.teacher_policies.empty() || i + 2 != label.size() || label[i] != 'S')
    fail(ErrorKind::config, "malformed trial label '", label, "'");
  t.student_policy = policy_from_letter(label[i + 1]);
  return t;
}

inline nlohmann::json schedule_json(const net::Schedule& s) {
  if (const auto* c = std::get_if<net::CosineSchedule>(&s))
    return {{"kind", "cosine"}, {"t_max", c->t_max}, {"eta_min", c->eta_min}};
  const auto& st = std::get<net::StepSchedule>(s);
  return {{"kind", "step"}, {"milestones", st.milestones}, {"decay", st.decay}};
}

inline nlohmann::json to_json(const TrainConfig& t) {
  return {{"epochs", t.epochs}, {"batch_size", t.batch_size}, {"lr", t.lr}, {"momentum", t.momentum},
          {"scheduler", schedule_json(t.schedule)}};
}

inline nlohmann::json to_json(const data::AugmentPolicy& p) {
  return {{"kind", data::to_string(p.kind)},
          {"weak", {{"pad", p.weak.pad}, {"flip_prob", p.weak.flip_prob}, {"jitter", p.weak.jitter}}},
          {"strong", {{"ops", p.strong.ops}, {"magnitude", p.strong.magnitude}}}};
}

inline nlohmann::json to_json(const DistillConfig& c) {
  return {{"temperature", c.temperature}, {"alpha", c.alpha},          {"zscore", c.zscore},
          {"zscore_epsilon", c.zscore_epsilon}, {"train", to_json(c.train)}, {"seed", c.seed},
          {"probe_size", c.probe_size},   {"iou_threshold", c.iou_threshold}, {"ece_bins", c.ece_bins}};
}

inline nlohmann::json to_json(const TrialSpec& t) {
  std::vector<std::string> tp;
  for (auto k : t.teacher_policies) tp.emplace_back(data::to_string(k));
  return {{"label", t.label()}, {"teacher_policies", tp}, {"student_policy", data::to_string(t.student_policy)},
          {"dataset", t.dataset_id}, {"hkd", t.hkd}};
}

inline nlohmann::json to_json(const net::ConvNetSpec& s) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : s.blocks)
    blocks.push_back({{"out_channels", b.out_channels}, {"kernel", b.kernel_size}, {"stride", b.stride}, {"pool", b.pool}});
  return {{"input", {s.height, s.width, s.channels}}, {"blocks", blocks}, {"classes", s.head_classes}};
}

}  // namespace kdl::distill
