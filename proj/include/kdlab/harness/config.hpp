#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdlab/core.hpp"
#include "kdlab/datagen/augment.hpp"
#include "kdlab/distill/config.hpp"
#include "kdlab/netcore/convnet.hpp"

namespace kdl::harness {

using nlohmann::json;

struct DatasetConfig {
  std::string source = "synthetic";  // or "raw"
  std::string train_path;            // raw only
  std::string val_path;              // raw only
  std::size_t classes = 10;
  std::size_t per_class = 200;
  std::size_t height = 32;
  std::size_t width = 32;
  double imbalance = 1.0;  // long-tail factor applied to the training split
  std::uint64_t seed = 0;  // data seed, independent of the run seed

  std::string id() const {
    std::ostringstream oss;
    if (source == "raw") {
      oss << "raw:" << train_path;
    } else {
      oss << "synthetic-c" << classes << "-n" << per_class << "-" << height << "x" << width << "-s" << seed;
    }
    if (imbalance != 1.0) oss << "-lt" << imbalance;
    return oss.str();
  }
};

struct ModelConfig {
  std::vector<net::BlockSpec> blocks;  // empty: built-in default
  distill::TrainConfig train;
};

// 1600 training images at batch 128 is ~12 steps an epoch; the small student stalls near
// chance for several epochs at that rate, so it gets twice the steps.
inline ModelConfig default_student_model() {
  ModelConfig m;
  m.train.batch_size = 64;
  return m;
}

struct GridConfig {
  std::size_t teachers = 2;
  std::vector<data::PolicyKind> policies = {data::PolicyKind::weak, data::PolicyKind::strong};
  std::string cache_dir = "teachers";
};

/// A whole experiment: one JSON document with dataset/augment/teacher/student/distill/grid sections.
struct ExperimentConfig {
  DatasetConfig dataset;
  data::WeakParams weak;
  data::StrongParams strong;
  ModelConfig teacher;
  ModelConfig student = default_student_model();
  distill::DistillConfig distill;  // distill.train mirrors student.train
  GridConfig grid;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  net::ConvNetSpec teacher_spec(std::size_t channels = 3) const {
    auto s = net::default_teacher_spec(dataset.height, dataset.width, channels, dataset.classes);
    if (!teacher.blocks.empty()) s.blocks = teacher.blocks;
    return s;
  }

  net::ConvNetSpec student_spec(std::size_t channels = 3) const {
    auto s = net::default_student_spec(dataset.height, dataset.width, channels, dataset.classes);
    if (!student.blocks.empty()) s.blocks = student.blocks;
    return s;
  }

  /// Policy of the given kind carrying the configured parameters. The stream id is the kind
  /// itself so that equal policies draw equal augmentations in every grid cell.
  data::AugmentPolicy policy(data::PolicyKind kind) const {
    data::AugmentPolicy p;
    p.kind = kind;
    p.weak = weak;
    p.strong = strong;
    p.stream = static_cast<std::uint64_t>(kind) + 1;
    return p;
  }

  distill::DistillConfig distill_config() const {
    auto d = distill;
    d.train = student.train;
    d.seed = seed;
    return d;
  }

  void validate() const;
};

namespace detail {

inline void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(ErrorKind::config, where, " must be a JSON object");
  std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) fail(ErrorKind::config, "unknown key '", where.empty() ? "" : where + ".", k, "'");
}

template <typename V>
void read(const json& j, const char* key, V& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<V>();
  } catch (const json::exception&) {
    fail(ErrorKind::config, where, ".", key, " has the wrong type");
  }
}

inline void read_size(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_integer() || v.get<long long>() < 0)
    fail(ErrorKind::config, where, ".", key, " must be a non-negative integer");
  out = v.get<std::size_t>();
}

inline void read_u64(const json& j, const char* key, std::uint64_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  const auto& v = j.at(key);
  if (!v.is_number_unsigned()) fail(ErrorKind::config, where, ".", key, " must be a non-negative integer");
  out = v.get<std::uint64_t>();
}

inline void read_policy(const json& j, const char* key, data::PolicyKind& out, const std::string& where) {
  std::string s;
  read(j, key, s, where);
  if (!s.empty()) out = data::policy_from_string(s);
}

inline std::vector<net::BlockSpec> parse_blocks(const json& arr, const std::string& where) {
  if (!arr.is_array() || arr.empty()) fail(ErrorKind::config, where, " must be a non-empty array");
  std::vector<net::BlockSpec> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string w = where + "[" + std::to_string(i) + "]";
    only_keys(arr[i], w, {"out_channels", "kernel", "stride", "pool"});
    net::BlockSpec b;
    read_size(arr[i], "out_channels", b.out_channels, w);
    read_size(arr[i], "kernel", b.kernel_size, w);
    read_size(arr[i], "stride", b.stride, w);
    read(arr[i], "pool", b.pool, w);
    out.push_back(b);
  }
  return out;
}

inline net::Schedule parse_schedule(const json& j, const std::string& where) {
  only_keys(j, where, {"kind", "t_max", "eta_min", "milestones", "decay"});
  std::string kind = "cosine";
  read(j, "kind", kind, where);
  if (kind == "cosine") {
    if (j.contains("milestones") || j.contains("decay"))
      fail(ErrorKind::config, where, ": milestones/decay belong to the step scheduler");
    net::CosineSchedule c;
    read_size(j, "t_max", c.t_max, where);
    read(j, "eta_min", c.eta_min, where);
    return c;
  }
  if (kind == "step") {
    if (j.contains("t_max") || j.contains("eta_min"))
      fail(ErrorKind::config, where, ": t_max/eta_min belong to the cosine scheduler");
    net::StepSchedule s;
    read(j, "milestones", s.milestones, where);
    read(j, "decay", s.decay, where);
    return s;
  }
  fail(ErrorKind::config, where, ".kind must be 'cosine' or 'step', got '", kind, "'");
}

inline void parse_model(const json& j, const std::string& where, ModelConfig& m) {
  only_keys(j, where, {"blocks", "epochs", "batch_size", "lr", "momentum", "scheduler"});
  if (j.contains("blocks")) m.blocks = parse_blocks(j.at("blocks"), where + ".blocks");
  read_size(j, "epochs", m.train.epochs, where);
  read_size(j, "batch_size", m.train.batch_size, where);
  read(j, "lr", m.train.lr, where);
  read(j, "momentum", m.train.momentum, where);
  if (j.contains("scheduler")) {
    m.train.schedule = parse_schedule(j.at("scheduler"), where + ".scheduler");
  } else {
    m.train.schedule = net::CosineSchedule{m.train.epochs, 0.0};
  }
}

}  // namespace detail

inline void ExperimentConfig::validate() const {
  if (dataset.source != "synthetic" && dataset.source != "raw")
    fail(ErrorKind::config, "dataset.source must be 'synthetic' or 'raw'");
  if (dataset.source == "raw" && (dataset.train_path.empty() || dataset.val_path.empty()))
    fail(ErrorKind::config, "raw datasets need dataset.train_path and dataset.val_path");
  if (dataset.source == "synthetic") {
    if (dataset.classes < 2) fail(ErrorKind::config, "dataset.classes must be >= 2");
    if (dataset.per_class < 5) fail(ErrorKind::config, "dataset.per_class must be >= 5");
    if (dataset.height < 4 || dataset.width < 4) fail(ErrorKind::config, "dataset images must be at least 4x4");
  }
  if (dataset.imbalance < 1.0) fail(ErrorKind::config, "dataset.imbalance must be >= 1");
  if (weak.flip_prob < 0.0 || weak.flip_prob > 1.0) fail(ErrorKind::config, "augment.weak.flip_prob must lie in [0,1]");
  if (weak.jitter < 0.0 || weak.jitter >= 1.0) fail(ErrorKind::config, "augment.weak.jitter must lie in [0,1)");
  if (strong.magnitude < 0.0 || strong.magnitude > 10.0)
    fail(ErrorKind::config, "augment.strong.magnitude must lie in [0,10]");
  for (const auto* m : {&teacher, &student}) {
    const char* name = m == &teacher ? "teacher" : "student";
    if (m->train.epochs == 0) fail(ErrorKind::config, name, ".epochs must be >= 1");
    if (m->train.batch_size == 0) fail(ErrorKind::config, name, ".batch_size must be >= 1");
    if (m->train.momentum < 0.0 || m->train.momentum >= 1.0) fail(ErrorKind::config, name, ".momentum must lie in [0,1)");
    try {
      net::validate_schedule(m->train.schedule, m->train.lr);
    } catch (const Error& e) {
      fail(ErrorKind::config, name, ": ", e.what());
    }
  }
  try {
    teacher_spec().shapes();
    student_spec().shapes();
  } catch (const Error& e) {
    fail(ErrorKind::config, "architecture: ", e.what());
  }
  distill_config().validate();
  if (grid.teachers == 0) fail(ErrorKind::config, "grid.teachers must be >= 1");
  if (grid.teachers > 8) fail(ErrorKind::config, "grid.teachers must be <= 8");
  if (grid.policies.size() != 2) fail(ErrorKind::config, "grid.policies must list exactly two policies");
  if (threads == 0) fail(ErrorKind::config, "threads must be >= 1");
}

/// Strict parse: unknown keys and wrong types raise config errors.
inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  ExperimentConfig c;
  only_keys(j, "config", {"dataset", "augment", "teacher", "student", "distill", "grid", "seed", "threads"});
  read_u64(j, "seed", c.seed, "config");
  read_size(j, "threads", c.threads, "config");

  if (j.contains("dataset")) {
    const auto& d = j.at("dataset");
    only_keys(d, "dataset",
              {"source", "train_path", "val_path", "classes", "per_class", "height", "width", "imbalance", "seed"});
    read(d, "source", c.dataset.source, "dataset");
    read(d, "train_path", c.dataset.train_path, "dataset");
    read(d, "val_path", c.dataset.val_path, "dataset");
    read_size(d, "classes", c.dataset.classes, "dataset");
    read_size(d, "per_class", c.dataset.per_class, "dataset");
    read_size(d, "height", c.dataset.height, "dataset");
    read_size(d, "width", c.dataset.width, "dataset");
    read(d, "imbalance", c.dataset.imbalance, "dataset");
    read_u64(d, "seed", c.dataset.seed, "dataset");
  }
  if (j.contains("augment")) {
    const auto& a = j.at("augment");
    only_keys(a, "augment", {"weak", "strong"});
    if (a.contains("weak")) {
      const auto& w = a.at("weak");
      only_keys(w, "augment.weak", {"pad", "flip_prob", "jitter"});
      read_size(w, "pad", c.weak.pad, "augment.weak");
      read(w, "flip_prob", c.weak.flip_prob, "augment.weak");
      read(w, "jitter", c.weak.jitter, "augment.weak");
    }
    if (a.contains("strong")) {
      const auto& s = a.at("strong");
      only_keys(s, "augment.strong", {"ops", "magnitude"});
      read_size(s, "ops", c.strong.ops, "augment.strong");
      read(s, "magnitude", c.strong.magnitude, "augment.strong");
    }
  }
  if (j.contains("teacher")) parse_model(j.at("teacher"), "teacher", c.teacher);
  if (j.contains("student")) parse_model(j.at("student"), "student", c.student);
  if (j.contains("distill")) {
    const auto& d = j.at("distill");
    only_keys(d, "distill", {"temperature", "alpha", "zscore", "zscore_epsilon", "probe_size", "iou_threshold", "ece_bins"});
    read(d, "temperature", c.distill.temperature, "distill");
    read(d, "alpha", c.distill.alpha, "distill");
    read(d, "zscore", c.distill.zscore, "distill");
    read(d, "zscore_epsilon", c.distill.zscore_epsilon, "distill");
    read_size(d, "probe_size", c.distill.probe_size, "distill");
    read(d, "iou_threshold", c.distill.iou_threshold, "distill");
    read_size(d, "ece_bins", c.distill.ece_bins, "distill");
  }
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    only_keys(g, "grid", {"teachers", "policies", "cache_dir"});
    read_size(g, "teachers", c.grid.teachers, "grid");
    if (g.contains("policies")) {
      std::vector<std::string> names;
      read(g, "policies", names, "grid");
      c.grid.policies.clear();
      for (const auto& n : names) c.grid.policies.push_back(data::policy_from_string(n));
    }
    read(g, "cache_dir", c.grid.cache_dir, "grid");
  }
  c.validate();
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorKind::config, "config is not valid JSON: ", e.what());
  }
  return parse_config(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot open config file ", path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

inline json to_json(const ExperimentConfig& c) {
  json blocks_t = distill::to_json(c.teacher_spec())["blocks"];
  json blocks_s = distill::to_json(c.student_spec())["blocks"];
  std::vector<std::string> pol;
  for (auto k : c.grid.policies) pol.emplace_back(data::to_string(k));
  auto model = [](const ModelConfig& m, json blocks) {
    json j = distill::to_json(m.train);
    j["blocks"] = std::move(blocks);
    return j;
  };
  return {{"dataset",
           {{"source", c.dataset.source},
            {"train_path", c.dataset.train_path},
            {"val_path", c.dataset.val_path},
            {"classes", c.dataset.classes},
            {"per_class", c.dataset.per_class},
            {"height", c.dataset.height},
            {"width", c.dataset.width},
            {"imbalance", c.dataset.imbalance},
            {"seed", c.dataset.seed}}},
          {"augment",
           {{"weak", {{"pad", c.weak.pad}, {"flip_prob", c.weak.flip_prob}, {"jitter", c.weak.jitter}}},
            {"strong", {{"ops", c.strong.ops}, {"magnitude", c.strong.magnitude}}}}},
          {"teacher", model(c.teacher, blocks_t)},
          {"student", model(c.student, blocks_s)},
          {"distill",
           {{"temperature", c.distill.temperature},
            {"alpha", c.distill.alpha},
            {"zscore", c.distill.zscore},
            {"zscore_epsilon", c.distill.zscore_epsilon},
            {"probe_size", c.distill.probe_size},
            {"iou_threshold", c.distill.iou_threshold},
            {"ece_bins", c.distill.ece_bins}}},
          {"grid", {{"teachers", c.grid.teachers}, {"policies", pol}, {"cache_dir", c.grid.cache_dir}}},
          {"seed", c.seed}};
}

}  // namespace kdl::harness
