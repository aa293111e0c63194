#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "kdlab/datagen/longtail.hpp"
#include "kdlab/datagen/rawio.hpp"
#include "kdlab/datagen/synth.hpp"
#include "kdlab/distill/train.hpp"
#include "kdlab/harness/config.hpp"
#include "kdlab/harness/record.hpp"
#include "kdlab/netcore/checkpoint.hpp"

namespace kdl::harness {

namespace fs = std::filesystem;

/// Training and validation data described by the dataset section.
inline data::SplitDataset load_experiment_data(const ExperimentConfig& cfg) {
  data::SplitDataset d;
  const auto& dc = cfg.dataset;
  if (dc.source == "raw") {
    d.train = data::load_raw_dataset(dc.train_path, data::Split::train);
    d.val = data::load_raw_dataset(dc.val_path, data::Split::val);
    if (d.train.height != d.val.height || d.train.width != d.val.width || d.train.channels != d.val.channels)
      fail(ErrorKind::config, "raw train and val files disagree on image size");
    const std::size_t classes = std::max(d.train.classes, d.val.classes);
    d.train.classes = d.val.classes = classes;
  } else {
    d = data::synth_dataset(dc.seed, dc.classes, dc.per_class, dc.height, dc.width);
  }
  if (dc.imbalance > 1.0) d.train = data::longtail_subsample(d.train, dc.imbalance, dc.seed);
  return d;
}

/// Config with the dataset geometry taken from the loaded data.
inline ExperimentConfig fit_to_data(ExperimentConfig cfg, const data::SplitDataset& d) {
  cfg.dataset.height = d.train.height;
  cfg.dataset.width = d.train.width;
  cfg.dataset.classes = d.train.classes;
  return cfg;
}

/// All 2^(K+1) policy assignments. The student policy varies fastest, then teacher 1, teacher 2, ...
inline std::vector<distill::TrialSpec> enumerate_trials(std::size_t k, const std::vector<data::PolicyKind>& policies,
                                                        const std::string& dataset_id = "synthetic", bool hkd = false) {
  if (k == 0) fail(ErrorKind::config, "grid needs at least one teacher");
  if (policies.size() != 2) fail(ErrorKind::config, "grid needs exactly two policies");
  std::vector<distill::TrialSpec> out;
  const std::size_t n = std::size_t{1} << (k + 1);
  for (std::size_t code = 0; code < n; ++code) {
    distill::TrialSpec t;
    t.student_policy = policies[code & 1];
    for (std::size_t j = 0; j < k; ++j) t.teacher_policies.push_back(policies[(code >> (j + 1)) & 1]);
    t.dataset_id = dataset_id;
    t.hkd = hkd;
    out.push_back(t);
  }
  return out;
}

/// Seed for teacher slot k (0-based) under a run seed.
inline std::uint64_t teacher_seed(std::uint64_t seed, std::size_t k) { return stream_key(seed, Stream::teacher_seed, k + 1); }

/// Run fn(i) for i in [0, n) on up to `threads` workers.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

template <typename T>
struct TeacherEntry {
  net::ConvNetSpec spec;
  net::ModelParams<T> params;
  RunRecord record;
  std::string key;
};

/// Content-addressed teacher store: (dataset, architecture and recipe, policy, seed) -> trained teacher.
/// Each key is trained at most once; a directory, if given, persists checkpoints across processes.
template <typename T>
class TeacherCache {
 public:
  explicit TeacherCache(std::string dir = {}) : dir_(std::move(dir)) {}

  static std::string make_key(const data::SplitDataset& d, const net::ConvNetSpec& spec,
                              const distill::TrainConfig& recipe, const data::AugmentPolicy& policy,
                              std::uint64_t seed) {
    std::string desc = spec.to_text() + distill::to_json(recipe).dump() + distill::to_json(policy).dump() +
                       std::to_string(seed) + (sizeof(T) == 4 ? "f32" : "f64");
    std::uint64_t h = fnv1a(desc.data(), desc.size(), d.train.fingerprint() ^ mix64(d.val.fingerprint()));
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }

  const TeacherEntry<T>& get(const data::SplitDataset& d, const net::ConvNetSpec& spec,
                             const distill::TrainConfig& recipe, const data::AugmentPolicy& policy,
                             std::uint64_t seed, std::size_t ece_bins) {
    const std::string key = make_key(d, spec, recipe, policy, seed);
    Slot* slot;
    {
      std::lock_guard lock(mu_);
      auto& p = slots_[key];
      if (!p) p = std::make_unique<Slot>();
      slot = p.get();
    }
    // First caller populates the slot; concurrent callers for the same key wait here.
    std::lock_guard fill(slot->mu);
    if (!slot->ready) {
      slot->entry.key = key;
      if (!try_load(key, slot->entry)) {
        auto trained = distill::train_teacher<T>(spec, d.train, d.val, policy, recipe, seed, ece_bins);
        // Use the checkpoint round-trip so fresh and reloaded teachers are bit-identical.
        const std::string bytes = net::encode_checkpoint(trained.spec, trained.params);
        auto ck = net::decode_checkpoint<T>(bytes);
        slot->entry.spec = ck.spec;
        slot->entry.params = std::move(ck.params);
        slot->entry.record = std::move(trained.record);
        if (!dir_.empty()) {
          fs::create_directories(dir_);
          binio::write_file(path(key, ".kdlb"), bytes);
          persist_record(slot->entry.record, path(key, ".jsonl"));
        }
        ++trainings_;
      } else {
        ++loads_;
      }
      slot->ready = true;
    }
    return slot->entry;
  }

  std::size_t trainings() const { return trainings_; }
  std::size_t loads() const { return loads_; }

 private:
  struct Slot {
    std::mutex mu;
    bool ready = false;
    TeacherEntry<T> entry;
  };

  std::string path(const std::string& key, const char* ext) const { return (fs::path(dir_) / (key + ext)).string(); }

  bool try_load(const std::string& key, TeacherEntry<T>& e) {
    if (dir_.empty() || !fs::exists(path(key, ".kdlb")) || !fs::exists(path(key, ".jsonl"))) return false;
    auto ck = net::load_checkpoint<T>(path(key, ".kdlb"));
    e.spec = ck.spec;
    e.params = std::move(ck.params);
    e.record = load_record(path(key, ".jsonl"));
    return true;
  }

  std::string dir_;
  std::mutex mu_;
  std::map<std::string, std::unique_ptr<Slot>> slots_;
  std::atomic<std::size_t> trainings_{0}, loads_{0};
};

struct TrialFailure {
  std::string trial;
  std::string message;
};

struct GridOptions {
  bool hkd = false;
  std::string out_dir;  // empty: nothing is written
  bool include_timing = false;
  std::function<void(const distill::TrialSpec&)> before_trial;  // test hook
};

struct GridResult {
  bool hkd = false;
  std::vector<RunRecord> records;  // successful trials, enumeration order
  std::vector<RunRecord> teacher_records;
  std::vector<TrialFailure> failures;
  std::size_t teacher_trainings = 0;

  const RunRecord* find(const std::string& trial) const {
    for (const auto& r : records)
      if (r.trial == trial) return &r;
    return nullptr;
  }
};

/// Data, teachers and cached teacher logits shared by the grids of one experiment.
template <typename T>
struct GridContext {
  ExperimentConfig cfg;
  data::SplitDataset data;
  TeacherCache<T> teachers;
  distill::TeacherLogitCache<T> logits;

  GridContext(const ExperimentConfig& c, data::SplitDataset d, const std::string& out_dir)
      : cfg(fit_to_data(c, d)),
        data(std::move(d)),
        teachers(out_dir.empty() ? std::string{} : (fs::path(out_dir) / c.grid.cache_dir).string()) {}

  GridContext(const ExperimentConfig& c, const std::string& out_dir)
      : GridContext(c, load_experiment_data(c), out_dir) {}
};

inline std::string mode_name(bool hkd) { return hkd ? "hkd" : "vkd"; }

/// Teacher for a slot (0-based) and policy, trained on first use.
template <typename T>
const TeacherEntry<T>& grid_teacher(GridContext<T>& ctx, std::size_t slot, data::PolicyKind policy) {
  const auto& cfg = ctx.cfg;
  return ctx.teachers.get(ctx.data, cfg.teacher_spec(ctx.data.train.channels), cfg.teacher.train, cfg.policy(policy),
                          teacher_seed(cfg.seed, slot), cfg.distill.ece_bins);
}

/// Distils one grid cell. The record's config carries the whole experiment and the teacher keys.
template <typename T>
distill::TrainedModel<T> run_trial(GridContext<T>& ctx, const distill::TrialSpec& trial) {
  const auto& cfg = ctx.cfg;
  if (trial.teacher_policies.size() != cfg.grid.teachers)
    fail(ErrorKind::config, "trial ", trial.label(), " names ", trial.teacher_policies.size(), " teachers, config has ",
         cfg.grid.teachers);
  std::vector<distill::TeacherRef<T>> refs;
  nlohmann::json keys = nlohmann::json::array();
  for (std::size_t j = 0; j < trial.teacher_policies.size(); ++j) {
    const auto& e = grid_teacher(ctx, j, trial.teacher_policies[j]);
    refs.push_back({&e.spec, &e.params, distill::View::full});
    keys.push_back(e.key);
  }
  auto s = distill::distill_student<T>(cfg.student_spec(ctx.data.train.channels), refs, ctx.data.train, ctx.data.val,
                                       trial, cfg.policy(trial.student_policy), cfg.distill_config(), std::nullopt,
                                       &ctx.logits);
  s.record.config["experiment"] = to_json(cfg);
  s.record.config["precision"] = sizeof(T) == 4 ? "f32" : "f64";
  s.record.config["teacher_keys"] = keys;
  return s;
}

/// One full augmentation-permutation grid over a prepared context.
template <typename T>
GridResult run_grid(GridContext<T>& ctx, const GridOptions& opt = {}) {
  const auto& cfg = ctx.cfg;
  const std::size_t k = cfg.grid.teachers;
  if (opt.hkd && k != 2) fail(ErrorKind::config, "hKD grids need exactly 2 teachers, got ", k);
  const auto trials = enumerate_trials(k, cfg.grid.policies, cfg.dataset.id(), opt.hkd);
  const std::size_t before = ctx.teachers.trainings();

  // Every distinct (slot, policy) teacher up front, so trials only ever read the cache.
  std::vector<std::pair<std::size_t, data::PolicyKind>> jobs;
  for (std::size_t j = 0; j < k; ++j)
    for (auto p : cfg.grid.policies) jobs.emplace_back(j, p);
  std::vector<std::optional<RunRecord>> teacher_records(jobs.size());
  parallel_for(jobs.size(), cfg.threads, [&](std::size_t i) {
    try {
      RunRecord r = grid_teacher(ctx, jobs[i].first, jobs[i].second).record;
      r.trial = "T" + std::to_string(jobs[i].first + 1) + distill::policy_letter(jobs[i].second);
      teacher_records[i] = std::move(r);
    } catch (const std::exception&) {
      // Surfaces again, with its message, in every trial that needs this teacher.
    }
  });

  GridResult result;
  result.hkd = opt.hkd;
  for (auto& r : teacher_records)
    if (r) result.teacher_records.push_back(std::move(*r));

  std::vector<std::optional<RunRecord>> out(trials.size());
  std::vector<std::string> errors(trials.size());
  parallel_for(trials.size(), cfg.threads, [&](std::size_t i) {
    try {
      if (opt.before_trial) opt.before_trial(trials[i]);
      out[i] = run_trial(ctx, trials[i]).record;
    } catch (const std::exception& e) {
      errors[i] = e.what();
    }
  });

  for (std::size_t i = 0; i < trials.size(); ++i) {
    if (out[i]) {
      result.records.push_back(std::move(*out[i]));
    } else {
      result.failures.push_back({trials[i].label(), errors[i]});
    }
  }
  result.teacher_trainings = ctx.teachers.trainings() - before;

  if (!opt.out_dir.empty()) {
    const fs::path dir = fs::path(opt.out_dir) / mode_name(opt.hkd);
    fs::create_directories(dir);
    for (const auto& r : result.records) persist_record(r, (dir / (r.trial + ".jsonl")).string(), opt.include_timing);
    nlohmann::json summary;
    summary["mode"] = mode_name(opt.hkd);
    summary["seed"] = cfg.seed;
    summary["trials"] = nlohmann::json::array();
    for (const auto& t : trials) summary["trials"].push_back(t.label());
    summary["failed"] = nlohmann::json::array();
    for (const auto& f : result.failures) summary["failed"].push_back({{"trial", f.trial}, {"error", f.message}});
    binio::write_file((dir / "summary.json").string(), summary.dump(2) + "\n");
  }
  return result;
}

template <typename T>
GridResult run_grid(const ExperimentConfig& cfg, const GridOptions& opt = {}) {
  GridContext<T> ctx(cfg, opt.out_dir);
  return run_grid(ctx, opt);
}

}  // namespace kdl::harness
