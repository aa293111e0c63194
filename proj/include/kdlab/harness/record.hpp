#pragma once

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kdlab/binio.hpp"
#include "kdlab/core.hpp"
#include "kdlab/metrics/metrics.hpp"

namespace kdl::harness {

inline constexpr int record_schema_version = 1;

struct EpochMetrics {
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  double top1_agreement = 0.0;
  double kl_fidelity = 0.0;
  double mutual_information = 0.0;
  double mean_teacher_iou = 0.0;
  double mean_entropy = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

/// Everything measured for one training run (a teacher or a distilled student).
struct RunRecord {
  std::string kind = "student";
  std::string trial;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<EpochMetrics> epochs;
  double final_train_acc = 0.0;
  double final_val_acc = 0.0;
  double augmented_val_acc = 0.0;
  double affinity = 0.0;
  double ece = 0.0;
  double acc_gap = 0.0;
  metrics::ReliabilityBins reliability;
  double wall_seconds = 0.0;  // persisted only on request; breaks byte-identical records

  const EpochMetrics& last() const {
    if (epochs.empty()) fail(ErrorKind::argument, "run record '", trial, "' has no epochs");
    return epochs.back();
  }

  /// Mean of the per-epoch teacher IoU series.
  double mean_iou() const {
    double s = 0.0;
    for (const auto& e : epochs) s += e.mean_teacher_iou;
    return epochs.empty() ? 0.0 : s / static_cast<double>(epochs.size());
  }

  bool operator==(const RunRecord&) const = default;
};

namespace detail {

inline nlohmann::json epoch_json(const RunRecord& r, std::size_t i) {
  const auto& e = r.epochs[i];
  nlohmann::json j;
  j["type"] = "epoch";
  j["schema"] = record_schema_version;
  j["trial"] = r.trial;
  j["epoch"] = i;
  j["train_loss"] = e.train_loss;
  j["train_acc"] = e.train_acc;
  j["val_acc"] = e.val_acc;
  j["top1_agreement"] = e.top1_agreement;
  j["kl_fidelity"] = e.kl_fidelity;
  j["mutual_information"] = e.mutual_information;
  j["mean_teacher_iou"] = e.mean_teacher_iou;
  j["mean_entropy"] = e.mean_entropy;
  return j;
}

inline void check_schema(const nlohmann::json& j, std::size_t line) {
  if (!j.is_object() || !j.contains("schema") || !j.contains("type"))
    fail(ErrorKind::schema, "record line ", line, ": missing type/schema fields");
  if (j.at("schema").get<int>() != record_schema_version)
    fail(ErrorKind::schema, "record line ", line, ": schema version ", j.at("schema").dump(), " (expected ",
         record_schema_version, ")");
}

}  // namespace detail

/// JSON Lines: one object per epoch, then one summary object.
inline std::string encode_record(const RunRecord& r, bool include_timing = false) {
  std::string out;
  for (std::size_t i = 0; i < r.epochs.size(); ++i) out += detail::epoch_json(r, i).dump() + '\n';
  nlohmann::json s;
  s["type"] = "summary";
  s["schema"] = record_schema_version;
  s["kind"] = r.kind;
  s["trial"] = r.trial;
  s["seed"] = r.seed;
  s["config"] = r.config;
  s["epochs"] = r.epochs.size();
  s["final_train_acc"] = r.final_train_acc;
  s["final_val_acc"] = r.final_val_acc;
  s["augmented_val_acc"] = r.augmented_val_acc;
  s["affinity"] = r.affinity;
  s["ece"] = r.ece;
  s["acc_gap"] = r.acc_gap;
  nlohmann::json bins = nlohmann::json::array();
  for (const auto& b : r.reliability)
    bins.push_back({{"bin_low", b.low}, {"bin_high", b.high}, {"count", b.count}, {"accuracy", b.accuracy},
                    {"confidence", b.confidence}});
  s["reliability"] = bins;
  if (include_timing) s["wall_seconds"] = r.wall_seconds;
  out += s.dump() + '\n';
  return out;
}

inline RunRecord decode_record(const std::string& text) {
  RunRecord r;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  bool summary = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (summary) fail(ErrorKind::schema, "record line ", lineno, ": content after summary");
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
      fail(ErrorKind::truncated, "record line ", lineno, " is not complete JSON");
    }
    detail::check_schema(j, lineno);
    try {
      if (j.at("type") == "epoch") {
        if (j.at("epoch").get<std::size_t>() != r.epochs.size())
          fail(ErrorKind::schema, "record line ", lineno, ": epoch index out of sequence");
        EpochMetrics e;
        e.train_loss = j.at("train_loss").get<double>();
        e.train_acc = j.at("train_acc").get<double>();
        e.val_acc = j.at("val_acc").get<double>();
        e.top1_agreement = j.at("top1_agreement").get<double>();
        e.kl_fidelity = j.at("kl_fidelity").get<double>();
        e.mutual_information = j.at("mutual_information").get<double>();
        e.mean_teacher_iou = j.at("mean_teacher_iou").get<double>();
        e.mean_entropy = j.at("mean_entropy").get<double>();
        r.epochs.push_back(e);
      } else if (j.at("type") == "summary") {
        summary = true;
        r.kind = j.at("kind").get<std::string>();
        r.trial = j.at("trial").get<std::string>();
        r.seed = j.at("seed").get<std::uint64_t>();
        r.config = j.at("config");
        if (j.at("epochs").get<std::size_t>() != r.epochs.size())
          fail(ErrorKind::truncated, "record summary announces ", j.at("epochs").dump(), " epochs, file holds ",
               r.epochs.size());
        r.final_train_acc = j.at("final_train_acc").get<double>();
        r.final_val_acc = j.at("final_val_acc").get<double>();
        r.augmented_val_acc = j.at("augmented_val_acc").get<double>();
        r.affinity = j.at("affinity").get<double>();
        r.ece = j.at("ece").get<double>();
        r.acc_gap = j.at("acc_gap").get<double>();
        for (const auto& b : j.at("reliability"))
          r.reliability.push_back({b.at("bin_low").get<double>(), b.at("bin_high").get<double>(),
                                   b.at("count").get<std::uint64_t>(), b.at("accuracy").get<double>(),
                                   b.at("confidence").get<double>()});
        if (j.contains("wall_seconds")) r.wall_seconds = j.at("wall_seconds").get<double>();
      } else {
        fail(ErrorKind::schema, "record line ", lineno, ": unknown type ", j.at("type").dump());
      }
    } catch (const nlohmann::json::exception& ex) {
      fail(ErrorKind::schema, "record line ", lineno, ": ", ex.what());
    }
  }
  if (!summary) fail(ErrorKind::truncated, "record ends before its summary line");
  return r;
}

inline void persist_record(const RunRecord& r, const std::string& path, bool include_timing = false) {
  binio::write_file(path, encode_record(r, include_timing));
}

inline RunRecord load_record(const std::string& path) { return decode_record(binio::read_file(path)); }

}  // namespace kdl::harness
