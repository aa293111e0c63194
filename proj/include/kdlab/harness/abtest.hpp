#pragma once

#include <map>
#include <string>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/harness/grid.hpp"
#include "kdlab/harness/record.hpp"

namespace kdl::harness {

/// One grid cell under both variants. Fidelity is final top-1 agreement with the teacher ensemble.
struct ABPair {
  std::string dataset;
  std::string trial;
  double accgap_v = 0.0, accgap_h = 0.0;
  double iou_v = 0.0, iou_h = 0.0;
  double fid_v = 0.0, fid_h = 0.0;
  double val_v = 0.0, val_h = 0.0;
};

struct ABTestResult {
  std::vector<ABPair> pairs;
  std::size_t exceedance = 0;  // pairs with fid_h > fid_v (strict)
  std::size_t num = 0;
  double p_value = 0.0;
};

inline ABTestResult ab_from_pairs(std::vector<ABPair> pairs) {
  if (pairs.empty()) fail(ErrorKind::argument, "ab_test: no trial pairs");
  ABTestResult r;
  for (const auto& p : pairs) r.exceedance += p.fid_h > p.fid_v;
  r.num = pairs.size();
  r.p_value = static_cast<double>(r.exceedance) / static_cast<double>(r.num);
  r.pairs = std::move(pairs);
  return r;
}

/// Separate results per dataset label, in order of first appearance.
inline std::vector<std::pair<std::string, ABTestResult>> ab_by_dataset(const ABTestResult& pooled) {
  std::vector<std::string> order;
  std::map<std::string, std::vector<ABPair>> groups;
  for (const auto& p : pooled.pairs) {
    if (!groups.count(p.dataset)) order.push_back(p.dataset);
    groups[p.dataset].push_back(p);
  }
  std::vector<std::pair<std::string, ABTestResult>> out;
  for (const auto& d : order) out.emplace_back(d, ab_from_pairs(groups[d]));
  return out;
}

/// Pairs matching vKD and hKD records by trial label; the two trial sets must coincide.
inline ABTestResult ab_from_records(const std::vector<RunRecord>& vkd, const std::vector<RunRecord>& hkd,
                                    const std::string& dataset = "synthetic") {
  if (vkd.size() != hkd.size())
    fail(ErrorKind::argument, "ab_test: vKD has ", vkd.size(), " trials, hKD has ", hkd.size());
  std::vector<ABPair> pairs;
  for (const auto& v : vkd) {
    const RunRecord* h = nullptr;
    for (const auto& c : hkd)
      if (c.trial == v.trial) h = &c;
    if (!h) fail(ErrorKind::argument, "ab_test: trial ", v.trial, " has no hKD counterpart");
    pairs.push_back({dataset, v.trial, v.acc_gap, h->acc_gap, v.mean_iou(), h->mean_iou(), v.last().top1_agreement,
                     h->last().top1_agreement, v.final_val_acc, h->final_val_acc});
  }
  return ab_from_pairs(std::move(pairs));
}

struct ABRun {
  GridResult vkd;
  GridResult hkd;
  ABTestResult result;
};

/// vKD grid and hKD grid with identical seeds, sharing data and teachers.
template <typename T>
ABRun ab_test(GridContext<T>& ctx, GridOptions opt = {}) {
  if (ctx.cfg.grid.teachers != 2) fail(ErrorKind::config, "ab_test needs exactly 2 teachers");
  ABRun run;
  opt.hkd = false;
  run.vkd = run_grid(ctx, opt);
  opt.hkd = true;
  run.hkd = run_grid(ctx, opt);
  if (!run.vkd.failures.empty() || !run.hkd.failures.empty())
    fail(ErrorKind::numeric, "ab_test: ", run.vkd.failures.size() + run.hkd.failures.size(), " trial(s) failed");
  run.result = ab_from_records(run.vkd.records, run.hkd.records, ctx.cfg.dataset.id());
  return run;
}

template <typename T>
ABRun ab_test(const ExperimentConfig& cfg, const GridOptions& opt = {}) {
  GridContext<T> ctx(cfg, opt.out_dir);
  return ab_test(ctx, opt);
}

}  // namespace kdl::harness
