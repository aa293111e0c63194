#pragma once

#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "kdlab/binio.hpp"
#include "kdlab/core.hpp"
#include "kdlab/harness/abtest.hpp"
#include "kdlab/harness/rank.hpp"
#include "kdlab/metrics/export.hpp"

#ifndef KDLAB_FIXTURE_DIR
#define KDLAB_FIXTURE_DIR "data/fixtures"
#endif

namespace kdl::harness {

inline std::string default_fixture_dir() { return KDLAB_FIXTURE_DIR; }

namespace detail {

inline std::vector<std::vector<std::string>> read_csv(const std::string& path) {
  std::istringstream in(binio::read_file(path));
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ls(line);
    std::string c;
    while (std::getline(ls, c, ',')) cells.push_back(c);
    rows.push_back(std::move(cells));
  }
  if (rows.empty()) fail(ErrorKind::schema, path, ": empty table");
  return rows;
}

inline double number(const std::string& s, const std::string& where) {
  auto v = metrics::parse_real(s);
  if (!v) fail(ErrorKind::schema, where, ": '", s, "' is not a number");
  return *v;
}

}  // namespace detail

/// Per-dataset metric rows keyed by trial label, e.g. table["cifar100"]["affinity"]["T1wT2wSs"].
struct GridTable {
  std::vector<std::string> trials;  // column order
  std::vector<std::string> datasets;
  std::map<std::string, std::map<std::string, std::map<std::string, double>>> values;

  std::vector<TrialScore> scores(const std::string& dataset) const {
    std::vector<TrialScore> out;
    const auto& d = values.at(dataset);
    for (const auto& t : trials) out.push_back({t, d.at("affinity").at(t), d.at("val_acc").at(t)});
    return out;
  }
};

inline GridTable load_grid_table(const std::string& path) {
  auto rows = detail::read_csv(path);
  const auto& head = rows.front();
  if (head.size() < 3 || head[0] != "dataset" || head[1] != "metric") fail(ErrorKind::schema, path, ": bad header");
  GridTable t;
  t.trials.assign(head.begin() + 2, head.end());
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != head.size()) fail(ErrorKind::schema, path, ": line ", i + 1, " has ", r.size(), " cells");
    if (!t.values.count(r[0])) t.datasets.push_back(r[0]);
    for (std::size_t c = 2; c < r.size(); ++c)
      t.values[r[0]][r[1]][head[c]] = detail::number(r[c], path + ":" + std::to_string(i + 1));
  }
  return t;
}

inline std::vector<ABPair> load_ab_table(const std::string& path) {
  auto rows = detail::read_csv(path);
  const std::vector<std::string> want = {"dataset", "trial", "accgap_v", "accgap_h", "iou_v", "iou_h", "fid_v", "fid_h"};
  if (rows.front() != want) fail(ErrorKind::schema, path, ": bad header");
  std::vector<ABPair> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const auto& r = rows[i];
    if (r.size() != want.size()) fail(ErrorKind::schema, path, ": line ", i + 1, " has ", r.size(), " cells");
    const std::string where = path + ":" + std::to_string(i + 1);
    ABPair p;
    p.dataset = r[0];
    p.trial = r[1];
    p.accgap_v = detail::number(r[2], where);
    p.accgap_h = detail::number(r[3], where);
    p.iou_v = detail::number(r[4], where);
    p.iou_h = detail::number(r[5], where);
    p.fid_v = detail::number(r[6], where);
    p.fid_h = detail::number(r[7], where);
    out.push_back(p);
  }
  return out;
}

struct FixtureCheck {
  std::string name;
  bool ok = false;
  std::string detail;
};

/// Recomputes the published conclusions from the shipped tables.
inline std::vector<FixtureCheck> verify_fixtures(const std::string& dir = default_fixture_dir()) {
  std::vector<FixtureCheck> out;
  auto add = [&](std::string name, bool ok, std::string detail) { out.push_back({std::move(name), ok, std::move(detail)}); };

  auto ab = ab_from_pairs(load_ab_table(dir + "/ab_tables.csv"));
  add("ab pooled", ab.num == 24 && ab.exceedance == 0 && ab.p_value == 0.0,
      "num=" + std::to_string(ab.num) + " exceedance=" + std::to_string(ab.exceedance) +
          " p=" + metrics::format_real(ab.p_value));
  for (const auto& [name, r] : ab_by_dataset(ab))
    add("ab " + name, r.exceedance == 0 && r.p_value < 0.05,
        "num=" + std::to_string(r.num) + " exceedance=" + std::to_string(r.exceedance) +
            " p=" + metrics::format_real(r.p_value));

  auto t1 = load_grid_table(dir + "/table1.csv");
  auto cifar = rank_trials(t1.scores("cifar100"));
  add("table1 cifar100 min affinity", cifar.min_affinity == "T1wT2wSs" && cifar.by_affinity.front().affinity == 0.8611,
      cifar.min_affinity + " " + metrics::format_real(cifar.by_affinity.front().affinity));
  add("table1 cifar100 max val_acc", cifar.max_val_acc == "T1sT2wSs" && cifar.by_val_acc.front().val_acc == 0.8195,
      cifar.max_val_acc + " " + metrics::format_real(cifar.by_val_acc.front().val_acc));
  auto lt = rank_trials(t1.scores("imagenet_lt"));
  add("table1 imagenet_lt max val_acc", lt.max_val_acc == "T1wT2sSs" && lt.by_val_acc.front().val_acc == 0.4968,
      lt.max_val_acc + " " + metrics::format_real(lt.by_val_acc.front().val_acc));
  return out;
}

}  // namespace kdl::harness
