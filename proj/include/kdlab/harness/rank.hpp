#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "kdlab/core.hpp"
#include "kdlab/harness/record.hpp"

namespace kdl::harness {

struct TrialScore {
  std::string trial;
  double affinity = 0.0;
  double val_acc = 0.0;
};

struct Ranking {
  std::vector<TrialScore> by_affinity;  // ascending
  std::vector<TrialScore> by_val_acc;   // descending
  std::string min_affinity;
  std::string max_val_acc;
};

/// Sorts trials both ways. Ties keep input order.
inline Ranking rank_trials(const std::vector<TrialScore>& scores) {
  if (scores.empty()) fail(ErrorKind::argument, "rank_trials: no records");
  Ranking r;
  r.by_affinity = scores;
  std::stable_sort(r.by_affinity.begin(), r.by_affinity.end(),
                   [](const TrialScore& a, const TrialScore& b) { return a.affinity < b.affinity; });
  r.by_val_acc = scores;
  std::stable_sort(r.by_val_acc.begin(), r.by_val_acc.end(),
                   [](const TrialScore& a, const TrialScore& b) { return a.val_acc > b.val_acc; });
  r.min_affinity = r.by_affinity.front().trial;
  r.max_val_acc = r.by_val_acc.front().trial;
  return r;
}

inline Ranking rank_trials(const std::vector<RunRecord>& records) {
  std::vector<TrialScore> s;
  for (const auto& rec : records) s.push_back({rec.trial, rec.affinity, rec.final_val_acc});
  return rank_trials(s);
}

}  // namespace kdl::harness
