#pragma once

// Offline calibration of group-wise confidence thresholds by coordinate
// search over a finite grid.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <vector>

#include "tonic/completion.hpp"
#include "tonic/gating.hpp"
#include "tonic/utility.hpp"

namespace tonic {

struct CalibrationConfig {
  std::vector<double> grid = default_grid();
  int passes = 2;
  double initial = 0.5;
  bool shared_start = true;  // line search over a common threshold before the per-group passes

  /// {0.00, 0.05, ..., 1.00}
  static std::vector<double> default_grid() {
    std::vector<double> g;
    for (int i = 0; i <= 20; ++i) g.push_back(i / 20.0);
    return g;
  }

  void validate() const {
    if (grid.empty()) throw std::invalid_argument("CalibrationConfig: empty threshold grid");
    for (std::size_t i = 0; i < grid.size(); ++i) {
      if (!(grid[i] >= 0.0 && grid[i] <= 1.0)) throw std::invalid_argument("CalibrationConfig: grid outside [0, 1]");
      if (i > 0 && !(grid[i] > grid[i - 1])) throw std::invalid_argument("CalibrationConfig: grid must be ascending");
    }
    if (passes < 1) throw std::invalid_argument("CalibrationConfig: passes must be >= 1");
    if (!(initial >= 0.0 && initial <= 1.0)) throw std::invalid_argument("CalibrationConfig: bad initial threshold");
  }
};

struct CalibrationResult {
  GatingPolicy policy;
  std::vector<double> trace;  // objective at the start and after every group update
  double initial_objective = 0.0;
  double objective = 0.0;
};

/// Coordinate search: for each pass and each group, evaluates every grid
/// value with the other thresholds held fixed and moves to the best one only
/// if it strictly improves on the incumbent. Among equal grid minimizers the
/// lowest threshold wins.
///
/// Per-group moves can stall when the groups are coupled through completion
/// (lowering one group alone may hurt while lowering all of them helps), so
/// the passes are preceded by one line search over a shared threshold, under
/// the same strict-improvement rule.
template <class Objective>
CalibrationResult calibrate(const CalibrationConfig& config, int groups, Objective&& objective) {
  config.validate();
  if (groups < 1) throw std::invalid_argument("calibrate: need at least one group");
  CalibrationResult out;
  out.policy = GatingPolicy::uniform(groups, config.initial);
  double current = objective(out.policy);
  out.initial_objective = current;
  out.trace.push_back(current);
  if (config.shared_start && groups > 1) {
    double best_tau = config.initial;
    for (double tau : config.grid) {
      const double v = objective(GatingPolicy::uniform(groups, tau));
      if (v < current) {
        current = v;
        best_tau = tau;
      }
    }
    out.policy = GatingPolicy::uniform(groups, best_tau);
    out.trace.push_back(current);
  }
  for (int pass = 0; pass < config.passes; ++pass) {
    for (int g = 0; g < groups; ++g) {
      GatingPolicy trial = out.policy;
      double best_value = current;
      double best_tau = out.policy.thresholds[static_cast<std::size_t>(g)];
      for (double tau : config.grid) {
        trial.thresholds[static_cast<std::size_t>(g)] = tau;
        const double v = objective(trial);
        if (v < best_value) {
          best_value = v;
          best_tau = tau;
        }
      }
      out.policy.thresholds[static_cast<std::size_t>(g)] = best_tau;
      current = best_value;
      out.trace.push_back(current);
    }
  }
  out.objective = current;
  return out;
}

/// Frozen receiver output for one validation sample.
struct Transcript {
  TokenSequence hard;
  std::vector<double> confidence;
  int label = 0;
};

/// Mean task loss over frozen transcripts after gating, completion and
/// inference. Deterministic in the thresholds. Losses are memoized per
/// transcript and erasure pattern, so an instance must not be shared across
/// threads.
class TranscriptObjective {
 public:
  TranscriptObjective(std::span<const Transcript> transcripts, const UtilityGrouping& grouping,
                      const CompletionModel& completion, const EmbeddingTable& table, const TaskHead& head)
      : transcripts_(transcripts),
        grouping_(&grouping),
        completion_(&completion),
        table_(&table),
        head_(&head),
        memo_(transcripts.size()) {
    if (transcripts_.empty()) throw std::invalid_argument("calibration: empty validation set");
  }

  double operator()(const GatingPolicy& policy) const {
    double sum = 0.0;
    std::vector<std::uint64_t> pattern;
    for (std::size_t n = 0; n < transcripts_.size(); ++n) {
      const auto& t = transcripts_[n];
      const auto gated = gate(t.hard, t.confidence, grouping_->group_of, policy);
      pattern.assign((gated.size() + 63) / 64, 0);
      for (std::size_t i = 0; i < gated.size(); ++i)
        if (gated[i] == kErased) pattern[i / 64] |= std::uint64_t{1} << (i % 64);
      auto [it, fresh] = memo_[n].try_emplace(pattern, 0.0);
      if (fresh) it->second = task_loss(*head_, embed(completion_->complete(gated), *table_), t.label);
      sum += it->second;
    }
    return sum / static_cast<double>(transcripts_.size());
  }

 private:
  std::span<const Transcript> transcripts_;
  const UtilityGrouping* grouping_;
  const CompletionModel* completion_;
  const EmbeddingTable* table_;
  const TaskHead* head_;
  mutable std::vector<std::map<std::vector<std::uint64_t>, double>> memo_;
};

}  // namespace tonic
