#pragma once

// Per-trial token diagnostics and mergeable aggregates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "tonic/gating.hpp"

namespace tonic {

struct TrialRecord {
  TokenSequence source;     // t
  TokenSequence hard;       // t_hat
  GatedSequence gated;      // t_tilde
  TokenSequence completed;  // t_bar
  std::vector<double> confidence;
  int prediction = 0;
  int label = 0;
  double loss = 0.0;

  void validate() const {
    const auto n = source.size();
    if (hard.size() != n || gated.size() != n || completed.size() != n)
      throw std::invalid_argument("TrialRecord: sequences differ in length");
  }
};

/// Fraction of completed tokens that differ from the source.
inline double ter(const TrialRecord& r) {
  r.validate();
  if (r.source.empty()) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < r.source.size(); ++i) bad += r.completed[i] != r.source[i];
  return static_cast<double>(bad) / static_cast<double>(r.source.size());
}

/// Fraction of accepted positions whose hard decision is wrong; 0 when no
/// position is accepted.
inline double war(const TrialRecord& r) {
  r.validate();
  std::size_t accepted = 0, wrong = 0;
  for (std::size_t i = 0; i < r.source.size(); ++i) {
    if (r.gated[i] == kErased) continue;
    ++accepted;
    wrong += r.hard[i] != r.source[i];
  }
  return accepted == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(accepted);
}

inline double hard_error_rate(const TrialRecord& r) {
  r.validate();
  if (r.source.empty()) return 0.0;
  std::size_t bad = 0;
  for (std::size_t i = 0; i < r.source.size(); ++i) bad += r.hard[i] != r.source[i];
  return static_cast<double>(bad) / static_cast<double>(r.source.size());
}

inline constexpr double kWilsonZ95 = 1.959963984540054;

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline Interval wilson_interval(std::uint64_t successes, std::uint64_t n, double z = kWilsonZ95) {
  if (n == 0) return {0.0, 1.0};
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(successes) / nn;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / nn;
  const double centre = (p + z2 / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z2 / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, centre - half), std::min(1.0, centre + half)};
}

/// Running sums over trials. merge() is associative, so partial aggregates
/// from independent workers can be combined in any grouping.
struct Aggregate {
  std::uint64_t trials = 0;
  std::uint64_t correct = 0;
  std::uint64_t erasures = 0;
  std::uint64_t positions = 0;
  double sum_loss = 0.0;
  double sum_ter = 0.0;
  double sum_ter_sq = 0.0;
  double sum_war = 0.0;

  void add(const TrialRecord& r) {
    const double t = ter(r);
    ++trials;
    correct += r.prediction == r.label;
    sum_loss += r.loss;
    sum_ter += t;
    sum_ter_sq += t * t;
    sum_war += war(r);
    positions += r.source.size();
    for (Token g : r.gated) erasures += g == kErased;
  }

  Aggregate& merge(const Aggregate& o) {
    trials += o.trials;
    correct += o.correct;
    erasures += o.erasures;
    positions += o.positions;
    sum_loss += o.sum_loss;
    sum_ter += o.sum_ter;
    sum_ter_sq += o.sum_ter_sq;
    sum_war += o.sum_war;
    return *this;
  }

  double accuracy() const { return ratio(static_cast<double>(correct)); }
  double mean_loss() const { return ratio(sum_loss); }
  double mean_ter() const { return ratio(sum_ter); }
  double mean_war() const { return ratio(sum_war); }
  double erasure_rate() const {
    return positions == 0 ? 0.0 : static_cast<double>(erasures) / static_cast<double>(positions);
  }
  Interval accuracy_ci() const { return wilson_interval(correct, trials); }

  /// Binomial standard error of the accuracy estimate.
  double accuracy_se() const {
    if (trials == 0) return 0.0;
    const double p = accuracy();
    return std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
  }

  /// Standard error of the mean TER.
  double ter_se() const {
    if (trials < 2) return 0.0;
    const double n = static_cast<double>(trials);
    const double m = sum_ter / n;
    const double var = std::max(0.0, (sum_ter_sq - n * m * m) / (n - 1.0));
    return std::sqrt(var / n);
  }

 private:
  double ratio(double x) const {
    if (trials == 0) throw std::logic_error("Aggregate: no trials");
    return x / static_cast<double>(trials);
  }
};

inline Aggregate aggregate(const std::vector<TrialRecord>& records) {
  if (records.empty()) throw std::invalid_argument("aggregate: no records");
  Aggregate a;
  for (const auto& r : records) a.add(r);
  return a;
}

}  // namespace tonic
