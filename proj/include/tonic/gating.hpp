#pragma once

// Confidence gating: accept the MAP token or declare an erasure.

#include <span>
#include <stdexcept>
#include <vector>

#include "tonic/tokenlink.hpp"
#include "tonic/utility.hpp"

namespace tonic {

using GatedSequence = TokenSequence;  // kErased marks an erasure

/// Per-position cost model for the accept/erase decision: a wrong accepted
/// token costs `utility`, an erasure costs `erasure_penalty`.
struct BayesGateSpec {
  double utility = 1.0;
  double erasure_penalty = 0.0;

  void validate() const {
    if (!(utility > 0.0)) throw std::invalid_argument("BayesGateSpec: utility must be positive");
    if (!(erasure_penalty >= 0.0 && erasure_penalty <= utility))
      throw std::invalid_argument("BayesGateSpec: erasure penalty must lie in [0, utility]");
  }

  /// Equivalent confidence threshold 1 - penalty / utility.
  double threshold() const {
    validate();
    return 1.0 - erasure_penalty / utility;
  }
};

/// Minimum-risk action for a posterior p over K tokens: the MAP token when
/// utility * (1 - max p) <= penalty, otherwise kErased. MAP ties resolve to
/// the lowest token.
inline Token bayes_optimal_action(std::span<const double> posterior, const BayesGateSpec& spec) {
  spec.validate();
  if (posterior.empty()) throw std::invalid_argument("bayes_optimal_action: empty posterior");
  std::size_t arg = 0;
  for (std::size_t k = 1; k < posterior.size(); ++k)
    if (posterior[k] > posterior[arg]) arg = k;
  const double c = posterior[arg];
  return spec.utility * (1.0 - c) <= spec.erasure_penalty ? static_cast<Token>(arg) : kErased;
}

struct GatingPolicy {
  std::vector<double> thresholds;  // tau_g per group

  explicit GatingPolicy(std::vector<double> tau = {}) : thresholds(std::move(tau)) {
    for (double t : thresholds)
      if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("GatingPolicy: thresholds must lie in [0, 1]");
  }

  static GatingPolicy uniform(int groups, double tau) {
    return GatingPolicy(std::vector<double>(static_cast<std::size_t>(groups), tau));
  }

  friend bool operator==(const GatingPolicy&, const GatingPolicy&) = default;
};

/// Accepts position i when c_i >= tau_{g(i)}.
inline GatedSequence gate(std::span<const Token> hard, std::span<const double> confidence,
                          std::span<const int> group_of, const GatingPolicy& policy) {
  if (hard.size() != confidence.size() || hard.size() != group_of.size())
    throw std::invalid_argument("gate: sequence length mismatch");
  GatedSequence out(hard.size());
  for (std::size_t i = 0; i < hard.size(); ++i) {
    const auto g = static_cast<std::size_t>(group_of[i]);
    if (g >= policy.thresholds.size()) throw std::out_of_range("gate: group without a threshold");
    out[i] = confidence[i] >= policy.thresholds[g] ? hard[i] : kErased;
  }
  return out;
}

inline GatedSequence gate(const PosteriorSequence& posteriors, const UtilityGrouping& grouping,
                          const GatingPolicy& policy) {
  return gate(posteriors.hard_decisions(), posteriors.confidences(), grouping.group_of, policy);
}

}  // namespace tonic
