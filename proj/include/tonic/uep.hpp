#pragma once

// Unequal error protection: offline token-error curves per (group, policy)
// and the utility-weighted greedy scheduler that assigns one policy per group
// under a symbol budget.

#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tonic/fec.hpp"
#include "tonic/phy.hpp"
#include "tonic/tokenlink.hpp"
#include "tonic/utility.hpp"

namespace tonic {

struct ChannelSpec {
  ChannelKind kind = ChannelKind::Awgn;
  double snr_db = 10.0;
  double rician_k = kDefaultRicianK;
};

/// Link settings shared by profiling and the end-to-end pipeline.
struct LinkSettings {
  int alphabet_size = 16;
  int max_block_bits = kDefaultMaxBlockBits;
  int max_iters = kDefaultMaxIters;
  double power = 1.0;

  int bits_per_token() const { return bits_for_alphabet(alphabet_size); }
};

struct ErrorCurves {
  std::vector<std::vector<double>> rate;  // [group][policy id], token error rate in [0, 1]
  std::vector<int> inversions;            // per group: adjacent cost steps where the rate went up
  ChannelSpec condition;
  int trials = 0;

  double at(int group, int policy) const {
    return rate.at(static_cast<std::size_t>(group)).at(static_cast<std::size_t>(policy));
  }
};

/// Sends `tokens` through encode -> 16QAM -> channel -> demap -> decode with
/// the group's policy and returns the per-token posteriors.
inline PosteriorSequence transmit_group(std::span<const Token> tokens, int policy_id, const CodeBook& book,
                                        const LinkSettings& link, const ChannelRealization& ch, Rng& noise) {
  const int m = link.bits_per_token();
  const auto info = tokens_to_bits(tokens, m);
  auto coded = encode_group(book, policy_id, info, link.max_block_bits);
  const std::size_t sent = coded.size();
  coded.resize((sent + 3) / 4 * 4, 0);
  const auto block = modulate_16qam(coded, link.power);
  const auto rx = apply_channel(block, ch, noise);
  auto llrs = demap_llr(rx, ch, link.power);
  llrs.resize(sent);
  auto dec = decode_group(book, policy_id, llrs, static_cast<int>(info.size()), link.max_block_bits, link.max_iters);
  return PosteriorSequence(link.alphabet_size, std::move(dec.info_llrs));
}

/// Monte Carlo token error rate of hard decisions (no gating, no completion)
/// for every (group, policy) cell. Each trial sends one group's worth of
/// uniformly random tokens over a fresh block-fading draw.
inline ErrorCurves profile_error_curves(std::span<const int> group_sizes, const CodeBook& book,
                                        const LinkSettings& link, const ChannelSpec& channel, int trials,
                                        std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("profile_error_curves: trials must be >= 1");
  ErrorCurves out;
  out.condition = channel;
  out.trials = trials;
  const auto& policies = book.policies();
  for (std::size_t g = 0; g < group_sizes.size(); ++g) {
    std::vector<double> row(policies.size(), 0.0);
    const auto len = static_cast<std::size_t>(group_sizes[g]);
    for (const auto& pol : policies) {
      std::uint64_t errors = 0;
      TokenSequence tokens(len);
      for (int t = 0; t < trials; ++t) {
        Rng rng(derive_seed(seed, "error-curve",
                            {g, static_cast<std::uint64_t>(pol.id), static_cast<std::uint64_t>(t)}));
        for (auto& x : tokens) x = static_cast<Token>(rng.below(static_cast<std::uint64_t>(link.alphabet_size)));
        const auto ch = draw_channel(channel.kind, channel.snr_db, rng, channel.rician_k, link.power);
        const auto post = transmit_group(tokens, pol.id, book, link, ch, rng);
        for (std::size_t i = 0; i < len; ++i) errors += post.hard_decision(i) != tokens[i];
      }
      row[static_cast<std::size_t>(pol.id)] =
          static_cast<double>(errors) / (static_cast<double>(trials) * static_cast<double>(len));
    }
    int inv = 0;
    for (std::size_t p = 1; p < row.size(); ++p) inv += row[p] > row[p - 1];
    out.rate.push_back(std::move(row));
    out.inversions.push_back(inv);
  }
  return out;
}

class InfeasibleBudget : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct ProtectionProfile {
  std::vector<int> assignment;  // policy id per group
  double total_cost = 0.0;      // sum_g L_g c(pi_g), symbols
  double budget = 0.0;
  double surrogate = 0.0;       // sum_g W_g eps_g(pi_g)
  std::vector<double> trace;    // surrogate after initialization and after each upgrade
  bool uniform_start = false;   // greedy was seeded from the best uniform profile
};

struct SchedulerInputs {
  std::span<const int> sizes;      // L_g
  std::span<const double> masses;  // W_g
  const ErrorCurves* curves = nullptr;
  std::span<const ProtectionPolicy> policies;  // ids 0..P-1 in increasing cost
  int bits_per_token = 4;
};

inline double profile_cost(const SchedulerInputs& in, std::span<const int> assignment) {
  double c = 0.0;
  for (std::size_t g = 0; g < assignment.size(); ++g)
    c += in.sizes[g] * in.policies[static_cast<std::size_t>(assignment[g])].cost_per_token(in.bits_per_token);
  return c;
}

inline double profile_surrogate(const SchedulerInputs& in, std::span<const int> assignment) {
  double s = 0.0;
  for (std::size_t g = 0; g < assignment.size(); ++g)
    s += in.masses[g] * in.curves->at(static_cast<int>(g), assignment[g]);
  return s;
}

/// Budget comparisons allow this much floating-point slack (symbols).
inline constexpr double kBudgetSlack = 1e-9;

namespace detail {

inline void check_scheduler_inputs(const SchedulerInputs& in) {
  const std::size_t groups = in.sizes.size();
  if (in.masses.size() != groups || in.curves == nullptr || in.curves->rate.size() != groups)
    throw std::invalid_argument("schedule_uep: inconsistent group data");
  if (in.policies.empty()) throw std::invalid_argument("schedule_uep: empty policy set");
  for (std::size_t p = 0; p < in.policies.size(); ++p) {
    if (in.policies[p].id != static_cast<int>(p)) throw std::invalid_argument("schedule_uep: policy ids must be 0..P-1");
    if (p > 0 && !(in.policies[p].cost_per_token(in.bits_per_token) > in.policies[p - 1].cost_per_token(in.bits_per_token)))
      throw std::invalid_argument("schedule_uep: policies must be sorted by increasing cost");
  }
}

// Upgrades from `start` until no feasible upgrade has positive gain.
inline ProtectionProfile greedy_from(const SchedulerInputs& in, double budget, std::vector<int> start) {
  const std::size_t groups = in.sizes.size();
  ProtectionProfile out;
  out.budget = budget;
  out.assignment = std::move(start);
  out.total_cost = profile_cost(in, out.assignment);
  out.surrogate = profile_surrogate(in, out.assignment);
  out.trace.push_back(out.surrogate);
  while (true) {
    double best_ratio = 0.0;
    int best_g = -1, best_p = -1;
    for (std::size_t g = 0; g < groups; ++g) {
      const int cur = out.assignment[g];
      const double c_cur = in.policies[static_cast<std::size_t>(cur)].cost_per_token(in.bits_per_token);
      const double e_cur = in.curves->at(static_cast<int>(g), cur);
      for (std::size_t p = static_cast<std::size_t>(cur) + 1; p < in.policies.size(); ++p) {
        const double extra = in.sizes[g] * (in.policies[p].cost_per_token(in.bits_per_token) - c_cur);
        if (out.total_cost + extra > budget + kBudgetSlack) continue;
        const double gain = in.masses[g] * (e_cur - in.curves->at(static_cast<int>(g), static_cast<int>(p)));
        if (!(gain > 0.0)) continue;
        const double ratio = gain / extra;
        if (ratio > best_ratio) {
          best_ratio = ratio;
          best_g = static_cast<int>(g);
          best_p = static_cast<int>(p);
        }
      }
    }
    if (best_g < 0) break;
    out.assignment[static_cast<std::size_t>(best_g)] = best_p;
    out.total_cost = profile_cost(in, out.assignment);
    out.surrogate = profile_surrogate(in, out.assignment);
    out.trace.push_back(out.surrogate);
  }
  return out;
}

}  // namespace detail

/// Greedy utility-weighted scheduler. Starts every group at the cheapest
/// policy, then repeatedly applies the feasible upgrade (any strictly
/// costlier policy for one group) with the largest positive ratio
///
///   W_g (eps_g(cur) - eps_g(new)) / (L_g (c(new) - c(cur))),
///
/// ties to the lowest group and then the lowest policy id. Stops when no
/// feasible upgrade has positive gain.
///
/// The ratio rule alone can end above the best uniform profile, so the same
/// upgrade loop is also run from that profile and the lower surrogate wins
/// (ties keep the cheapest-start result).
inline ProtectionProfile schedule_uep(const SchedulerInputs& in, double budget) {
  detail::check_scheduler_inputs(in);
  const std::size_t groups = in.sizes.size();
  const std::vector<int> cheapest(groups, 0);
  const double floor_cost = profile_cost(in, cheapest);
  if (floor_cost > budget + kBudgetSlack)
    throw InfeasibleBudget("budget " + std::to_string(budget) + " below the minimum-cost profile " +
                           std::to_string(floor_cost));
  auto out = detail::greedy_from(in, budget, cheapest);

  std::vector<int> uniform;
  double uniform_value = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < in.policies.size(); ++p) {
    std::vector<int> a(groups, static_cast<int>(p));
    if (profile_cost(in, a) > budget + kBudgetSlack) continue;
    const double v = profile_surrogate(in, a);
    if (v < uniform_value) {
      uniform_value = v;
      uniform = std::move(a);
    }
  }
  if (uniform_value < out.surrogate) {
    auto alt = detail::greedy_from(in, budget, uniform);
    if (alt.surrogate < out.surrogate) {
      alt.uniform_start = true;
      return alt;
    }
  }
  return out;
}

/// Same-policy-for-every-group profile using the costliest policy that fits
/// the budget.
inline ProtectionProfile strongest_uniform_profile(const SchedulerInputs& in, double budget) {
  const std::size_t groups = in.sizes.size();
  ProtectionProfile out;
  out.budget = budget;
  for (std::size_t p = in.policies.size(); p-- > 0;) {
    std::vector<int> a(groups, static_cast<int>(p));
    if (profile_cost(in, a) <= budget + kBudgetSlack) {
      out.assignment = std::move(a);
      out.total_cost = profile_cost(in, out.assignment);
      if (in.curves) out.surrogate = profile_surrogate(in, out.assignment);
      return out;
    }
  }
  throw InfeasibleBudget("budget " + std::to_string(budget) + " admits no uniform profile");
}

}  // namespace tonic
