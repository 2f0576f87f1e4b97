#pragma once

// Position utilities, shared profiles and utility groups.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tonic/source_task.hpp"

namespace tonic {

enum class UtilityMode { Grad, Mask };

inline std::string_view to_string(UtilityMode m) { return m == UtilityMode::Grad ? "grad" : "mask"; }

inline UtilityMode parse_utility_mode(std::string_view s) {
  if (s == "grad") return UtilityMode::Grad;
  if (s == "mask") return UtilityMode::Mask;
  throw std::invalid_argument("unknown utility mode: " + std::string(s));
}

/// w_i = ||dL/de_i|| at the clean embedding sequence.
inline std::vector<double> grad_utility(const LabeledSample& s, const EmbeddingTable& table, const TaskHead& head) {
  const Matrix g = loss_gradient_wrt_embeddings(head, embed(s.tokens, table), s.label);
  std::vector<double> w(g.rows());
  for (std::size_t i = 0; i < g.rows(); ++i) {
    double n2 = 0.0;
    for (double v : g.row(i)) n2 += v * v;
    w[i] = std::sqrt(n2);
  }
  return w;
}

/// w_i = L(Z with row i replaced by `mask_embedding`) - L(Z). May be negative.
inline std::vector<double> mask_utility(const LabeledSample& s, const EmbeddingTable& table, const TaskHead& head,
                                        std::span<const double> mask_embedding) {
  if (mask_embedding.size() != table.dim()) throw std::invalid_argument("mask_utility: mask dimension mismatch");
  Matrix z = embed(s.tokens, table);
  const double clean = task_loss(head, z, s.label);
  std::vector<double> w(z.rows());
  std::vector<double> saved(z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i) {
    std::copy(z.row(i).begin(), z.row(i).end(), saved.begin());
    std::copy(mask_embedding.begin(), mask_embedding.end(), z.row(i).begin());
    w[i] = task_loss(head, z, s.label) - clean;
    std::copy(saved.begin(), saved.end(), z.row(i).begin());
  }
  return w;
}

inline std::vector<double> sample_utility(const LabeledSample& s, const EmbeddingTable& table, const TaskHead& head,
                                          UtilityMode mode) {
  if (mode == UtilityMode::Grad) return grad_utility(s, table, head);
  const std::vector<double> zero(table.dim(), 0.0);
  return mask_utility(s, table, head, zero);
}

/// Per-position arithmetic mean of sample utilities over a calibration set.
/// The mask probe is the zero embedding.
inline std::vector<double> average_profile(std::span<const LabeledSample> samples, const EmbeddingTable& table,
                                           const TaskHead& head, UtilityMode mode) {
  if (samples.empty()) throw std::invalid_argument("average_profile: empty calibration set");
  std::vector<double> sum(samples.front().tokens.size(), 0.0);
  for (const auto& s : samples) {
    const auto w = sample_utility(s, table, head, mode);
    if (w.size() != sum.size()) throw std::invalid_argument("average_profile: inconsistent sequence lengths");
    for (std::size_t i = 0; i < w.size(); ++i) sum[i] += w[i];
  }
  for (auto& x : sum) x /= static_cast<double>(samples.size());
  return sum;
}

/// Position -> group assignment with per-group sizes and utility masses.
/// Group 0 holds the highest utilities.
struct UtilityGrouping {
  std::vector<double> profile;
  std::vector<int> group_of;       // g(i)
  std::vector<int> sizes;          // L_g
  std::vector<double> masses;      // W_g
  UtilityMode mode = UtilityMode::Grad;

  int groups() const { return static_cast<int>(sizes.size()); }
  std::size_t length() const { return group_of.size(); }

  /// Positions of group g in ascending order.
  std::vector<int> positions(int g) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < group_of.size(); ++i)
      if (group_of[i] == g) out.push_back(static_cast<int>(i));
    return out;
  }

  friend bool operator==(const UtilityGrouping&, const UtilityGrouping&) = default;
};

/// Sorts positions by utility (descending, ties by ascending position) and
/// cuts the order into G contiguous blocks whose sizes differ by at most one;
/// the first L mod G groups get the extra position.
inline UtilityGrouping quantize_groups(std::span<const double> profile, int groups,
                                       UtilityMode mode = UtilityMode::Grad) {
  const int length = static_cast<int>(profile.size());
  if (groups < 1 || groups > length) throw std::invalid_argument("quantize_groups: G must lie in [1, L]");
  std::vector<int> order(static_cast<std::size_t>(length));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return profile[static_cast<std::size_t>(a)] > profile[static_cast<std::size_t>(b)];
  });
  UtilityGrouping out;
  out.profile.assign(profile.begin(), profile.end());
  out.mode = mode;
  out.group_of.assign(static_cast<std::size_t>(length), 0);
  out.sizes.assign(static_cast<std::size_t>(groups), length / groups);
  for (int g = 0; g < length % groups; ++g) ++out.sizes[static_cast<std::size_t>(g)];
  out.masses.assign(static_cast<std::size_t>(groups), 0.0);
  std::size_t cursor = 0;
  for (int g = 0; g < groups; ++g)
    for (int j = 0; j < out.sizes[static_cast<std::size_t>(g)]; ++j, ++cursor) {
      const int pos = order[cursor];
      out.group_of[static_cast<std::size_t>(pos)] = g;
      out.masses[static_cast<std::size_t>(g)] += profile[static_cast<std::size_t>(pos)];
    }
  return out;
}

}  // namespace tonic
