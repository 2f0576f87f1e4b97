#pragma once

// Completion priors that fill erased positions of a gated sequence.

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "tonic/gating.hpp"
#include "tonic/source_task.hpp"

namespace tonic {

enum class CompletionKind { ExactMarkov, ModeFill };

inline std::string_view to_string(CompletionKind k) {
  return k == CompletionKind::ExactMarkov ? "exact_markov" : "mode_fill";
}

inline CompletionKind parse_completion_kind(std::string_view s) {
  if (s == "exact_markov") return CompletionKind::ExactMarkov;
  if (s == "mode_fill") return CompletionKind::ModeFill;
  throw std::invalid_argument("unknown completion model: " + std::string(s));
}

/// Relative margin under which two scores count as tied; ties go to the
/// lowest token.
inline constexpr double kTieTolerance = 1e-12;

inline Token argmax_lowest(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < scores.size(); ++k)
    if (scores[k] > scores[best] * (1.0 + kTieTolerance) && scores[k] > scores[best]) best = k;
  return static_cast<Token>(best);
}

class CompletionModel {
 public:
  CompletionModel(CompletionKind kind, const SourceModel& source)
      : kind_(kind), source_(&source), mode_(source.mode_token()) {}

  CompletionKind kind() const { return kind_; }

  /// Accepted positions pass through; each erased run is filled either with
  /// the per-position marginal-MAP token of the Markov source conditioned on
  /// the accepted tokens flanking the run, or with the source mode.
  TokenSequence complete(std::span<const Token> gated) const {
    TokenSequence out(gated.begin(), gated.end());
    const int k = source_->alphabet_size();
    for (Token t : gated)
      if (t != kErased && (t < 0 || t >= k)) throw std::out_of_range("complete: token outside the alphabet");
    if (kind_ == CompletionKind::ModeFill) {
      for (auto& t : out)
        if (t == kErased) t = mode_;
      return out;
    }
    std::size_t i = 0;
    while (i < out.size()) {
      if (out[i] != kErased) {
        ++i;
        continue;
      }
      std::size_t end = i;
      while (end < out.size() && out[end] == kErased) ++end;
      fill_run(out, i, end);
      i = end;
    }
    return out;
  }

 private:
  // Forward-backward over positions [first, last) with anchors at first-1
  // and last when those exist.
  void fill_run(TokenSequence& seq, std::size_t first, std::size_t last) const {
    const auto kk = static_cast<std::size_t>(source_->alphabet_size());
    const Matrix& tr = source_->transition();
    const std::size_t n = last - first;
    std::vector<std::vector<double>> alpha(n), beta(n);

    std::vector<double> a0 = first == 0 ? source_->initial()
                                        : std::vector<double>(tr.row(static_cast<std::size_t>(seq[first - 1])).begin(),
                                                              tr.row(static_cast<std::size_t>(seq[first - 1])).end());
    alpha[0] = normalized(std::move(a0));
    for (std::size_t j = 1; j < n; ++j) alpha[j] = normalized(source_->step(alpha[j - 1]));

    auto backward = [&](bool use_right) {
      std::vector<double> b(kk, 1.0);
      if (use_right && last < seq.size()) {
        const auto right = static_cast<std::size_t>(seq[last]);
        for (std::size_t a = 0; a < kk; ++a) b[a] = tr(a, right);
      }
      beta[n - 1] = normalized(std::move(b));
      for (std::size_t j = n - 1; j-- > 0;) {
        std::vector<double> nb(kk, 0.0);
        for (std::size_t a = 0; a < kk; ++a)
          for (std::size_t c = 0; c < kk; ++c) nb[a] += tr(a, c) * beta[j + 1][c];
        beta[j] = normalized(std::move(nb));
      }
    };
    backward(true);

    std::vector<double> post(kk);
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t a = 0; a < kk; ++a) s += post[a] = alpha[j][a] * beta[j][a];
      if (s == 0.0) {
        // right anchor unreachable under the kernel: condition on the left only
        backward(false);
        for (std::size_t a = 0; a < kk; ++a) post[a] = alpha[j][a] * beta[j][a];
      }
      seq[first + j] = argmax_lowest(post);
    }
  }

  static std::vector<double> normalized(std::vector<double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    if (s > 0.0)
      for (auto& x : v) x /= s;
    return v;
  }

  CompletionKind kind_;
  const SourceModel* source_;
  Token mode_;
};

}  // namespace tonic
