#pragma once

// Token <-> bit mapping and bit LLRs -> token posteriors.
//
// Each token is written as m = ceil(log2 K) bits, most significant bit first.
// Posteriors are kept in factored form: under bit independence
//
//   p_i(k) = prod_b Pr(bit_b = k_b | L_b) / Z_i,
//
// where Z_i renormalizes away codepoints k >= K when 2^m > K (Z_i = 1
// otherwise). Both Z_i and the exact argmax over valid tokens are computed in
// O(m^2) by splitting {k < K} into prefix classes of the binary expansion of
// K, so the K-way posterior is never materialized.

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "tonic/source_task.hpp"

namespace tonic {

inline std::vector<std::uint8_t> tokens_to_bits(std::span<const Token> tokens, int bits_per_token) {
  if (bits_per_token < 1 || bits_per_token > 30) throw std::invalid_argument("tokens_to_bits: bad bit width");
  std::vector<std::uint8_t> bits;
  bits.reserve(tokens.size() * static_cast<std::size_t>(bits_per_token));
  for (Token t : tokens) {
    if (t < 0 || t >= (Token{1} << bits_per_token)) throw std::out_of_range("tokens_to_bits: token out of range");
    for (int b = bits_per_token - 1; b >= 0; --b) bits.push_back(static_cast<std::uint8_t>((t >> b) & 1));
  }
  return bits;
}

inline TokenSequence bits_to_tokens(std::span<const std::uint8_t> bits, int bits_per_token) {
  if (bits_per_token < 1 || bits.size() % static_cast<std::size_t>(bits_per_token) != 0)
    throw std::invalid_argument("bits_to_tokens: bit count not a multiple of the token width");
  TokenSequence out(bits.size() / static_cast<std::size_t>(bits_per_token), 0);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (int b = 0; b < bits_per_token; ++b)
      out[i] = (out[i] << 1) | (bits[i * static_cast<std::size_t>(bits_per_token) + static_cast<std::size_t>(b)] & 1);
  return out;
}

/// Pr(bit = 0 | L) for L = log Pr(0)/Pr(1).
inline double prob_zero(double llr) {
  if (llr >= 0.0) return 1.0 / (1.0 + std::exp(-llr));
  const double e = std::exp(llr);
  return e / (1.0 + e);
}

class PosteriorSequence {
 public:
  PosteriorSequence(int alphabet_size, std::vector<double> bit_llrs)
      : alphabet_size_(alphabet_size), bits_(bits_for_alphabet(alphabet_size)), llrs_(std::move(bit_llrs)) {
    if (llrs_.size() % static_cast<std::size_t>(bits_) != 0)
      throw std::invalid_argument("PosteriorSequence: LLR count is not a multiple of bits per token");
    const std::size_t n = llrs_.size() / static_cast<std::size_t>(bits_);
    hard_.resize(n);
    confidence_.resize(n);
    normalizer_.resize(n);
    for (std::size_t i = 0; i < n; ++i) resolve(i);
  }

  int alphabet_size() const { return alphabet_size_; }
  int bits_per_token() const { return bits_; }
  std::size_t size() const { return hard_.size(); }

  Token hard_decision(std::size_t i) const { return hard_[i]; }
  double confidence(std::size_t i) const { return confidence_[i]; }
  const TokenSequence& hard_decisions() const { return hard_; }
  const std::vector<double>& confidences() const { return confidence_; }
  std::span<const double> bit_llrs(std::size_t i) const {
    return {llrs_.data() + i * static_cast<std::size_t>(bits_), static_cast<std::size_t>(bits_)};
  }

  /// p_i(k); zero for invalid codepoints.
  double probability(std::size_t i, Token k) const {
    if (k < 0 || k >= alphabet_size_) return 0.0;
    // all mass on invalid codepoints: fall back to uniform over valid ones
    if (normalizer_[i] == 0.0) return 1.0 / alphabet_size_;
    return unnormalized(i, k) / normalizer_[i];
  }

  /// Explicit K-way posterior at position i.
  std::vector<double> distribution(std::size_t i) const {
    std::vector<double> p(static_cast<std::size_t>(alphabet_size_));
    for (Token k = 0; k < alphabet_size_; ++k) p[static_cast<std::size_t>(k)] = probability(i, k);
    return p;
  }

 private:
  double unnormalized(std::size_t i, Token k) const {
    const auto l = bit_llrs(i);
    double v = 1.0;
    for (int b = 0; b < bits_; ++b) {
      const double llr = l[static_cast<std::size_t>(b)];
      v *= ((k >> (bits_ - 1 - b)) & 1) ? prob_zero(-llr) : prob_zero(llr);
    }
    return v;
  }

  void resolve(std::size_t i) {
    const auto l = bit_llrs(i);
    const auto m = static_cast<std::size_t>(bits_);
    std::vector<double> p0(m), p1(m), best(m);
    std::vector<int> best_bit(m);
    for (std::size_t b = 0; b < m; ++b) {
      p0[b] = prob_zero(l[b]);
      p1[b] = prob_zero(-l[b]);
      best_bit[b] = l[b] >= 0.0 ? 0 : 1;  // ties toward 0, the lower token
      best[b] = best_bit[b] == 0 ? p0[b] : p1[b];
    }
    // suffix_best[b] = prod_{j >= b} best[j]
    std::vector<double> suffix_best(m + 1, 1.0);
    for (std::size_t b = m; b-- > 0;) suffix_best[b] = suffix_best[b + 1] * best[b];
    auto free_tail = [&](std::size_t from) {
      Token t = 0;
      for (std::size_t b = from; b < m; ++b) t = (t << 1) | best_bit[b];
      return t;
    };

    if (alphabet_size_ == (Token{1} << bits_)) {
      normalizer_[i] = 1.0;
      hard_[i] = free_tail(0);
      confidence_[i] = suffix_best[0];
      return;
    }
    // Valid tokens k < K split by the first bit b where K has a 1 and k a 0;
    // higher bits equal those of K, lower bits are free.
    double z = 0.0, top = -1.0, prefix = 1.0;
    Token arg = 0, high = 0;
    for (std::size_t b = 0; b < m; ++b) {
      const int kb = (alphabet_size_ >> (m - 1 - b)) & 1;
      if (kb == 1) {
        z += prefix * p0[b];
        const double value = prefix * p0[b] * suffix_best[b + 1];
        if (value > top) {
          top = value;
          const std::size_t low_bits = m - 1 - b;
          arg = (((high << 1) | 0) << low_bits) | free_tail(b + 1);
        }
      }
      prefix *= kb ? p1[b] : p0[b];
      high = (high << 1) | kb;
    }
    normalizer_[i] = z;
    hard_[i] = arg;
    confidence_[i] = z > 0.0 ? top / z : 1.0 / alphabet_size_;
  }

  int alphabet_size_;
  int bits_;
  std::vector<double> llrs_;
  TokenSequence hard_;
  std::vector<double> confidence_;
  std::vector<double> normalizer_;
};

inline PosteriorSequence llrs_to_posterior(std::vector<double> bit_llrs, int alphabet_size) {
  return PosteriorSequence(alphabet_size, std::move(bit_llrs));
}

}  // namespace tonic
