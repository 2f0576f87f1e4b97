#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "tonic/tokenlink.hpp"

namespace tonic {
namespace {

TEST(TokenBits, RoundTripMsbFirst) {
  const TokenSequence t{0, 5, 15, 9};
  const auto bits = tokens_to_bits(t, 4);
  const std::vector<std::uint8_t> expect{0, 0, 0, 0, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0, 0, 1};
  EXPECT_EQ(bits, expect);
  EXPECT_EQ(bits_to_tokens(bits, 4), t);
  EXPECT_THROW(tokens_to_bits(TokenSequence{16}, 4), std::out_of_range);
  EXPECT_THROW(bits_to_tokens(std::vector<std::uint8_t>(5), 4), std::invalid_argument);
}

TEST(TokenBits, RandomRoundTrip) {
  Rng rng(1);
  for (int m : {1, 3, 8, 14}) {
    TokenSequence t(50);
    for (auto& x : t) x = static_cast<Token>(rng.below(1ull << m));
    EXPECT_EQ(bits_to_tokens(tokens_to_bits(t, m), m), t);
  }
}

TEST(Posterior, ProbZeroIsStable) {
  EXPECT_DOUBLE_EQ(prob_zero(0.0), 0.5);
  EXPECT_NEAR(prob_zero(800.0), 1.0, 1e-15);
  EXPECT_NEAR(prob_zero(-800.0), 0.0, 1e-15);
  EXPECT_NEAR(prob_zero(2.0) + prob_zero(-2.0), 1.0, 1e-15);
}

TEST(Posterior, MatchesEnumerationForManyAlphabets) {
  Rng rng(2);
  for (int k : {2, 3, 5, 10, 16, 17, 100, 255, 256}) {
    const int m = bits_for_alphabet(k);
    for (int rep = 0; rep < 50; ++rep) {
      std::vector<double> llr(static_cast<std::size_t>(m) * 3);
      const double scale = rep % 3 == 0 ? 0.3 : (rep % 3 == 1 ? 3.0 : 15.0);
      for (auto& x : llr) x = scale * rng.normal();
      const PosteriorSequence post(k, llr);
      ASSERT_EQ(post.size(), 3u);
      for (std::size_t i = 0; i < 3; ++i) {
        const auto ref = oracle::token_posterior(post.bit_llrs(i), k);
        double best = -1.0;
        Token arg = 0;
        for (int t = 0; t < k; ++t) {
          EXPECT_NEAR(post.probability(i, t), ref[static_cast<std::size_t>(t)], 1e-9) << "K=" << k;
          if (ref[static_cast<std::size_t>(t)] > best) {
            best = ref[static_cast<std::size_t>(t)];
            arg = t;
          }
        }
        EXPECT_NEAR(post.confidence(i), best, 1e-9);
        EXPECT_NEAR(ref[static_cast<std::size_t>(post.hard_decision(i))], best, 1e-12);
        if (best > ref[static_cast<std::size_t>(post.hard_decision(i))] + 1e-12) {
          EXPECT_EQ(post.hard_decision(i), arg);
        }
        EXPECT_LT(post.hard_decision(i), k);
      }
    }
  }
}

TEST(Posterior, ZeroLlrsGiveUniformAndLowestToken) {
  const PosteriorSequence post(10, std::vector<double>(4, 0.0));
  EXPECT_EQ(post.hard_decision(0), 0);
  EXPECT_NEAR(post.confidence(0), 0.1, 1e-12);
  double s = 0.0;
  for (double p : post.distribution(0)) s += p;
  EXPECT_NEAR(s, 1.0, 1e-12);
}

TEST(Posterior, StrongLlrsRecoverTokens) {
  const TokenSequence t{3, 7, 0, 12};
  const auto bits = tokens_to_bits(t, 4);
  std::vector<double> llr(bits.size());
  for (std::size_t i = 0; i < bits.size(); ++i) llr[i] = bits[i] ? -30.0 : 30.0;
  const auto post = llrs_to_posterior(llr, 16);
  EXPECT_EQ(post.hard_decisions(), t);
  for (double c : post.confidences()) EXPECT_GT(c, 1.0 - 1e-9);
}

TEST(Posterior, InvalidCodepointMassIsRenormalized) {
  // K = 5 (m = 3). Bits strongly favour 111 = 7, which is invalid.
  const PosteriorSequence post(5, std::vector<double>{-30.0, -30.0, -30.0});
  EXPECT_LT(post.hard_decision(0), 5);
  EXPECT_THROW(PosteriorSequence(16, std::vector<double>(5, 0.0)), std::invalid_argument);
}

}  // namespace
}  // namespace tonic
