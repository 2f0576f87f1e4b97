#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "tonic/source_task.hpp"

namespace tonic {
namespace {

SourceModel deterministic_zero_source(int k, int length) {
  Matrix t(static_cast<std::size_t>(k), static_cast<std::size_t>(k), 0.0);
  for (int r = 0; r < k; ++r) t(static_cast<std::size_t>(r), 0) = 1.0;
  std::vector<double> init(static_cast<std::size_t>(k), 0.0);
  init[0] = 1.0;
  return SourceModel(k, length, std::move(t), std::move(init));
}

// Independent central-difference gradient of the task loss.
Matrix numeric_gradient(const TaskHead& head, Matrix z, int label, double step) {
  Matrix g(z.rows(), z.cols());
  for (std::size_t i = 0; i < z.rows(); ++i)
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const double keep = z(i, j);
      z(i, j) = keep + step;
      const double up = task_loss(head, z, label);
      z(i, j) = keep - step;
      const double down = task_loss(head, z, label);
      z(i, j) = keep;
      g(i, j) = (up - down) / (2.0 * step);
    }
  return g;
}

TEST(SourceModel, BitsPerTokenIsCeilLog2) {
  EXPECT_EQ(bits_for_alphabet(2), 1);
  EXPECT_EQ(bits_for_alphabet(16), 4);
  EXPECT_EQ(bits_for_alphabet(17), 5);
  EXPECT_EQ(bits_for_alphabet(16384), 14);
  EXPECT_THROW(bits_for_alphabet(1), std::invalid_argument);
}

TEST(SourceModel, RandomKernelRowsSumToOne) {
  const auto m = SourceModel::random(16, 16, 0.5, 7);
  for (std::size_t r = 0; r < 16; ++r) {
    const auto row = m.transition().row(r);
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
  }
  EXPECT_NEAR(std::accumulate(m.initial().begin(), m.initial().end(), 0.0), 1.0, 1e-9);
}

TEST(SourceModel, RejectsUnnormalizedKernel) {
  Matrix t(2, 2, 0.5);
  t(0, 0) = 0.6;
  EXPECT_THROW(SourceModel(2, 4, t, {0.5, 0.5}), std::invalid_argument);
  EXPECT_THROW(SourceModel(2, 0, Matrix(2, 2, 0.5), {0.5, 0.5}), std::invalid_argument);
}

TEST(Sample, DegenerateKernelGivesAllZeroTokens) {
  const auto src = deterministic_zero_source(2, 8);
  const auto table = EmbeddingTable::random(2, 3, 1);
  const auto head = TaskHead::random(3, 3, TaskHead::mean_pool(8), 2);
  const auto s = sample(src, table, head, 99);
  EXPECT_EQ(s.tokens, TokenSequence(8, 0));
  EXPECT_EQ(s.label, head.predict(embed(TokenSequence(8, 0), table)));
}

TEST(Sample, SameSeedSameSample) {
  const auto src = SourceModel::random(16, 16, 0.0, 3);
  const auto table = EmbeddingTable::random(16, 8, 4);
  const auto head = TaskHead::random(4, 8, TaskHead::mean_pool(16), 5);
  const auto a = sample(src, table, head, 1234);
  const auto b = sample(src, table, head, 1234);
  EXPECT_EQ(a.tokens, b.tokens);
  EXPECT_EQ(a.label, b.label);
}

TEST(Sample, LabelIsCleanPrediction) {
  const auto src = SourceModel::random(16, 16, 0.5, 3);
  const auto table = EmbeddingTable::random(16, 8, 4);
  const auto head = TaskHead::random(4, 8, TaskHead::mean_pool(16), 5);
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto x = sample(src, table, head, s);
    EXPECT_EQ(head.predict(embed(x.tokens, table)), x.label);
  }
}

TEST(Sample, EmpiricalTransitionsMatchKernel) {
  const auto src = SourceModel::random(4, 6, 0.3, 11);
  const auto table = EmbeddingTable::random(4, 2, 1);
  const auto head = TaskHead::random(2, 2, TaskHead::mean_pool(6), 1);
  std::vector<std::vector<double>> counts(4, std::vector<double>(4, 0.0));
  for (std::uint64_t s = 0; s < 10000; ++s) {
    const auto x = sample(src, table, head, derive_seed(77, "t", {s}));
    for (std::size_t i = 1; i < x.tokens.size(); ++i)
      counts[static_cast<std::size_t>(x.tokens[i - 1])][static_cast<std::size_t>(x.tokens[i])] += 1.0;
  }
  for (std::size_t a = 0; a < 4; ++a) {
    const double n = std::accumulate(counts[a].begin(), counts[a].end(), 0.0);
    ASSERT_GT(n, 100.0);
    for (std::size_t b = 0; b < 4; ++b) {
      const double p = src.transition()(a, b);
      const double sigma = std::sqrt(n * p * (1.0 - p));
      EXPECT_LE(std::abs(counts[a][b] - n * p), 3.0 * sigma + 1e-9) << a << "->" << b;
    }
  }
}

TEST(Embed, LooksUpRows) {
  Matrix rows(2, 3);
  rows(0, 0) = 1.0;
  rows(1, 1) = 1.0;
  const EmbeddingTable table(rows);
  const auto z = embed(TokenSequence{0, 0}, table);
  EXPECT_EQ(z.rows(), 2u);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(z(i, j), rows(0, j));
}

TEST(Embed, PermutationEquivariantAndExactLookup) {
  const auto table = EmbeddingTable::random(16, 5, 3);
  Rng rng(5);
  TokenSequence t(10);
  for (auto& x : t) x = static_cast<Token>(rng.below(16));
  TokenSequence rev(t.rbegin(), t.rend());
  const auto z = embed(t, table);
  const auto zr = embed(rev, table);
  for (std::size_t i = 0; i < t.size(); ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(z(i, j), table.matrix()(static_cast<std::size_t>(t[i]), j));
      EXPECT_EQ(zr(t.size() - 1 - i, j), z(i, j));
    }
}

TEST(Embed, OutOfRangeThrows) {
  const auto table = EmbeddingTable::random(4, 2, 3);
  EXPECT_THROW(embed(TokenSequence{4}, table), std::out_of_range);
  EXPECT_THROW(embed(TokenSequence{-1}, table), std::out_of_range);
}

TEST(EmbeddingTable, DiameterMatchesBruteForce) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto table = EmbeddingTable::random(64, 4, seed);
    double best = 0.0;
    for (std::size_t a = 0; a < 64; ++a)
      for (std::size_t b = 0; b < 64; ++b) {
        double d = 0.0;
        for (std::size_t j = 0; j < 4; ++j) d += std::pow(table.matrix()(a, j) - table.matrix()(b, j), 2);
        best = std::max(best, std::sqrt(d));
      }
    EXPECT_NEAR(table.diameter(), best, 1e-12);
  }
}

TEST(TaskLoss, LargeMarginAlignedLabelIsNearZero) {
  Matrix w(2, 1);
  w(0, 0) = 100.0;
  w(1, 0) = -100.0;
  const TaskHead head(w, {0.0, 0.0}, TaskHead::mean_pool(2));
  Matrix z(2, 1, 1.0);
  EXPECT_LT(task_loss(head, z, 0), 1e-12);
  EXPECT_GE(task_loss(head, z, 0), 0.0);
}

TEST(TaskLoss, UniformLogitsGiveLogC) {
  const TaskHead head(Matrix(10, 3, 0.0), std::vector<double>(10, 0.0), TaskHead::mean_pool(4));
  EXPECT_NEAR(task_loss(head, Matrix(4, 3, 0.7), 3), std::log(10.0), 1e-12);
}

TEST(TaskLoss, MatchesDirectSoftmaxFormula) {
  const auto table = EmbeddingTable::random(8, 4, 1);
  const auto head = TaskHead::random(5, 4, TaskHead::mean_pool(6), 2);
  Rng rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    TokenSequence t(6);
    for (auto& x : t) x = static_cast<Token>(rng.below(8));
    const auto z = embed(t, table);
    const int y = static_cast<int>(rng.below(5));
    const auto l = head.logits(z);
    double denom = 0.0;
    for (double v : l) denom += std::exp(v);
    const double expected = -std::log(std::exp(l[static_cast<std::size_t>(y)]) / denom);
    EXPECT_NEAR(task_loss(head, z, y), expected, 1e-12);
  }
}

TEST(LossGradient, ZeroHeadGivesZeroGradient) {
  const TaskHead head(Matrix(4, 3, 0.0), std::vector<double>(4, 0.0), TaskHead::mean_pool(5));
  const auto g = loss_gradient_wrt_embeddings(head, Matrix(5, 3, 1.3), 1);
  for (double v : g.data()) EXPECT_EQ(v, 0.0);
}

TEST(LossGradient, MatchesFiniteDifferences) {
  Rng rng(21);
  for (int rep = 0; rep < 100; ++rep) {
    const int length = 1 + static_cast<int>(rng.below(8));
    const int dim = 1 + static_cast<int>(rng.below(6));
    const int classes = 2 + static_cast<int>(rng.below(5));
    const auto pool = rep % 2 ? TaskHead::mean_pool(length) : TaskHead::random_pool(length, rng.next_u64());
    const auto head = TaskHead::random(classes, dim, pool, rng.next_u64());
    Matrix z(static_cast<std::size_t>(length), static_cast<std::size_t>(dim));
    for (auto& x : z.data()) x = rng.normal();
    const int y = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
    const auto g = loss_gradient_wrt_embeddings(head, z, y);
    const auto fd = numeric_gradient(head, z, y, 1e-5);
    for (std::size_t k = 0; k < g.data().size(); ++k) {
      const double scale = std::max(std::abs(fd.data()[k]), 1e-6);
      EXPECT_LE(std::abs(g.data()[k] - fd.data()[k]) / scale, 1e-4) << "rep " << rep;
    }
  }
}

TEST(LossGradient, MeanPoolingGivesEqualRowsAcrossPositions) {
  const auto head = TaskHead::random(3, 4, TaskHead::mean_pool(6), 8);
  Matrix z(6, 4);
  Rng rng(2);
  for (auto& x : z.data()) x = rng.normal();
  const auto g = loss_gradient_wrt_embeddings(head, z, 2);
  for (std::size_t i = 1; i < 6; ++i)
    for (std::size_t j = 0; j < 4; ++j) EXPECT_DOUBLE_EQ(g(i, j), g(0, j));
}

TEST(UtilityBound, NoErrorsGivesZeroBothSides) {
  const auto table = EmbeddingTable::random(8, 4, 1);
  const auto head = TaskHead::random(3, 4, TaskHead::mean_pool(5), 2);
  const TokenSequence t{1, 2, 3, 4, 5};
  const auto r = verify_utility_bound(t, t, table, head, 0);
  EXPECT_EQ(r.lhs, 0.0);
  EXPECT_EQ(r.rhs, 0.0);
  EXPECT_TRUE(r.holds);
}

TEST(UtilityBound, SinglePositionErrorHoldsOnDenseGrid) {
  Rng rng(4);
  for (int rep = 0; rep < 50; ++rep) {
    const auto table = EmbeddingTable::random(8, 3, rng.next_u64());
    const auto head = TaskHead::random(4, 3, TaskHead::mean_pool(6), rng.next_u64(), 3.0);
    TokenSequence t(6);
    for (auto& x : t) x = static_cast<Token>(rng.below(8));
    auto d = t;
    d[static_cast<std::size_t>(rng.below(6))] = static_cast<Token>((t[0] + 1 + static_cast<Token>(rng.below(7))) % 8);
    const auto r = verify_utility_bound(t, d, table, head, static_cast<int>(rng.below(4)), 1000, 1.0);
    EXPECT_TRUE(r.holds) << r.lhs << " > " << r.rhs;
  }
}

TEST(UtilityBound, RejectsBadArguments) {
  const auto table = EmbeddingTable::random(8, 4, 1);
  const auto head = TaskHead::random(3, 4, TaskHead::mean_pool(2), 2);
  EXPECT_THROW(verify_utility_bound(TokenSequence{1, 2}, TokenSequence{1}, table, head, 0), std::invalid_argument);
  EXPECT_THROW(verify_utility_bound(TokenSequence{1, 2}, TokenSequence{1, 2}, table, head, 0, 1), std::invalid_argument);
}

}  // namespace
}  // namespace tonic
