#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "tonic/utility.hpp"

namespace tonic {
namespace {

TEST(Utility, GradientUtilityIsRowNorm) {
  const auto src = SourceModel::random(8, 6, 0.5, 1);
  const auto table = EmbeddingTable::random(8, 5, 2);
  const auto head = TaskHead::random(3, 5, TaskHead::random_pool(6, 3), 4);
  const auto s = sample(src, table, head, 5);
  const auto w = grad_utility(s, table, head);
  const Matrix g = loss_gradient_wrt_embeddings(head, embed(s.tokens, table), s.label);
  ASSERT_EQ(w.size(), 6u);
  for (std::size_t i = 0; i < w.size(); ++i) {
    double n = 0.0;
    for (double v : g.row(i)) n += v * v;
    EXPECT_NEAR(w[i], std::sqrt(n), 1e-14);
    EXPECT_GE(w[i], 0.0);
  }
}

TEST(Utility, MaskUtilityMatchesDirectReplacement) {
  const auto src = SourceModel::random(8, 5, 0.5, 11);
  const auto table = EmbeddingTable::random(8, 4, 12);
  const auto head = TaskHead::random(4, 4, TaskHead::random_pool(5, 13), 14);
  const auto s = sample(src, table, head, 15);
  const std::vector<double> probe(4, 0.0);
  const auto w = mask_utility(s, table, head, probe);
  const Matrix z = embed(s.tokens, table);
  const double clean = task_loss(head, z, s.label);
  for (std::size_t i = 0; i < 5; ++i) {
    Matrix zz = z;
    for (auto& v : zz.row(i)) v = 0.0;
    EXPECT_NEAR(w[i], task_loss(head, zz, s.label) - clean, 1e-12);
  }
  EXPECT_EQ(sample_utility(s, table, head, UtilityMode::Mask), w);
  EXPECT_THROW(mask_utility(s, table, head, std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(Utility, AverageProfileIsArithmeticMean) {
  const auto src = SourceModel::random(8, 6, 0.4, 21);
  const auto table = EmbeddingTable::random(8, 4, 22);
  const auto head = TaskHead::random(3, 4, TaskHead::random_pool(6, 23), 24);
  std::vector<LabeledSample> set;
  for (std::uint64_t i = 0; i < 7; ++i) set.push_back(sample(src, table, head, 100 + i));
  const auto avg = average_profile(set, table, head, UtilityMode::Grad);
  std::vector<double> ref(6, 0.0);
  for (const auto& s : set) {
    const auto w = grad_utility(s, table, head);
    for (std::size_t i = 0; i < 6; ++i) ref[i] += w[i] / 7.0;
  }
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(avg[i], ref[i], 1e-12);
  EXPECT_THROW(average_profile(std::span<const LabeledSample>{}, table, head, UtilityMode::Grad), std::invalid_argument);
}

TEST(Utility, ModeParsing) {
  EXPECT_EQ(parse_utility_mode("grad"), UtilityMode::Grad);
  EXPECT_EQ(parse_utility_mode("mask"), UtilityMode::Mask);
  EXPECT_THROW(parse_utility_mode("oracle"), std::invalid_argument);
}

TEST(Grouping, SizesDifferByAtMostOne) {
  const std::vector<double> w{0.1, 0.9, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.0};
  const auto g = quantize_groups(w, 3);
  EXPECT_EQ(g.sizes, (std::vector<int>{4, 3, 3}));
  // group 0: 0.9 0.8 0.7 0.6
  EXPECT_EQ(g.positions(0), (std::vector<int>{1, 4, 6, 8}));
  EXPECT_EQ(g.positions(1), (std::vector<int>{2, 3, 7}));
  EXPECT_EQ(g.positions(2), (std::vector<int>{0, 5, 9}));
  EXPECT_NEAR(g.masses[0], 3.0, 1e-12);
  EXPECT_NEAR(std::accumulate(g.masses.begin(), g.masses.end(), 0.0),
              std::accumulate(w.begin(), w.end(), 0.0), 1e-12);
}

TEST(Grouping, TiesBreakByPosition) {
  const std::vector<double> w(6, 1.0);
  const auto g = quantize_groups(w, 2);
  EXPECT_EQ(g.group_of, (std::vector<int>{0, 0, 0, 1, 1, 1}));
}

TEST(Grouping, EveryGroupDominatesTheNext) {
  Rng rng(3);
  for (int rep = 0; rep < 100; ++rep) {
    const int l = 1 + static_cast<int>(rng.below(40));
    const int groups = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(l)));
    std::vector<double> w(static_cast<std::size_t>(l));
    for (auto& x : w) x = rng.uniform() - 0.2;
    const auto g = quantize_groups(w, groups);
    ASSERT_EQ(g.groups(), groups);
    std::vector<double> lo(static_cast<std::size_t>(groups), 1e9), hi(static_cast<std::size_t>(groups), -1e9);
    for (int i = 0; i < l; ++i) {
      const auto gi = static_cast<std::size_t>(g.group_of[static_cast<std::size_t>(i)]);
      lo[gi] = std::min(lo[gi], w[static_cast<std::size_t>(i)]);
      hi[gi] = std::max(hi[gi], w[static_cast<std::size_t>(i)]);
    }
    for (int k = 1; k < groups; ++k) EXPECT_GE(lo[static_cast<std::size_t>(k - 1)], hi[static_cast<std::size_t>(k)]);
    const auto [mn, mx] = std::minmax_element(g.sizes.begin(), g.sizes.end());
    EXPECT_LE(*mx - *mn, 1);
  }
  EXPECT_THROW(quantize_groups(std::vector<double>(3, 0.0), 4), std::invalid_argument);
  EXPECT_THROW(quantize_groups(std::vector<double>(3, 0.0), 0), std::invalid_argument);
}

}  // namespace
}  // namespace tonic
