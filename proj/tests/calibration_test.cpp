#include <gtest/gtest.h>

#include <cmath>

#include "tonic/calibration.hpp"
#include "tonic/tokenlink.hpp"

namespace tonic {
namespace {

TEST(Calibration, SinglePointGridKeepsInitialPolicy) {
  CalibrationConfig cfg;
  cfg.grid = {0.5};
  int calls = 0;
  const auto res = calibrate(cfg, 3, [&](const GatingPolicy& p) {
    ++calls;
    return p.thresholds[0] + 2.0 * p.thresholds[2];
  });
  EXPECT_EQ(res.policy, GatingPolicy::uniform(3, 0.5));
  EXPECT_EQ(res.objective, res.initial_objective);
  EXPECT_GT(calls, 1);
}

TEST(Calibration, SingleGroupReturnsGridArgmin) {
  Rng rng(1);
  CalibrationConfig cfg;
  for (int rep = 0; rep < 50; ++rep) {
    const double centre = rng.uniform(), slope = 0.1 + rng.uniform();
    auto f = [&](const GatingPolicy& p) { return slope * (p.thresholds[0] - centre) * (p.thresholds[0] - centre); };
    const auto res = calibrate(cfg, 1, f);
    double best = 1e300, best_tau = -1.0;
    for (double tau : cfg.grid) {
      const double v = f(GatingPolicy({tau}));
      if (v < best) {
        best = v;
        best_tau = tau;
      }
    }
    EXPECT_EQ(res.objective, best);
    EXPECT_EQ(res.policy.thresholds[0], best_tau);
  }
}

TEST(Calibration, FlatObjectiveKeepsIncumbent) {
  const auto res = calibrate(CalibrationConfig{}, 2, [](const GatingPolicy&) { return 1.0; });
  EXPECT_EQ(res.policy, GatingPolicy::uniform(2, 0.5));
}

TEST(Calibration, EqualMinimaPickLowestThreshold) {
  // minimum value 0 attained on [0.2, 0.3] and at 0.9
  auto f = [](const GatingPolicy& p) {
    const double t = p.thresholds[0];
    return (t > 0.19 && t < 0.31) || std::abs(t - 0.9) < 1e-9 ? 0.0 : 1.0;
  };
  EXPECT_DOUBLE_EQ(calibrate(CalibrationConfig{}, 1, f).policy.thresholds[0], 0.2);
}

TEST(Calibration, TraceIsNonIncreasingAndDeterministic) {
  Rng rng(2);
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> a(4), b(4);
    for (auto& x : a) x = rng.uniform();
    for (auto& x : b) x = rng.normal();
    auto f = [&](const GatingPolicy& p) {
      double s = 0.0;
      for (std::size_t g = 0; g < 4; ++g) s += std::sin(7.0 * p.thresholds[g] + b[g]) * a[g];
      s += 0.3 * p.thresholds[0] * p.thresholds[1];
      return s;
    };
    const auto r1 = calibrate(CalibrationConfig{}, 4, f);
    const auto r2 = calibrate(CalibrationConfig{}, 4, f);
    EXPECT_EQ(r1.policy, r2.policy);
    ASSERT_EQ(r1.trace.size(), 2u + 2u * 4u);
    for (std::size_t i = 1; i < r1.trace.size(); ++i) EXPECT_LE(r1.trace[i], r1.trace[i - 1]);
    EXPECT_LE(r1.objective, r1.initial_objective);
    EXPECT_EQ(r1.objective, f(r1.policy));
  }
}

TEST(Calibration, SharedStartEscapesCoupledPlateau) {
  // Lowering one group alone costs 1; lowering all of them together gains 1.
  auto f = [](const GatingPolicy& p) {
    int low = 0;
    for (double t : p.thresholds) low += t < 0.45;
    return low == 0 ? 0.0 : low == 3 ? -1.0 : 1.0;
  };
  CalibrationConfig plain;
  plain.shared_start = false;
  const auto stuck = calibrate(plain, 3, f);
  EXPECT_EQ(stuck.policy, GatingPolicy::uniform(3, 0.5));
  EXPECT_EQ(stuck.trace.size(), 1u + 2u * 3u);

  const auto r = calibrate(CalibrationConfig{}, 3, f);
  EXPECT_EQ(r.objective, -1.0);
  EXPECT_EQ(r.policy, GatingPolicy::uniform(3, 0.0));
  EXPECT_EQ(r.trace[1], -1.0);
}

TEST(Calibration, ConfigValidation) {
  CalibrationConfig c;
  c.grid = {};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.grid = {0.5, 0.2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.grid = {0.2, 1.2};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CalibrationConfig{};
  c.passes = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  EXPECT_EQ(CalibrationConfig::default_grid().size(), 21u);
}

TEST(TranscriptObjective, MeanLossOverTranscripts) {
  const auto src = SourceModel::random(8, 6, 0.6, 10);
  const auto table = EmbeddingTable::random(8, 4, 11);
  const auto head = TaskHead::random(3, 4, TaskHead::mean_pool(6), 12);
  const auto grouping = quantize_groups(std::vector<double>{6, 5, 4, 3, 2, 1}, 2);
  const CompletionModel completion(CompletionKind::ExactMarkov, src);
  std::vector<Transcript> ts;
  Rng rng(13);
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto s = sample(src, table, head, 200 + i);
    Transcript t{s.tokens, std::vector<double>(6), s.label};
    for (std::size_t j = 0; j < 6; ++j) {
      t.confidence[j] = rng.uniform();
      if (t.confidence[j] < 0.3) t.hard[j] = static_cast<Token>(rng.below(8));
    }
    ts.push_back(t);
  }
  const TranscriptObjective obj(ts, grouping, completion, table, head);
  const auto policy = GatingPolicy({0.4, 0.6});
  double ref = 0.0;
  for (const auto& t : ts) {
    const auto g = gate(t.hard, t.confidence, grouping.group_of, policy);
    ref += task_loss(head, embed(completion.complete(g), table), t.label);
  }
  EXPECT_NEAR(obj(policy), ref / 30.0, 1e-12);
  const auto res = calibrate(CalibrationConfig{}, 2, obj);
  EXPECT_LE(res.objective, obj(GatingPolicy::uniform(2, 0.5)));
  EXPECT_THROW(TranscriptObjective(std::span<const Transcript>{}, grouping, completion, table, head),
               std::invalid_argument);
}

}  // namespace
}  // namespace tonic
