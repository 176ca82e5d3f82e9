// Copyright 2026 The Prefroute Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "prefroute/evaluation.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "gtest/gtest.h"
#include "json.hpp"
#include "synthetic.h"

namespace prefroute {
namespace {

using testing::RandomEvalRecords;
using testing::TempPath;

std::vector<RouteTarget> Targets(std::initializer_list<int> strong) {
  std::vector<RouteTarget> out;
  for (int s : strong) out.push_back(s ? RouteTarget::kStrong : RouteTarget::kWeak);
  return out;
}

CallPerformanceCurve CurveOf(const std::vector<double>& fractions,
                             const std::vector<double>& pgrs) {
  CallPerformanceCurve c;
  for (std::size_t i = 0; i < fractions.size(); ++i) {
    c.points.push_back({fractions[i], pgrs[i], fractions[i], 0.0, 0.0});
  }
  return c;
}

// Strong wins on the first `wins` records; both models tie elsewhere.
std::vector<EvalRecord> WinsThenTies(int n, int wins) {
  std::vector<EvalRecord> records;
  for (int i = 0; i < n; ++i) {
    records.push_back({"q" + std::to_string(i), i < wins ? 0.0 : 1.0, 1.0, {}});
  }
  return records;
}

std::vector<double> OracleProbabilities(const std::vector<EvalRecord>& records,
                                        bool inverted = false) {
  std::vector<double> p;
  for (const auto& r : records) {
    const bool strong_better = r.score_strong > r.score_weak;
    p.push_back(strong_better != inverted ? 1.0 : 0.0);
  }
  return p;
}

TEST(StrongCallFractionTest, Counts) {
  EXPECT_EQ(StrongCallFraction(Targets({1, 1, 1})), 1.0);
  EXPECT_EQ(StrongCallFraction(Targets({0, 0})), 0.0);
  EXPECT_DOUBLE_EQ(StrongCallFraction(Targets({1, 0, 0, 1, 0, 0, 1, 0, 0, 0})), 0.3);
  std::vector<RoutingDecision> decisions(4);
  decisions[1].target = RouteTarget::kWeak;
  EXPECT_EQ(StrongCallFraction(decisions), 0.75);
  EXPECT_THROW(StrongCallFraction(std::vector<RouteTarget>{}), ConfigError);
}

TEST(AverageQualityTest, Examples) {
  const std::vector<EvalRecord> records = {{"a", 0.0, 1.0, {}}, {"b", 0.0, 1.0, {}}};
  EXPECT_EQ(AverageQuality(records, Targets({1, 0})), 0.5);
  const std::vector<EvalRecord> judged = {{"a", 4.0, 8.0, {}}, {"b", 6.0, 9.0, {}}};
  EXPECT_EQ(AverageQuality(judged, Targets({1, 1})), 8.5);
  EXPECT_EQ(AverageQuality(judged, Targets({0, 0})), 5.0);
  EXPECT_THROW(AverageQuality(judged, Targets({1})), ConfigError);
}

TEST(PgrTest, Examples) {
  EXPECT_EQ(Pgr(6.0, 6.0, 9.0), 0.0);
  EXPECT_EQ(Pgr(9.0, 6.0, 9.0), 1.0);
  EXPECT_NEAR(Pgr(8.0, 6.0, 9.0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(Pgr(10.0, 6.0, 9.0), 4.0 / 3.0, 1e-15);  // unclipped
  EXPECT_THROW(Pgr(1.0, 2.0, 2.0), ConfigError);
}

TEST(PgrTest, AffineInvariance) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  for (int i = 0; i < 1000; ++i) {
    const double r = u(rng), w = u(rng), s = u(rng);
    if (std::fabs(s - w) < 1e-3) continue;
    const double a = scale(rng), b = u(rng);
    EXPECT_NEAR(Pgr(a * r + b, a * w + b, a * s + b), Pgr(r, w, s),
                1e-12 * std::max(1.0, std::fabs(Pgr(r, w, s))));
  }
}

TEST(ApgrTest, Examples) {
  EXPECT_DOUBLE_EQ(Apgr(CurveOf({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0},
                                std::vector<double>(10, 0.5))),
                   0.5);
  EXPECT_NEAR(Apgr(CurveOf({0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0},
                           {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0})),
              0.55, 1e-12);
  // The diagonal over the full grid is one half.
  std::vector<double> grid = DefaultCallTargets();
  ASSERT_EQ(grid.size(), 11u);
  EXPECT_NEAR(Apgr(CurveOf(grid, grid)), 0.5, 1e-12);
  EXPECT_THROW(Apgr(CallPerformanceCurve{}), ConfigError);
}

TEST(SweepCurveTest, FractionsAndEndpoint) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 30; ++trial) {
    const auto records = RandomEvalRecords(rng, 50 + trial);
    std::vector<double> probs;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < records.size(); ++i) probs.push_back(u(rng));
    const auto targets = DefaultCallTargets();
    const auto curve = SweepCurve(records, probs, targets, "r");
    ASSERT_EQ(curve.points.size(), targets.size());
    for (std::size_t i = 1; i < curve.points.size(); ++i) {
      EXPECT_GT(curve.points[i].strong_fraction, curve.points[i - 1].strong_fraction);
      EXPECT_GE(curve.points[i].achieved_fraction, curve.points[i - 1].achieved_fraction);
    }
    EXPECT_EQ(curve.points.back().pgr, 1.0);
    EXPECT_EQ(curve.points.front().achieved_fraction, 0.0);
    EXPECT_EQ(curve.predictor_name, "r");
  }
}

TEST(SweepCurveTest, OracleAboveAndAntiOracleBelowDiagonal) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<EvalRecord> records;
    std::bernoulli_distribution wins(0.3 + 0.02 * trial);
    for (int i = 0; i < 200; ++i) {
      const bool w = wins(rng);
      records.push_back({"q", w ? 0.0 : 1.0, 1.0, {}});
    }
    const auto targets = DefaultCallTargets();
    const auto oracle = SweepCurve(records, OracleProbabilities(records), targets);
    const auto anti = SweepCurve(records, OracleProbabilities(records, true), targets);
    for (std::size_t i = 1; i + 1 < targets.size(); ++i) {
      const double c = oracle.points[i].achieved_fraction;
      EXPECT_GT(oracle.points[i].pgr, c) << "trial " << trial << " point " << i;
      EXPECT_LT(anti.points[i].pgr, anti.points[i].achieved_fraction + 1e-12);
    }
    const auto random = ComputeRandomBaseline(records, 60, trial, targets);
    EXPECT_GE(Apgr(oracle), random.apgr_mean);
    EXPECT_LT(Apgr(anti), random.apgr_mean);
  }
}

TEST(SweepCurveTest, SeparateCalibrationSet) {
  const std::vector<EvalRecord> records = WinsThenTies(4, 2);
  const std::vector<double> probs = {0.9, 0.8, 0.2, 0.1};
  const std::vector<double> calibration = {0.95, 0.85, 0.75, 0.65};
  const std::vector<double> targets = {0.5};
  const auto curve = SweepCurve(records, probs, targets, "", calibration);
  EXPECT_DOUBLE_EQ(curve.points[0].alpha, 0.85);
  EXPECT_DOUBLE_EQ(curve.points[0].achieved_fraction, 0.25);
}

TEST(CptTest, Examples) {
  const auto records = WinsThenTies(100, 40);
  const auto oracle = OracleProbabilities(records);
  EXPECT_EQ(Cpt(records, oracle, 0.0).fraction, 0.0);
  // A 0/1 oracle admits only the thresholds that send all winners at once.
  const CptResult half = Cpt(records, oracle, 0.5);
  EXPECT_TRUE(half.reachable);
  EXPECT_DOUBLE_EQ(half.fraction, 0.4);
  EXPECT_DOUBLE_EQ(Cpt(records, oracle, 1.0).fraction, 0.4);
  // Distinct scores let the threshold split the winners.
  std::vector<double> graded = oracle;
  for (std::size_t i = 0; i < graded.size(); ++i) graded[i] *= 1.0 - 1e-3 * i;
  EXPECT_DOUBLE_EQ(Cpt(records, graded, 0.5).fraction, 0.2);

  // A predictor that ranks the winners last only recovers the gap at 100%.
  const auto anti = OracleProbabilities(records, true);
  EXPECT_EQ(Cpt(records, anti, 1.0).fraction, 1.0);
  EXPECT_TRUE(Cpt(records, anti, 1.0).reachable);
  EXPECT_FALSE(Cpt(records, anti, 1.5).reachable);
}

TEST(CptTest, MatchesExhaustiveThresholdScan) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> level(0, 9);
  for (int trial = 0; trial < 100; ++trial) {
    auto records = RandomEvalRecords(rng, 25);
    std::vector<double> probs;
    for (std::size_t i = 0; i < records.size(); ++i) probs.push_back(level(rng) / 10.0);
    const QualityRange range = ComputeQualityRange(records);
    for (double x : {0.25, 0.5, 0.8}) {
      double best = 1.0;
      std::vector<double> thresholds = probs;
      thresholds.push_back(2.0);
      for (double alpha : thresholds) {
        std::vector<RouteTarget> routed;
        for (double p : probs) routed.push_back(ThresholdRoute(p, alpha));
        if (Pgr(AverageQuality(records, routed), range.weak, range.strong) >= x - 1e-12) {
          best = std::min(best, StrongCallFraction(routed));
        }
      }
      EXPECT_NEAR(Cpt(records, probs, x).fraction, best, 1e-12);
    }
  }
}

TEST(CptTest, NonDecreasingInX) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const auto records = RandomEvalRecords(rng, 40);
    std::vector<double> probs;
    for (std::size_t i = 0; i < records.size(); ++i) probs.push_back(u(rng));
    const auto curve = SweepCurve(records, probs, DefaultCallTargets());
    double prev_exact = 0.0, prev_curve = 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double exact = Cpt(records, probs, i / 100.0).fraction;
      const double on_curve = Cpt(curve, i / 100.0).fraction;
      EXPECT_GE(exact, prev_exact);
      EXPECT_GE(on_curve, prev_curve);
      prev_exact = exact;
      prev_curve = on_curve;
    }
  }
}

TEST(CptTest, CurveInterpolation) {
  const auto curve = CurveOf({0.0, 0.5, 1.0}, {0.0, 0.8, 1.0});
  EXPECT_DOUBLE_EQ(Cpt(curve, 0.4).fraction, 0.25);
  EXPECT_DOUBLE_EQ(Cpt(curve, 0.9).fraction, 0.75);
  EXPECT_EQ(Cpt(curve, 0.0).fraction, 0.0);
}

TEST(RandomBaselineTest, DiagonalAndHalfApgr) {
  std::mt19937_64 rng(6);
  const auto records = RandomEvalRecords(rng, 1000);
  const auto targets = DefaultCallTargets();
  const RandomBaseline b = ComputeRandomBaseline(records, 200, 7, targets);
  EXPECT_FALSE(b.degenerate);
  EXPECT_NEAR(b.apgr_mean, 0.5, 0.02);
  for (const auto& p : b.curve.points) {
    EXPECT_NEAR(p.pgr, p.strong_fraction, 3.0 * p.ci95 + 1e-12);
  }
  EXPECT_EQ(b.curve.points.front().pgr, 0.0);
  EXPECT_EQ(b.curve.points.back().pgr, 1.0);
  const CptResult cpt = Cpt(b.curve, 0.5);
  EXPECT_NEAR(cpt.fraction, 0.5, 0.05);
}

TEST(RandomBaselineTest, ConfidenceShrinksWithTrials) {
  std::mt19937_64 rng(8);
  const auto records = RandomEvalRecords(rng, 200);
  const auto targets = DefaultCallTargets();
  double ratio_sum = 0.0;
  const int pairs = 10;
  for (int seed = 0; seed < pairs; ++seed) {
    const RandomBaseline few = ComputeRandomBaseline(records, 100, seed, targets);
    const RandomBaseline many = ComputeRandomBaseline(records, 400, 1000 + seed, targets);
    ratio_sum += few.apgr_ci95 / many.apgr_ci95;
  }
  EXPECT_NEAR(ratio_sum / pairs, 2.0, 0.2);
}

TEST(RandomBaselineTest, DeterministicAndDegenerateFlag) {
  std::mt19937_64 rng(9);
  const auto records = RandomEvalRecords(rng, 30);
  const auto targets = DefaultCallTargets();
  const RandomBaseline a = ComputeRandomBaseline(records, 40, 3, targets);
  const RandomBaseline b = ComputeRandomBaseline(records, 40, 3, targets);
  EXPECT_EQ(a.apgr_mean, b.apgr_mean);
  EXPECT_EQ(a.apgr_ci95, b.apgr_ci95);
  const std::vector<EvalRecord> one = {{"q", 0.0, 1.0, {}}};
  EXPECT_TRUE(ComputeRandomBaseline(one, 2, 1, targets).degenerate);
  EXPECT_THROW(ComputeRandomBaseline(records, 1, 1, targets), ConfigError);
}

EmbeddingVector Vec(std::initializer_list<float> v) { return EmbeddingVector{v}; }

TEST(SimilarityTest, Examples) {
  const std::vector<EmbeddingVector> dataset = {Vec({1, 0, 0}), Vec({0, 1, 0}),
                                                Vec({0, 0, 1})};
  EXPECT_NEAR(BenchmarkDatasetSimilarity({dataset[2], dataset[0]}, dataset), 1.0, 1e-7);
  // Row maxima 0.9 and 0.7.
  const std::vector<EmbeddingVector> d2 = {Vec({1, 0}), Vec({0, 1})};
  const float s9 = std::sqrt(1.0f - 0.81f), s7 = std::sqrt(1.0f - 0.49f);
  const std::vector<EmbeddingVector> b2 = {Vec({0.9f, s9}), Vec({0.7f, -s7})};
  EXPECT_NEAR(BenchmarkDatasetSimilarity(b2, d2), 0.8, 1e-6);
  EXPECT_THROW(BenchmarkDatasetSimilarity({Vec({0, 0})}, d2), ConfigError);
  EXPECT_THROW(BenchmarkDatasetSimilarity({Vec({1, 0, 0})}, d2), ConfigError);
  EXPECT_THROW(BenchmarkDatasetSimilarity({}, d2), ConfigError);
}

TEST(SimilarityTest, MatchesBruteForce) {
  std::mt19937_64 rng(10);
  std::uniform_int_distribution<int> size(1, 12);
  std::normal_distribution<float> n(0.0f, 1.0f);
  for (int trial = 0; trial < 100; ++trial) {
    const int dim = size(rng);
    auto draw = [&](int count) {
      std::vector<EmbeddingVector> out(count);
      for (auto& e : out) {
        e.values.resize(dim);
        for (float& v : e.values) v = n(rng);
      }
      return out;
    };
    const auto b = draw(size(rng));
    const auto d = draw(size(rng));
    double total = 0.0;
    for (const auto& x : b) {
      double best = -2.0;
      for (const auto& y : d) best = std::max(best, CosineSimilarity(x, y));
      total += best;
    }
    EXPECT_NEAR(BenchmarkDatasetSimilarity(b, d), total / b.size(), 1e-5);
  }
}

TEST(SimilarityTest, SubsetScoresExactlyOne) {
  std::mt19937_64 rng(11);
  std::normal_distribution<float> n(0.0f, 3.0f);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<EmbeddingVector> dataset(30);
    for (auto& e : dataset) {
      e.values.resize(1 + trial);
      for (float& v : e.values) v = n(rng);
    }
    std::vector<EmbeddingVector> subset;
    for (std::size_t i = 0; i < dataset.size(); i += 1 + trial % 4) subset.push_back(dataset[i]);
    EXPECT_EQ(BenchmarkDatasetSimilarity(subset, dataset), 1.0) << "trial " << trial;
  }
}

TEST(CostTest, AverageTokenCost) {
  EXPECT_NEAR(AverageTokenCost({10.0, 30.0}, 95.0, 264.0), 24.71, 0.05);
  EXPECT_NEAR(AverageTokenCost({0.24, 0.24}, 95.0, 264.0), 0.24, 1e-12);
  EXPECT_NEAR(AverageTokenCost({3.0, 3.0}, 1.0, 1000.0), 3.0, 1e-12);
  EXPECT_THROW(AverageTokenCost({1.0, 1.0}, 0.0, 0.0), ConfigError);
}

TEST(CostTest, SavingRatio) {
  EXPECT_EQ(CostSavingRatio(0.4, 0.4).ratio, 1.0);
  EXPECT_NEAR(CostSavingRatio(0.1340, 0.4903).ratio, 3.66, 0.01);
  EXPECT_EQ(CostSavingRatio(0.8, 0.4).ratio, 0.5);
  EXPECT_TRUE(CostSavingRatio(0.0, 0.4).unbounded);
}

TEST(CostTest, ModelFromJson) {
  const auto j = nlohmann::json::parse(R"({
    "strong": {"input_price": 10, "output_price": 30},
    "weak": {"input_price": 0.24, "output_price": 0.24},
    "avg_input_tokens": 95, "avg_output_tokens": 264})");
  const CostModel c = CostModel::FromJson(j);
  EXPECT_EQ(c.strong.output_per_million, 30.0);
  EXPECT_EQ(c.avg_output_tokens, 264.0);
  auto bad = j;
  bad["weak"]["input_price"] = -1;
  EXPECT_THROW(CostModel::FromJson(bad), ConfigError);
  bad = j;
  bad["avg_input_tokens"] = 0;
  bad["avg_output_tokens"] = 0;
  EXPECT_THROW(CostModel::FromJson(bad), ConfigError);
}

TEST(EvalRecordsTest, FileRoundTrip) {
  const std::vector<EvalRecord> records = {{"what is \"x\"?\n", 0.0, 1.0, 0.25},
                                           {"ünïcode", 6.5, 9.0, {}}};
  const auto path = TempPath("eval_records.jsonl");
  WriteEvalRecords(path, records);
  const auto loaded = LoadEvalRecords(path);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0].query, records[0].query);
  EXPECT_EQ(loaded[0].win_probability, 0.25);
  EXPECT_FALSE(loaded[1].win_probability.has_value());
  EXPECT_EQ(loaded[1].score_weak, 6.5);
}

TEST(CurveOutputTest, CsvAndSvg) {
  const auto curve = CurveOf({0.0, 0.5, 1.0}, {0.0, 0.75, 1.0});
  std::ostringstream csv;
  WriteCurveCsv(csv, curve);
  EXPECT_EQ(csv.str(), "strong_fraction,pgr,ci95\n0,0,0\n0.5,0.75,0\n1,1,0\n");
  CallPerformanceCurve named = curve;
  named.predictor_name = "mf <v2>";
  const std::string svg = RenderCurveSvg({named}, "A & B");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
  EXPECT_NE(svg.find("<polyline"), std::string::npos);
  EXPECT_NE(svg.find("A &amp; B"), std::string::npos);
  EXPECT_NE(svg.find("mf &lt;v2&gt;"), std::string::npos);
}

}  // namespace
}  // namespace prefroute
