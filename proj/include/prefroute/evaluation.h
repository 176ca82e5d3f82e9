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

#ifndef PREFROUTE_EVALUATION_H_
#define PREFROUTE_EVALUATION_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "prefroute/embeddings.h"
#include "prefroute/routing.h"

namespace prefroute {

// A benchmark query with precomputed quality scores for both models.
struct EvalRecord {
  std::string query;
  double score_weak = 0.0;
  double score_strong = 0.0;
  std::optional<double> win_probability;
};

// JSON lines: {"prompt", "score_weak", "score_strong"[, "win_probability"]}.
std::vector<EvalRecord> LoadEvalRecords(const std::filesystem::path& path);
void WriteEvalRecords(const std::filesystem::path& path,
                      const std::vector<EvalRecord>& records);

struct CurvePoint {
  double strong_fraction = 0.0;  // targeted call fraction
  double pgr = 0.0;
  double achieved_fraction = 0.0;
  double alpha = 0.0;
  double ci95 = 0.0;  // half-width; zero for deterministic routers
};

struct CallPerformanceCurve {
  std::vector<CurvePoint> points;
  std::string predictor_name;
};

double StrongCallFraction(std::span<const RoutingDecision> decisions);
double StrongCallFraction(std::span<const RouteTarget> targets);

// Mean score of the model each query was routed to.
double AverageQuality(std::span<const EvalRecord> records,
                      std::span<const RouteTarget> targets);
double AverageQuality(std::span<const EvalRecord> records,
                      std::span<const RoutingDecision> decisions);

// (r_router - r_weak) / (r_strong - r_weak), unclipped.
double Pgr(double r_router, double r_weak, double r_strong);

struct QualityRange {
  double weak = 0.0;    // mean score_weak
  double strong = 0.0;  // mean score_strong
};
QualityRange ComputeQualityRange(std::span<const EvalRecord> records);

// {0, 0.1, ..., 1.0}.
std::vector<double> DefaultCallTargets();

// For every target fraction, calibrates alpha (on `calibration` when given,
// else on `probabilities`), routes the records and records the PGR.
CallPerformanceCurve SweepCurve(
    std::span<const EvalRecord> records, std::span<const double> probabilities,
    std::span<const double> targets, std::string predictor_name = {},
    std::optional<std::span<const double>> calibration = std::nullopt);

// Area under PGR over the strong-call fraction (trapezoid rule), divided by
// the covered fraction range.
double Apgr(const CallPerformanceCurve& curve);

struct CptResult {
  double fraction = 1.0;
  bool reachable = true;
};

// Smallest achievable strong-call fraction with PGR >= x, over every
// threshold the record set admits.
CptResult Cpt(std::span<const EvalRecord> records,
              std::span<const double> probabilities, double x);
// Same on a curve, interpolating linearly from the (0, 0) origin.
CptResult Cpt(const CallPerformanceCurve& curve, double x);

struct RandomBaseline {
  CallPerformanceCurve curve;  // per-point mean PGR and 95% half-width
  double apgr_mean = 0.0;
  double apgr_ci95 = 0.0;
  // Normal approximation unreliable: fewer than 2 records or 30 trials.
  bool degenerate = false;
};

// Routes each query Strong with probability c independently per trial.
// Trial t draws from its own generator seeded from (seed, t).
RandomBaseline ComputeRandomBaseline(std::span<const EvalRecord> records,
                                     int trials, std::uint64_t seed,
                                     std::span<const double> targets);

// Mean over benchmark prompts of the best cosine to any dataset prompt.
double BenchmarkDatasetSimilarity(const std::vector<EmbeddingVector>& benchmark,
                                  const std::vector<EmbeddingVector>& dataset);

struct ModelPrice {
  double input_per_million = 0.0;
  double output_per_million = 0.0;
};

struct CostModel {
  ModelPrice strong;
  ModelPrice weak;
  double avg_input_tokens = 0.0;
  double avg_output_tokens = 0.0;

  static CostModel FromJson(const nlohmann::json& j);
};

// Token-weighted mean price per 1M tokens.
double AverageTokenCost(const ModelPrice& price, double input_tokens,
                        double output_tokens);

struct SavingRatio {
  double ratio = 1.0;
  bool unbounded = false;
};
// random_cpt / router_cpt.
SavingRatio CostSavingRatio(double router_cpt, double random_cpt);

// "strong_fraction,pgr,ci95" with a header row.
void WriteCurveCsv(std::ostream& out, const CallPerformanceCurve& curve);
// Line plot of one or more curves plus the random diagonal.
std::string RenderCurveSvg(const std::vector<CallPerformanceCurve>& curves,
                           const std::string& title);

}  // namespace prefroute

#endif  // PREFROUTE_EVALUATION_H_
