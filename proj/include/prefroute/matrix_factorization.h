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

#ifndef PREFROUTE_MATRIX_FACTORIZATION_H_
#define PREFROUTE_MATRIX_FACTORIZATION_H_

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prefroute/embeddings.h"
#include "prefroute/preference_data.h"
#include "prefroute/routing.h"
#include "prefroute/tiering.h"

namespace prefroute {

// Bilinear scorer s(tier, q) = head . (model_embeddings[tier] * (W^T q + bias)).
struct MfParams {
  Eigen::MatrixXd model_embeddings;  // tier_count x d_m
  Eigen::MatrixXd projection;        // d_q x d_m
  Eigen::VectorXd bias;              // d_m
  Eigen::VectorXd head;              // d_m

  static MfParams Zeros(int tier_count, int d_q, int d_m);
  // Uniform in [-1/sqrt(fan), 1/sqrt(fan)], bias zero.
  static MfParams Random(int tier_count, int d_q, int d_m, std::uint64_t seed);

  int tier_count() const { return static_cast<int>(model_embeddings.rows()); }
  int d_q() const { return static_cast<int>(projection.rows()); }
  int d_m() const { return static_cast<int>(model_embeddings.cols()); }
  // Throws ConfigError unless all shapes agree.
  void Validate() const;
};

double MfScore(const MfParams& params, int tier,
               const Eigen::Ref<const Eigen::VectorXd>& query);

// sigmoid(score(strong) - score(weak)); exactly antisymmetric in the tiers.
double MfWinProbability(const MfParams& params, int strong_tier, int weak_tier,
                        const Eigen::Ref<const Eigen::VectorXd>& query);

// Collapsed, cross-tier training examples. Query embeddings are
// unit-normalized and kept as float rows to bound memory.
struct MfExamples {
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> queries;
  std::vector<TierBattle> battles;

  std::size_t size() const { return battles.size(); }
};

struct MfExampleBuild {
  MfExamples examples;
  std::size_t same_tier_skipped = 0;
};

// Ties become weak-side wins; same-tier battles are skipped.
MfExampleBuild BuildMfExamples(const std::vector<PreferenceRecord>& tier_records,
                               const std::vector<EmbeddingVector>& embeddings,
                               int tier_count);

struct MfLossAndGradients {
  double loss = 0.0;
  MfParams gradients;
};

// Mean over `batch` (indices into `data`) of -log sigmoid(s_winner - s_loser)
// with exact analytic gradients for every parameter.
MfLossAndGradients ComputeMfLossAndGradients(const MfParams& params,
                                             const MfExamples& data,
                                             std::span<const std::size_t> batch);

struct MfTrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 3e-4;
  double weight_decay = 1e-5;
  int d_m = 128;
  std::uint64_t seed = 0;
};

struct TrainReport {
  std::vector<double> epoch_loss;
  std::vector<double> validation_accuracy;
  double best_validation_accuracy = 0.0;
  int best_epoch = -1;
};

// Fraction of examples where the winner outscores the loser.
double PairwiseAccuracy(const MfParams& params, const MfExamples& data);

struct MfTrainResult {
  MfParams params;
  TrainReport report;
};

// Mini-batch Adam with decoupled weight decay, reshuffled every epoch from
// `config.seed`. Returns the parameters of the epoch with the best
// validation accuracy (the last epoch when no validation data is given).
MfTrainResult TrainMf(const MfExamples& train, const MfExamples& validation,
                      int tier_count, const MfTrainConfig& config);
// Same, starting from `init` instead of a seeded random draw.
MfTrainResult TrainMf(const MfExamples& train, const MfExamples& validation,
                      MfParams init, const MfTrainConfig& config);

struct MfCheckpoint {
  MfParams params;
  std::string embedding_model;
  int strong_tier = 0;
  int weak_tier = 2;
};

void SaveMfCheckpoint(const std::filesystem::path& path,
                      const MfCheckpoint& checkpoint);
// Throws ConfigError when `expected_embedding_model` is non-empty and
// differs from the checkpoint's.
MfCheckpoint LoadMfCheckpoint(const std::filesystem::path& path,
                              const std::string& expected_embedding_model = {});

class MfRouter : public WinPredictor {
 public:
  MfRouter(std::shared_ptr<const MfCheckpoint> checkpoint,
           std::shared_ptr<Embedder> embedder);

  double Predict(std::string_view query) const override;
  std::string name() const override { return "matrix_factorization"; }

 private:
  std::shared_ptr<const MfCheckpoint> checkpoint_;
  std::shared_ptr<Embedder> embedder_;
};

// Unit-normalized double copy of an embedding.
Eigen::VectorXd ToUnitVector(const EmbeddingVector& embedding);

}  // namespace prefroute

#endif  // PREFROUTE_MATRIX_FACTORIZATION_H_
