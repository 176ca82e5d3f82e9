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

#ifndef PREFROUTE_SW_RANKING_H_
#define PREFROUTE_SW_RANKING_H_

#include <cstddef>
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

struct SwRankingConfig {
  double gamma = 10.0;
  double ridge = 1e-4;
  // Only the top_n most similar battles enter the solve; 0 uses all.
  std::size_t top_n = 0;
  int strong_tier = 0;
  int weak_tier = 2;
  int max_iterations = 1000;
  double tolerance = 1e-8;
};

// Tier battles with their query embeddings, stored unit-normalized in one
// contiguous row-major block. Immutable once built; share freely.
class RankingCorpus {
 public:
  RankingCorpus(int tier_count, std::size_t dim);

  // Ties must already be collapsed (see CollapseLabel). Throws on a
  // zero-norm or wrong-dimension embedding.
  void Add(TierBattle battle, const EmbeddingVector& embedding);

  // Builds from tier-labelled records ("tier_<i>" model identities).
  static RankingCorpus FromTierRecords(
      const std::vector<PreferenceRecord>& records,
      const std::vector<EmbeddingVector>& embeddings, int tier_count);

  std::size_t size() const { return battles_.size(); }
  bool empty() const { return battles_.empty(); }
  std::size_t dim() const { return dim_; }
  int tier_count() const { return tier_count_; }
  const std::vector<TierBattle>& battles() const { return battles_; }
  std::span<const float> unit_embedding(std::size_t i) const {
    return {unit_.data() + i * dim_, dim_};
  }

 private:
  int tier_count_;
  std::size_t dim_;
  std::vector<TierBattle> battles_;
  std::vector<float> unit_;
};

// cos(q, q_i) divided by the largest such cosine over the corpus. All zero
// when that maximum is not positive.
std::vector<double> SimilarityScores(const EmbeddingVector& query,
                                     const RankingCorpus& corpus);

// gamma^(1 + s) per score.
std::vector<double> BattleWeights(std::span<const double> scores, double gamma);

struct BtSolverOptions {
  double ridge = 1e-4;
  int max_iterations = 1000;
  double tolerance = 1e-8;
};

struct BtCoefficients {
  std::vector<double> xi;  // xi[0] pinned at 0
  int iterations = 0;
  double gradient_norm = 0.0;  // per-unit-weight infinity norm at the iterate
  bool converged = false;

  // P(tier a beats tier b) = sigmoid(xi[a] - xi[b]).
  double WinProbability(int a, int b) const;
};

// Minimizes the weight-normalized binary cross-entropy of the Bradley-Terry
// link plus ridge * |xi|^2 by gradient descent with backtracking.
BtCoefficients SolveBt(std::span<const TierBattle> battles,
                       std::span<const double> weights, int tier_count,
                       const BtSolverOptions& options = {});

// Full per-query pipeline on a precomputed query embedding.
double SwWinProbability(const EmbeddingVector& query,
                        const RankingCorpus& corpus,
                        const SwRankingConfig& config);

class SwRankingRouter : public WinPredictor {
 public:
  SwRankingRouter(std::shared_ptr<const RankingCorpus> corpus,
                  std::shared_ptr<Embedder> embedder, SwRankingConfig config);

  double Predict(std::string_view query) const override;
  std::string name() const override { return "sw_ranking"; }

  const SwRankingConfig& config() const { return config_; }

 private:
  std::shared_ptr<const RankingCorpus> corpus_;
  std::shared_ptr<Embedder> embedder_;
  SwRankingConfig config_;
};

// Corpus file: JSON with config keys, the embedding model name, and the
// tier battles by query text. Embeddings are resolved through `embedder`
// (normally cache hits) on load.
void SaveSwCorpus(const std::filesystem::path& path,
                  const std::vector<PreferenceRecord>& tier_records,
                  int tier_count, const SwRankingConfig& config,
                  const std::string& embedding_model);

struct LoadedSwCorpus {
  std::shared_ptr<const RankingCorpus> corpus;
  SwRankingConfig config;
  std::string embedding_model;
};
LoadedSwCorpus LoadSwCorpus(const std::filesystem::path& path,
                            Embedder& embedder);

}  // namespace prefroute

#endif  // PREFROUTE_SW_RANKING_H_
