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

#include "prefroute/matrix_factorization.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "json.hpp"

namespace prefroute {

using nlohmann::json;

MfParams MfParams::Zeros(int tier_count, int d_q, int d_m) {
  if (tier_count < 1 || d_q < 1 || d_m < 1) {
    throw ConfigError("matrix factorization dimensions must be positive");
  }
  MfParams p;
  p.model_embeddings = Eigen::MatrixXd::Zero(tier_count, d_m);
  p.projection = Eigen::MatrixXd::Zero(d_q, d_m);
  p.bias = Eigen::VectorXd::Zero(d_m);
  p.head = Eigen::VectorXd::Zero(d_m);
  return p;
}

MfParams MfParams::Random(int tier_count, int d_q, int d_m,
                          std::uint64_t seed) {
  MfParams p = Zeros(tier_count, d_q, d_m);
  std::mt19937_64 rng(seed);
  auto fill = [&rng](auto& m, double bound) {
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  };
  fill(p.model_embeddings, 1.0 / std::sqrt(static_cast<double>(d_m)));
  fill(p.projection, 1.0 / std::sqrt(static_cast<double>(d_q)));
  fill(p.head, 1.0 / std::sqrt(static_cast<double>(d_m)));
  return p;
}

void MfParams::Validate() const {
  const auto dm = model_embeddings.cols();
  if (model_embeddings.rows() < 1 || dm < 1 || projection.rows() < 1 ||
      projection.cols() != dm || bias.size() != dm || head.size() != dm) {
    throw ConfigError("inconsistent matrix factorization parameter shapes");
  }
  auto finite = [](const auto& m) { return m.allFinite(); };
  if (!finite(model_embeddings) || !finite(projection) || !finite(bias) ||
      !finite(head)) {
    throw ConfigError("non-finite matrix factorization parameters");
  }
}

namespace {

void CheckQuery(const MfParams& params, int tier, Eigen::Index query_dim) {
  if (query_dim != params.projection.rows()) {
    throw ConfigError("query dimension " + std::to_string(query_dim) +
                      " does not match projection input " +
                      std::to_string(params.projection.rows()));
  }
  if (tier < 0 || tier >= params.tier_count()) {
    throw ConfigError("tier index " + std::to_string(tier) + " out of range");
  }
}

}  // namespace

double MfScore(const MfParams& params, int tier,
               const Eigen::Ref<const Eigen::VectorXd>& query) {
  CheckQuery(params, tier, query.size());
  const Eigen::VectorXd hidden = params.projection.transpose() * query + params.bias;
  return params.head.dot(
      params.model_embeddings.row(tier).transpose().cwiseProduct(hidden));
}

double MfWinProbability(const MfParams& params, int strong_tier, int weak_tier,
                        const Eigen::Ref<const Eigen::VectorXd>& query) {
  CheckQuery(params, strong_tier, query.size());
  CheckQuery(params, weak_tier, query.size());
  const Eigen::VectorXd hidden = params.projection.transpose() * query + params.bias;
  const double strong = params.head.dot(
      params.model_embeddings.row(strong_tier).transpose().cwiseProduct(hidden));
  const double weak = params.head.dot(
      params.model_embeddings.row(weak_tier).transpose().cwiseProduct(hidden));
  return Sigmoid(strong - weak);
}

Eigen::VectorXd ToUnitVector(const EmbeddingVector& embedding) {
  const double norm = embedding.Norm();
  if (norm == 0.0) throw ConfigError("zero-norm embedding");
  Eigen::VectorXd v(embedding.dim());
  for (std::size_t i = 0; i < embedding.dim(); ++i) {
    v[static_cast<Eigen::Index>(i)] = embedding.values[i] / norm;
  }
  return v;
}

MfExampleBuild BuildMfExamples(const std::vector<PreferenceRecord>& tier_records,
                               const std::vector<EmbeddingVector>& embeddings,
                               int tier_count) {
  if (tier_records.size() != embeddings.size()) {
    throw ConfigError("records and embeddings differ in length");
  }
  MfExampleBuild out;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < tier_records.size(); ++i) {
    const auto a = ParseTierLabel(tier_records[i].model_first);
    const auto b = ParseTierLabel(tier_records[i].model_second);
    if (!a || !b || *a >= tier_count || *b >= tier_count) {
      throw DataError("record " + std::to_string(i) +
                      " is not labelled with a valid tier");
    }
    if (*a == *b) {
      ++out.same_tier_skipped;
      continue;
    }
    keep.push_back(i);
    out.examples.battles.push_back(CollapseLabel(*a, *b, tier_records[i].label));
  }
  if (keep.empty()) return out;
  const auto dim = static_cast<Eigen::Index>(embeddings[keep.front()].dim());
  out.examples.queries.resize(static_cast<Eigen::Index>(keep.size()), dim);
  for (std::size_t r = 0; r < keep.size(); ++r) {
    const auto& e = embeddings[keep[r]];
    if (static_cast<Eigen::Index>(e.dim()) != dim) {
      throw ConfigError("embedding dimensions differ within the dataset");
    }
    out.examples.queries.row(static_cast<Eigen::Index>(r)) =
        ToUnitVector(e).cast<float>().transpose();
  }
  return out;
}

MfLossAndGradients ComputeMfLossAndGradients(
    const MfParams& params, const MfExamples& data,
    std::span<const std::size_t> batch) {
  if (batch.empty()) throw ConfigError("empty batch");
  if (data.queries.cols() != params.d_q()) {
    throw ConfigError("example dimension does not match the projection");
  }
  const auto n = static_cast<Eigen::Index>(batch.size());
  const int dm = params.d_m();
  Eigen::MatrixXd queries(n, params.d_q());
  Eigen::MatrixXd gap(n, dm);  // v_winner - v_loser
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::size_t idx = batch[static_cast<std::size_t>(r)];
    queries.row(r) = data.queries.row(static_cast<Eigen::Index>(idx)).cast<double>();
    const TierBattle& b = data.battles[idx];
    gap.row(r) = params.model_embeddings.row(b.winner) -
                 params.model_embeddings.row(b.loser);
  }
  Eigen::MatrixXd hidden = queries * params.projection;
  hidden.rowwise() += params.bias.transpose();

  MfLossAndGradients out;
  out.gradients = MfParams::Zeros(params.tier_count(), params.d_q(), dm);
  Eigen::MatrixXd d_hidden(n, dm);
  const double inv_n = 1.0 / static_cast<double>(n);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::RowVectorXd interaction = gap.row(r).cwiseProduct(hidden.row(r));
    const double margin = interaction.dot(params.head.transpose());
    out.loss += Softplus(-margin) * inv_n;
    // d loss / d margin
    const double g = -Sigmoid(-margin) * inv_n;
    out.gradients.head += g * interaction.transpose();
    const Eigen::RowVectorXd via_model =
        g * params.head.transpose().cwiseProduct(hidden.row(r));
    const TierBattle& b = data.battles[batch[static_cast<std::size_t>(r)]];
    out.gradients.model_embeddings.row(b.winner) += via_model;
    out.gradients.model_embeddings.row(b.loser) -= via_model;
    d_hidden.row(r) = g * params.head.transpose().cwiseProduct(gap.row(r));
  }
  out.gradients.bias = d_hidden.colwise().sum().transpose();
  out.gradients.projection = queries.transpose() * d_hidden;
  return out;
}

double PairwiseAccuracy(const MfParams& params, const MfExamples& data) {
  if (data.size() == 0) return 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::VectorXd q =
        data.queries.row(static_cast<Eigen::Index>(i)).cast<double>().transpose();
    const auto& b = data.battles[i];
    if (MfWinProbability(params, b.winner, b.loser, q) > 0.5) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

// First and second moment buffers shaped like MfParams.
struct AdamState {
  MfParams m;
  MfParams v;
  long step = 0;
};

template <typename T>
void AdamUpdate(T& param, T& m, T& v, const T& grad, double lr, double wd,
                double bias1, double bias2) {
  constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  param *= (1.0 - lr * wd);
  m = kBeta1 * m + (1.0 - kBeta1) * grad;
  v = kBeta2 * v + (1.0 - kBeta2) * grad.cwiseProduct(grad);
  param.array() -= lr * (m.array() / bias1) /
                   ((v.array() / bias2).sqrt() + kEps);
}

}  // namespace

MfTrainResult TrainMf(const MfExamples& train, const MfExamples& validation,
                      int tier_count, const MfTrainConfig& config) {
  if (train.size() == 0) {
    throw DataError("no cross-tier training records after label collapse");
  }
  return TrainMf(train, validation,
                 MfParams::Random(tier_count, static_cast<int>(train.queries.cols()),
                                  config.d_m, config.seed),
                 config);
}

MfTrainResult TrainMf(const MfExamples& train, const MfExamples& validation,
                      MfParams init, const MfTrainConfig& config) {
  if (config.epochs < 0 || config.batch_size < 1 || !(config.learning_rate > 0.0) ||
      config.weight_decay < 0.0) {
    throw ConfigError("invalid training hyperparameters");
  }
  if (train.size() == 0) {
    throw DataError("no cross-tier training records after label collapse");
  }
  init.Validate();
  std::set<int> tiers_seen;
  for (const auto& b : train.battles) {
    tiers_seen.insert(b.winner);
    tiers_seen.insert(b.loser);
    if (std::max(b.winner, b.loser) >= init.tier_count()) {
      throw ConfigError("training tier exceeds model tier count");
    }
  }
  if (tiers_seen.size() < 2) throw DataError("training data covers fewer than two tiers");

  MfTrainResult result{init, {}};
  MfParams params = std::move(init);
  AdamState adam{MfParams::Zeros(params.tier_count(), params.d_q(), params.d_m()),
                 MfParams::Zeros(params.tier_count(), params.d_q(), params.d_m())};
  std::mt19937_64 rng(config.seed ^ 0x5bd1e995ULL);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  const bool has_validation = validation.size() > 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t len =
          std::min<std::size_t>(config.batch_size, order.size() - start);
      const auto step = ComputeMfLossAndGradients(
          params, train, std::span<const std::size_t>(order.data() + start, len));
      loss_sum += step.loss;
      ++batches;
      ++adam.step;
      const double bias1 = 1.0 - std::pow(0.9, static_cast<double>(adam.step));
      const double bias2 = 1.0 - std::pow(0.999, static_cast<double>(adam.step));
      const double lr = config.learning_rate, wd = config.weight_decay;
      AdamUpdate(params.model_embeddings, adam.m.model_embeddings,
                 adam.v.model_embeddings, step.gradients.model_embeddings, lr,
                 wd, bias1, bias2);
      AdamUpdate(params.projection, adam.m.projection, adam.v.projection,
                 step.gradients.projection, lr, wd, bias1, bias2);
      AdamUpdate(params.bias, adam.m.bias, adam.v.bias, step.gradients.bias, lr,
                 wd, bias1, bias2);
      AdamUpdate(params.head, adam.m.head, adam.v.head, step.gradients.head, lr,
                 wd, bias1, bias2);
    }
    result.report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    const double accuracy =
        has_validation ? PairwiseAccuracy(params, validation) : 0.0;
    result.report.validation_accuracy.push_back(accuracy);
    const bool better = !has_validation || result.report.best_epoch < 0 ||
                        accuracy > result.report.best_validation_accuracy;
    if (better) {
      result.report.best_epoch = epoch;
      result.report.best_validation_accuracy = accuracy;
      result.params = params;
    }
  }
  return result;
}

namespace {

json MatrixToJson(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(m.cols());
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[c] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

Eigen::MatrixXd MatrixFromJson(const json& rows, Eigen::Index n_rows,
                               Eigen::Index n_cols) {
  if (static_cast<Eigen::Index>(rows.size()) != n_rows) {
    throw DataError("checkpoint matrix row count mismatch");
  }
  Eigen::MatrixXd m(n_rows, n_cols);
  for (Eigen::Index r = 0; r < n_rows; ++r) {
    const auto row = rows[r].get<std::vector<double>>();
    if (static_cast<Eigen::Index>(row.size()) != n_cols) {
      throw DataError("checkpoint matrix column count mismatch");
    }
    for (Eigen::Index c = 0; c < n_cols; ++c) m(r, c) = row[c];
  }
  return m;
}

Eigen::VectorXd VectorFromJson(const json& values, Eigen::Index n) {
  const auto v = values.get<std::vector<double>>();
  if (static_cast<Eigen::Index>(v.size()) != n) {
    throw DataError("checkpoint vector length mismatch");
  }
  return Eigen::Map<const Eigen::VectorXd>(v.data(), n);
}

}  // namespace

void SaveMfCheckpoint(const std::filesystem::path& path,
                      const MfCheckpoint& checkpoint) {
  const MfParams& p = checkpoint.params;
  p.Validate();
  const json j = {
      {"format", "prefroute-mf"},
      {"version", 1},
      {"tier_count", p.tier_count()},
      {"d_q", p.d_q()},
      {"d_m", p.d_m()},
      {"embedding_model", checkpoint.embedding_model},
      {"strong_tier", checkpoint.strong_tier},
      {"weak_tier", checkpoint.weak_tier},
      {"model_embeddings", MatrixToJson(p.model_embeddings)},
      {"projection", MatrixToJson(p.projection)},
      {"bias", std::vector<double>(p.bias.data(), p.bias.data() + p.bias.size())},
      {"head", std::vector<double>(p.head.data(), p.head.data() + p.head.size())}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump() << "\n";
}

MfCheckpoint LoadMfCheckpoint(const std::filesystem::path& path,
                              const std::string& expected_embedding_model) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  MfCheckpoint c;
  try {
    const json j = json::parse(in);
    if (j.value("format", "") != "prefroute-mf" || j.value("version", 0) != 1) {
      throw DataError(path.string() + " is not a version-1 MF checkpoint");
    }
    const int tiers = j.at("tier_count").get<int>();
    const int dq = j.at("d_q").get<int>();
    const int dm = j.at("d_m").get<int>();
    c.embedding_model = j.at("embedding_model").get<std::string>();
    c.strong_tier = j.value("strong_tier", 0);
    c.weak_tier = j.value("weak_tier", 2);
    c.params.model_embeddings = MatrixFromJson(j.at("model_embeddings"), tiers, dm);
    c.params.projection = MatrixFromJson(j.at("projection"), dq, dm);
    c.params.bias = VectorFromJson(j.at("bias"), dm);
    c.params.head = VectorFromJson(j.at("head"), dm);
  } catch (const json::exception& e) {
    throw DataError("invalid MF checkpoint " + path.string() + ": " + e.what());
  }
  c.params.Validate();
  if (!expected_embedding_model.empty() &&
      expected_embedding_model != c.embedding_model) {
    throw ConfigError("checkpoint was trained with embedding model " +
                      c.embedding_model + " but " + expected_embedding_model +
                      " is configured");
  }
  return c;
}

MfRouter::MfRouter(std::shared_ptr<const MfCheckpoint> checkpoint,
                   std::shared_ptr<Embedder> embedder)
    : checkpoint_(std::move(checkpoint)), embedder_(std::move(embedder)) {
  if (!checkpoint_ || !embedder_) {
    throw ConfigError("MF router needs a checkpoint and an embedder");
  }
  if (embedder_->model_name() != checkpoint_->embedding_model) {
    throw ConfigError("checkpoint was trained with embedding model " +
                      checkpoint_->embedding_model + " but the embedder is " +
                      embedder_->model_name());
  }
}

double MfRouter::Predict(std::string_view query) const {
  const Eigen::VectorXd q = ToUnitVector(embedder_->EmbedOne(query));
  return MfWinProbability(checkpoint_->params, checkpoint_->strong_tier,
                          checkpoint_->weak_tier, q);
}

}  // namespace prefroute
