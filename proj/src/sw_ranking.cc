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

#include "prefroute/sw_ranking.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace prefroute {

using nlohmann::json;

RankingCorpus::RankingCorpus(int tier_count, std::size_t dim)
    : tier_count_(tier_count), dim_(dim) {
  if (tier_count_ < 2) throw ConfigError("ranking corpus needs >= 2 tiers");
  if (dim_ == 0) throw ConfigError("ranking corpus needs a positive dimension");
}

void RankingCorpus::Add(TierBattle battle, const EmbeddingVector& embedding) {
  if (battle.winner < 0 || battle.winner >= tier_count_ || battle.loser < 0 ||
      battle.loser >= tier_count_) {
    throw ConfigError("battle tier out of range");
  }
  if (embedding.dim() != dim_) {
    throw ConfigError("corpus embedding dimension mismatch: expected " +
                      std::to_string(dim_) + ", got " +
                      std::to_string(embedding.dim()));
  }
  const double norm = embedding.Norm();
  if (norm == 0.0) throw ConfigError("zero-norm embedding in ranking corpus");
  battles_.push_back(battle);
  for (float v : embedding.values) {
    unit_.push_back(static_cast<float>(v / norm));
  }
}

RankingCorpus RankingCorpus::FromTierRecords(
    const std::vector<PreferenceRecord>& records,
    const std::vector<EmbeddingVector>& embeddings, int tier_count) {
  if (records.size() != embeddings.size()) {
    throw ConfigError("records and embeddings differ in length");
  }
  if (records.empty()) throw ConfigError("ranking corpus is empty");
  RankingCorpus corpus(tier_count, embeddings.front().dim());
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto a = ParseTierLabel(records[i].model_first);
    const auto b = ParseTierLabel(records[i].model_second);
    if (!a || !b) {
      throw DataError("record " + std::to_string(i) +
                      " is not tier-labelled: " + records[i].model_first +
                      " vs " + records[i].model_second);
    }
    corpus.Add(CollapseLabel(*a, *b, records[i].label), embeddings[i]);
  }
  return corpus;
}

namespace {

std::vector<double> CorpusCosines(const EmbeddingVector& query,
                                  const RankingCorpus& corpus) {
  if (corpus.empty()) throw ConfigError("ranking corpus is empty");
  if (query.dim() != corpus.dim()) {
    throw ConfigError("query embedding dimension mismatch");
  }
  const double norm = query.Norm();
  if (norm == 0.0) throw ConfigError("zero-norm query embedding");
  std::vector<double> unit(query.values.begin(), query.values.end());
  for (double& v : unit) v /= norm;
  std::vector<double> cos(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto row = corpus.unit_embedding(i);
    double dot = 0.0;
    for (std::size_t d = 0; d < row.size(); ++d) dot += unit[d] * row[d];
    cos[i] = std::clamp(dot, -1.0, 1.0);
  }
  return cos;
}

void NormalizeByMax(std::vector<double>& cos) {
  const double max = *std::max_element(cos.begin(), cos.end());
  if (max <= 0.0) {
    std::fill(cos.begin(), cos.end(), 0.0);
    return;
  }
  for (double& c : cos) c /= max;
}

// Weighted objective over aggregated (winner, loser) weight mass.
struct BtObjective {
  int tiers;
  std::vector<double> mass;  // tiers x tiers, normalized to sum 1
  double ridge;

  double Value(const std::vector<double>& xi) const {
    double f = 0.0;
    for (int w = 0; w < tiers; ++w) {
      for (int l = 0; l < tiers; ++l) {
        const double m = mass[w * tiers + l];
        if (m != 0.0) f += m * Softplus(xi[l] - xi[w]);
      }
    }
    for (int t = 1; t < tiers; ++t) f += ridge * xi[t] * xi[t];
    return f;
  }

  std::vector<double> Gradient(const std::vector<double>& xi) const {
    std::vector<double> g(tiers, 0.0);
    for (int w = 0; w < tiers; ++w) {
      for (int l = 0; l < tiers; ++l) {
        const double m = mass[w * tiers + l];
        if (m == 0.0 || w == l) continue;
        const double d = m * Sigmoid(xi[l] - xi[w]);
        g[w] -= d;
        g[l] += d;
      }
    }
    for (int t = 1; t < tiers; ++t) g[t] += 2.0 * ridge * xi[t];
    g[0] = 0.0;
    return g;
  }
};

double InfNorm(const std::vector<double>& v) {
  double m = 0.0;
  for (double x : v) m = std::max(m, std::fabs(x));
  return m;
}

}  // namespace

std::vector<double> SimilarityScores(const EmbeddingVector& query,
                                     const RankingCorpus& corpus) {
  auto cos = CorpusCosines(query, corpus);
  NormalizeByMax(cos);
  return cos;
}

std::vector<double> BattleWeights(std::span<const double> scores,
                                  double gamma) {
  if (!(gamma > 1.0)) throw ConfigError("gamma must be > 1");
  std::vector<double> w(scores.size());
  std::transform(scores.begin(), scores.end(), w.begin(),
                 [gamma](double s) { return std::pow(gamma, 1.0 + s); });
  return w;
}

double BtCoefficients::WinProbability(int a, int b) const {
  return Sigmoid(xi.at(a) - xi.at(b));
}

BtCoefficients SolveBt(std::span<const TierBattle> battles,
                       std::span<const double> weights, int tier_count,
                       const BtSolverOptions& options) {
  if (battles.size() != weights.size()) {
    throw ConfigError("weights length differs from corpus length");
  }
  if (tier_count < 1) throw ConfigError("tier count must be positive");
  BtObjective objective{tier_count,
                        std::vector<double>(tier_count * tier_count, 0.0),
                        options.ridge};
  double total = 0.0;
  double largest = 0.0;
  for (std::size_t i = 0; i < battles.size(); ++i) {
    if (!(weights[i] >= 0.0) || !std::isfinite(weights[i])) {
      throw ConfigError("battle weights must be finite and non-negative");
    }
    const auto& b = battles[i];
    if (b.winner < 0 || b.winner >= tier_count || b.loser < 0 ||
        b.loser >= tier_count) {
      throw ConfigError("battle tier out of range");
    }
    objective.mass[b.winner * tier_count + b.loser] += weights[i];
    total += weights[i];
    largest = std::max(largest, weights[i]);
  }
  if (!(total > 0.0)) throw ConfigError("battle weights are all zero");
  // Weights are measured in units of the largest one. This keeps the argmin
  // scale free, and unlike dividing by the total it leaves the ridge
  // untouched when a battle no heavier than the current maximum is added.
  for (double& m : objective.mass) m /= largest;
  // Stopping test on the per-unit-weight gradient.
  const double gradient_scale = largest / total;
  auto stationary = [&](const std::vector<double>& grad) {
    return InfNorm(grad) * gradient_scale;
  };

  BtCoefficients out;
  std::vector<double> xi(tier_count, 0.0);
  double f = objective.Value(xi);
  std::vector<double> g = objective.Gradient(xi);
  std::vector<double> prev_xi, prev_g;
  double step = 1.0;
  int it = 0;
  for (; it < options.max_iterations; ++it) {
    if (stationary(g) < options.tolerance) break;
    // Barzilai-Borwein trial step, then Armijo backtracking.
    if (!prev_xi.empty()) {
      double sy = 0.0, ss = 0.0;
      for (int t = 0; t < tier_count; ++t) {
        const double s = xi[t] - prev_xi[t];
        sy += s * (g[t] - prev_g[t]);
        ss += s * s;
      }
      step = sy > 0.0 ? ss / sy : 1.0;
    }
    double gg = 0.0;
    for (double x : g) gg += x * x;
    std::vector<double> candidate(tier_count);
    double f_new = f;
    bool accepted = false;
    for (int backtrack = 0; backtrack < 60; ++backtrack) {
      for (int t = 0; t < tier_count; ++t) candidate[t] = xi[t] - step * g[t];
      f_new = objective.Value(candidate);
      if (f_new <= f - 1e-4 * step * gg) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;  // no further decrease representable
    prev_xi = std::move(xi);
    prev_g = std::move(g);
    xi = candidate;
    f = f_new;
    g = objective.Gradient(xi);
  }
  out.xi = std::move(xi);
  out.iterations = it;
  out.gradient_norm = stationary(g);
  out.converged = out.gradient_norm < options.tolerance;
  return out;
}

double SwWinProbability(const EmbeddingVector& query,
                        const RankingCorpus& corpus,
                        const SwRankingConfig& config) {
  if (config.strong_tier < 0 || config.strong_tier >= corpus.tier_count() ||
      config.weak_tier < 0 || config.weak_tier >= corpus.tier_count()) {
    throw ConfigError("strong/weak tier outside the corpus tier range");
  }
  auto cos = CorpusCosines(query, corpus);
  std::vector<std::size_t> keep;
  if (config.top_n > 0 && config.top_n < corpus.size()) {
    keep.resize(corpus.size());
    std::iota(keep.begin(), keep.end(), 0);
    std::nth_element(keep.begin(), keep.begin() + config.top_n, keep.end(),
                     [&](std::size_t a, std::size_t b) {
                       return cos[a] != cos[b] ? cos[a] > cos[b] : a < b;
                     });
    keep.resize(config.top_n);
    std::sort(keep.begin(), keep.end());
  }
  NormalizeByMax(cos);
  std::vector<TierBattle> battles;
  std::vector<double> scores;
  if (keep.empty()) {
    battles = corpus.battles();
    scores = std::move(cos);
  } else {
    for (std::size_t i : keep) {
      battles.push_back(corpus.battles()[i]);
      scores.push_back(cos[i]);
    }
  }
  const auto weights = BattleWeights(scores, config.gamma);
  const auto coefficients = SolveBt(
      battles, weights, corpus.tier_count(),
      {config.ridge, config.max_iterations, config.tolerance});
  return coefficients.WinProbability(config.strong_tier, config.weak_tier);
}

SwRankingRouter::SwRankingRouter(std::shared_ptr<const RankingCorpus> corpus,
                                 std::shared_ptr<Embedder> embedder,
                                 SwRankingConfig config)
    : corpus_(std::move(corpus)),
      embedder_(std::move(embedder)),
      config_(config) {
  if (!corpus_ || corpus_->empty()) throw ConfigError("empty ranking corpus");
  if (!embedder_) throw ConfigError("sw ranking router needs an embedder");
}

double SwRankingRouter::Predict(std::string_view query) const {
  return SwWinProbability(embedder_->EmbedOne(query), *corpus_, config_);
}

void SaveSwCorpus(const std::filesystem::path& path,
                  const std::vector<PreferenceRecord>& tier_records,
                  int tier_count, const SwRankingConfig& config,
                  const std::string& embedding_model) {
  json records = json::array();
  for (const auto& r : tier_records) {
    const auto a = ParseTierLabel(r.model_first);
    const auto b = ParseTierLabel(r.model_second);
    if (!a || !b) throw DataError("corpus records must be tier-labelled");
    const TierBattle battle = CollapseLabel(*a, *b, r.label);
    records.push_back(
        {{"query", r.query}, {"winner", battle.winner}, {"loser", battle.loser}});
  }
  const json j = {{"format", "prefroute-sw-corpus"},
                  {"version", 1},
                  {"tier_count", tier_count},
                  {"gamma", config.gamma},
                  {"ridge", config.ridge},
                  {"top_n", config.top_n},
                  {"strong_tier", config.strong_tier},
                  {"weak_tier", config.weak_tier},
                  {"embedding_model", embedding_model},
                  {"records", records}};
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
}

LoadedSwCorpus LoadSwCorpus(const std::filesystem::path& path,
                            Embedder& embedder) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw DataError("invalid corpus file " + path.string() + ": " + e.what());
  }
  if (j.value("format", "") != "prefroute-sw-corpus") {
    throw DataError(path.string() + " is not a ranking corpus file");
  }
  LoadedSwCorpus loaded;
  loaded.embedding_model = j.at("embedding_model").get<std::string>();
  if (loaded.embedding_model != embedder.model_name()) {
    throw ConfigError("corpus was built with embedding model " +
                      loaded.embedding_model + " but the embedder is " +
                      embedder.model_name());
  }
  loaded.config.gamma = j.value("gamma", loaded.config.gamma);
  loaded.config.ridge = j.value("ridge", loaded.config.ridge);
  loaded.config.top_n = j.value("top_n", loaded.config.top_n);
  loaded.config.strong_tier = j.value("strong_tier", loaded.config.strong_tier);
  loaded.config.weak_tier = j.value("weak_tier", loaded.config.weak_tier);
  const int tier_count = j.at("tier_count").get<int>();
  std::vector<std::string> queries;
  std::vector<TierBattle> battles;
  for (const auto& r : j.at("records")) {
    queries.push_back(r.at("query").get<std::string>());
    battles.push_back({r.at("winner").get<int>(), r.at("loser").get<int>()});
  }
  if (queries.empty()) throw DataError("corpus file has no records");
  const auto embeddings = embedder.Embed(queries);
  auto corpus = std::make_shared<RankingCorpus>(tier_count, embeddings.front().dim());
  for (std::size_t i = 0; i < battles.size(); ++i) corpus->Add(battles[i], embeddings[i]);
  loaded.corpus = std::move(corpus);
  return loaded;
}

}  // namespace prefroute
