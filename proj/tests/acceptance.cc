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

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "prefroute/evaluation.h"
#include "prefroute/gateway.h"
#include "prefroute/matrix_factorization.h"
#include "prefroute/preference_data.h"
#include "prefroute/routing.h"
#include "prefroute/sw_ranking.h"
#include "prefroute/tiering.h"
#include "synthetic.h"
#include "httplib.h"
#include "json.hpp"

namespace prefroute {
namespace {

using nlohmann::json;
using namespace prefroute::testing;

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void Check(bool condition, const std::string& what) {
    if (!condition) {
      if (ok) detail << "failed: ";
      detail << what << "; ";
      ok = false;
    }
  }
};

int failures = 0;

void Criterion(int number, const std::string& title, double limit_seconds,
               const std::function<void(Outcome&)>& body) {
  Outcome outcome;
  const auto start = std::chrono::steady_clock::now();
  try {
    body(outcome);
  } catch (const std::exception& e) {
    outcome.Check(false, std::string("exception: ") + e.what());
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_seconds > 0.0) {
    std::ostringstream limit;
    limit << "runtime " << seconds << "s over " << limit_seconds << "s";
    outcome.Check(seconds < limit_seconds, limit.str());
  }
  if (!outcome.ok) ++failures;
  std::printf("%s criterion %d: %s [%s] (%.2fs)\n", outcome.ok ? "PASS" : "FAIL", number,
              title.c_str(), outcome.detail.str().c_str(), seconds);
  std::fflush(stdout);
}

std::string Num(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

void CostMath(Outcome& o) {
  const double strong = AverageTokenCost({10.0, 30.0}, 95.0, 264.0);
  const double weak = AverageTokenCost({0.24, 0.24}, 95.0, 264.0);
  o.detail << "strong $" << Num(strong) << ", weak $" << Num(weak) << "; ";
  o.Check(std::fabs(strong - 24.7) <= 0.05, "strong cost off");
  o.Check(weak == 0.24, "flat weak price not exact");
}

void CostSaving(Outcome& o) {
  const auto r = CostSavingRatio(0.1340, 0.4903);
  o.detail << "ratio " << Num(r.ratio) << "x; ";
  o.Check(!r.unbounded && std::fabs(r.ratio - 3.66) <= 0.01, "ratio off");
}

void TieringOracle(Outcome& o) {
  std::mt19937_64 rng(301);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_int_distribution<int> ks(1, 4);
  int tables = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    const int k = std::min(ks(rng), n);
    const EloTable elo = RandomEloTable(rng, n);
    std::vector<double> sorted;
    for (const auto& [m, e] : elo) sorted.push_back(e);
    std::sort(sorted.rbegin(), sorted.rend());
    const double dp = AssignTiers(elo, k).total_sse;
    const double brute = BruteForceMinSse(sorted, k);
    if (std::fabs(dp - brute) <= 1e-9 * std::max(1.0, brute)) ++tables;
  }
  o.detail << tables << "/100 tables match; ";
  o.Check(tables == 100, "dynamic program differs from exhaustive search");
}

void ForEachEntry(MfParams& p, const std::function<void(double&, std::size_t)>& fn) {
  std::size_t index = 0;
  for (Eigen::MatrixXd* m : {&p.model_embeddings, &p.projection}) {
    for (Eigen::Index i = 0; i < m->size(); ++i) fn(m->data()[i], index++);
  }
  for (Eigen::VectorXd* v : {&p.bias, &p.head}) {
    for (Eigen::Index i = 0; i < v->size(); ++i) fn(v->data()[i], index++);
  }
}

void GradientCheck(Outcome& o) {
  std::mt19937_64 rng(401);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  double worst = 0.0;
  std::size_t entries = 0;
  for (int draw = 0; draw < 100; ++draw) {
    MfParams p = MfParams::Random(5, 8, 4, rng());
    for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias(i) = u(rng);
    MfExamples data;
    data.queries.resize(8, 8);
    for (int i = 0; i < 8; ++i) {
      const EmbeddingVector e = RandomUnit(rng, 8);
      for (int j = 0; j < 8; ++j) data.queries(i, j) = e.values[j];
      const int a = static_cast<int>(rng() % 5);
      data.battles.push_back({a, (a + 1 + static_cast<int>(rng() % 4)) % 5});
    }
    std::vector<std::size_t> batch(8);
    for (std::size_t i = 0; i < 8; ++i) batch[i] = i;
    MfLossAndGradients analytic = ComputeMfLossAndGradients(p, data, batch);
    std::vector<double> grads;
    ForEachEntry(analytic.gradients, [&](double& g, std::size_t) { grads.push_back(g); });
    const double h = 1e-5;
    ForEachEntry(p, [&](double& x, std::size_t index) {
      const double saved = x;
      x = saved + h;
      const double up = ComputeMfLossAndGradients(p, data, batch).loss;
      x = saved - h;
      const double down = ComputeMfLossAndGradients(p, data, batch).loss;
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::fabs(numeric), std::fabs(grads[index]), 1e-6});
      worst = std::max(worst, std::fabs(numeric - grads[index]) / scale);
      ++entries;
    });
  }
  o.detail << entries << " entries, worst relative error " << Num(worst, 3) << "; ";
  o.Check(worst < 1e-4, "gradient mismatch");
}

void MfLearnability(Outcome& o) {
  const PlantedWorld world = MakePlantedWorld(10, 16, 8, 501);
  const MfExamples train = SamplePlantedBattles(world, 20000, 502);
  const MfExamples validation = SamplePlantedBattles(world, 2000, 503);
  const MfExamples held_out = SamplePlantedBattles(world, 5000, 504);
  MfTrainConfig config;
  config.epochs = 5;
  config.seed = 505;
  const MfTrainResult result = TrainMf(train, validation, 10, config);
  const double accuracy = PairwiseAccuracy(result.params, held_out);

  std::mt19937_64 rng(506);
  std::vector<PlantedQuery> queries;
  for (int i = 0; i < 1000; ++i) queries.push_back(SamplePlantedQuery(world, rng));
  const auto records = PlantedEvalRecords(queries);
  std::vector<double> probs;
  for (const auto& q : queries) {
    probs.push_back(
        MfWinProbability(result.params, world.strong_tier, world.weak_tier, q.vector));
  }
  const auto targets = DefaultCallTargets();
  const double router = Apgr(SweepCurve(records, probs, targets, "mf"));
  const RandomBaseline random = ComputeRandomBaseline(records, 200, 507, targets);
  o.detail << "held-out accuracy " << Num(accuracy) << ", APGR " << Num(router)
           << " vs random " << Num(random.apgr_mean) << "; ";
  o.Check(accuracy >= 0.90, "accuracy below 0.90");
  o.Check(router - random.apgr_mean >= 0.10, "APGR gap below 0.10");
}

void SwCalibration(Outcome& o) {
  SwRankingConfig config;
  config.ridge = 1e-8;
  config.strong_tier = 0;
  config.weak_tier = 1;
  std::mt19937_64 rng(601);
  double worst = 0.0;
  for (int tenths = 1; tenths <= 9; ++tenths) {
    // Identical embeddings give every battle the same weight.
    const EmbeddingVector e = RandomUnit(rng, 16);
    RankingCorpus corpus(2, 16);
    for (int i = 0; i < 100; ++i) {
      corpus.Add(i < tenths * 10 ? TierBattle{0, 1} : TierBattle{1, 0}, e);
    }
    const double p = SwWinProbability(e, corpus, config);
    worst = std::max(worst, std::fabs(p - tenths / 10.0));
  }
  o.detail << "worst deviation " << Num(worst, 3) << "; ";
  o.Check(worst <= 0.01, "probability differs from win rate");
}

void MetricIdentities(Outcome& o) {
  std::mt19937_64 rng(701);
  const auto records = RandomEvalRecords(rng, 1000);
  const auto targets = DefaultCallTargets();
  const RandomBaseline random = ComputeRandomBaseline(records, 200, 702, targets);
  o.detail << "random APGR " << Num(random.apgr_mean) << " (+-" << Num(random.apgr_ci95, 2)
           << "); ";
  o.Check(std::fabs(random.apgr_mean - 0.5) <= 0.02, "random APGR not 0.50 +- 0.02");
  o.Check(random.apgr_mean - random.apgr_ci95 <= 0.5 + 0.02 &&
              random.apgr_mean + random.apgr_ci95 >= 0.5 - 0.02,
          "random APGR interval misses 0.5");

  std::uniform_real_distribution<double> u(0.0, 1.0);
  bool cpt_monotone = true, fraction_monotone = true, affine = true, dominance = true;
  for (int trial = 0; trial < 40; ++trial) {
    const auto set = RandomEvalRecords(rng, 200);
    std::vector<double> probs;
    for (std::size_t i = 0; i < set.size(); ++i) probs.push_back(u(rng));
    double prev = 0.0;
    for (int i = 0; i <= 100; ++i) {
      const double c = Cpt(set, probs, i / 100.0).fraction;
      if (c < prev) cpt_monotone = false;
      prev = c;
    }
    double prev_fraction = 1.0;
    for (int i = 0; i <= 200; ++i) {
      const double f = StrongFractionAt(probs, i / 200.0);
      if (f > prev_fraction) fraction_monotone = false;
      prev_fraction = f;
    }
    const double a = 0.1 + 10.0 * u(rng), b = 5.0 * (u(rng) - 0.5);
    const double r = u(rng), w = u(rng), s = w + 0.1 + u(rng);
    if (std::fabs(Pgr(a * r + b, a * w + b, a * s + b) - Pgr(r, w, s)) > 1e-12) {
      affine = false;
    }
    // Perfect oracle against the random curve on a binary benchmark. Scores
    // are graded inside each class so every target fraction is reachable.
    std::vector<EvalRecord> binary;
    std::vector<double> oracle;
    std::bernoulli_distribution wins(0.2 + 0.015 * trial);
    for (int i = 0; i < 300; ++i) {
      const bool strong_wins = wins(rng);
      binary.push_back({"q", strong_wins ? 0.0 : 1.0, 1.0, {}});
      oracle.push_back(strong_wins ? 0.5 + 0.5 * u(rng) : 0.5 * u(rng));
    }
    const auto oracle_curve = SweepCurve(binary, oracle, targets);
    const auto random_curve = ComputeRandomBaseline(binary, 50, trial, targets).curve;
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (oracle_curve.points[i].pgr < random_curve.points[i].pgr) dominance = false;
    }
  }
  o.Check(cpt_monotone, "CPT decreased in x");
  o.Check(fraction_monotone, "strong fraction increased in alpha");
  o.Check(affine, "PGR not affine invariant");
  o.Check(dominance, "oracle curve below random");
}

void CalibrationAccuracy(Outcome& o) {
  std::mt19937_64 rng(801);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> probs(1000);
  for (double& p : probs) p = u(rng);
  double worst = 0.0;
  for (int i = 1; i <= 9; ++i) {
    const CalibrationResult r = CalibrateThreshold(probs, i / 10.0);
    worst = std::max(worst, std::fabs(r.achieved_fraction - i / 10.0));
  }
  o.detail << "worst gap " << Num(worst, 3) << "; ";
  o.Check(worst <= 1.0 / 1000 + 1e-12, "gap above 1/n");
}

void SimilarityOracle(Outcome& o) {
  std::mt19937_64 rng(901);
  std::uniform_int_distribution<int> size(1, 20);
  std::normal_distribution<float> n(0.0f, 1.0f);
  int matches = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int dim = size(rng);
    auto draw = [&](int count) {
      std::vector<EmbeddingVector> out(count);
      for (auto& e : out) {
        e.values.resize(dim);
        for (float& v : e.values) v = n(rng);
      }
      return out;
    };
    const auto bench = draw(size(rng));
    const auto data = draw(size(rng));
    double total = 0.0;
    for (const auto& b : bench) {
      double best = -2.0;
      for (const auto& d : data) best = std::max(best, CosineSimilarity(b, d));
      total += best;
    }
    if (std::fabs(BenchmarkDatasetSimilarity(bench, data) - total / bench.size()) <= 1e-5) {
      ++matches;
    }
  }
  // Subset: every benchmark prompt appears in the dataset.
  std::vector<EmbeddingVector> data(50);
  for (auto& e : data) e = RandomUnit(rng, 32);
  const std::vector<EmbeddingVector> subset(data.begin() + 10, data.begin() + 30);
  const double self = BenchmarkDatasetSimilarity(subset, data);
  o.detail << matches << "/200 match brute force, subset " << Num(self, 17) << "; ";
  o.Check(matches == 200, "brute-force mismatch");
  o.Check(self == 1.0, "subset similarity not exactly 1");
}

std::string ChatBody(const std::string& query) {
  return json{{"model", "router"},
              {"messages", {{{"role", "user"}, {"content", query}}}},
              {"max_tokens", 64}}
      .dump();
}

std::string ExpectedForwardBody(const std::string& body, const std::string& model) {
  json j = json::parse(body);
  j["model"] = model;
  return j.dump();
}

void GatewayEndToEnd(Outcome& o) {
  StubBackend strong("strong");
  StubBackend weak("weak");
  GatewayConfig config;
  config.port = 0;
  config.strong = {strong.base_url(), "gpt-4-1106-preview", ""};
  config.weak = {weak.base_url(), "mixtral-8x7b-instruct-v0.1", ""};
  config.alpha = 0.3;
  config.worker_threads = 96;

  constexpr int kClients = 64;
  constexpr int kPerClient = 10;
  std::vector<int> misrouted(kClients, 0), altered(kClients, 0), failed(kClients, 0);
  {
    Gateway gateway(config, std::make_shared<TaggedOracle>());
    gateway.Start();
    std::vector<std::thread> threads;
    for (int c = 0; c < kClients; ++c) {
      threads.emplace_back([&, c] {
        httplib::Client client("127.0.0.1", gateway.port());
        client.set_read_timeout(std::chrono::seconds(30));
        for (int k = 0; k < kPerClient; ++k) {
          const int id = c * kPerClient + k;
          const bool hard = id % 3 == 0;
          const std::string body = ChatBody(TaggedQuery(id, hard));
          const auto res = client.Post("/v1/chat/completions", body, "application/json");
          if (!res || res->status != 200) {
            ++failed[c];
            continue;
          }
          const std::string backend = hard ? "strong" : "weak";
          const std::string model = hard ? config.strong.model : config.weak.model;
          if (res->get_header_value("X-Router-Served-By") != backend ||
              std::stod(res->get_header_value("X-Router-Probability")) !=
                  TaggedOracle::Expected(id, hard)) {
            ++misrouted[c];
          }
          if (res->body !=
              StubBackend::ResponseBody(backend, ExpectedForwardBody(body, model))) {
            ++altered[c];
          }
        }
      });
    }
    for (auto& t : threads) t.join();
    const auto log = gateway.RouteLog();
    std::size_t inconsistent = 0;
    for (const auto& e : log) {
      if ((e.probability >= e.alpha) != (e.decision == RouteTarget::kStrong)) ++inconsistent;
    }
    int total_failed = 0, total_misrouted = 0, total_altered = 0;
    for (int c = 0; c < kClients; ++c) {
      total_failed += failed[c];
      total_misrouted += misrouted[c];
      total_altered += altered[c];
    }
    o.detail << kClients * kPerClient << " oracle requests, " << total_misrouted
             << " misrouted, " << total_altered << " altered bodies, " << inconsistent
             << " inconsistent log entries; ";
    o.Check(total_failed == 0, "requests failed");
    o.Check(total_misrouted == 0, "hard/easy queries misrouted");
    o.Check(total_altered == 0, "response bodies altered");
    o.Check(log.size() == static_cast<std::size_t>(kClients * kPerClient),
            "route log incomplete");
    o.Check(inconsistent == 0, "decision inconsistent with probability");
  }

  // Routing overhead with the matrix factorization router over a warm cache.
  auto provider = MakeProvider("stub:256", true);
  auto cache = std::make_shared<EmbeddingCache>();
  auto embedder = std::make_shared<Embedder>(provider, cache);
  auto checkpoint = std::make_shared<MfCheckpoint>(
      MfCheckpoint{MfParams::Random(10, 256, 128, 1001), embedder->model_name(), 0, 2});
  std::vector<std::string> queries;
  for (int i = 0; i < 640; ++i) {
    queries.push_back("warm cache query " + std::to_string(i) + " about topic " +
                      std::to_string(i % 17));
  }
  embedder->Embed(queries);
  Gateway gateway(config, std::make_shared<MfRouter>(checkpoint, embedder));
  gateway.Start();
  std::vector<std::thread> threads;
  for (int c = 0; c < kClients; ++c) {
    threads.emplace_back([&, c] {
      httplib::Client client("127.0.0.1", gateway.port());
      client.set_read_timeout(std::chrono::seconds(30));
      for (int k = 0; k < kPerClient; ++k) {
        client.Post("/v1/chat/completions", ChatBody(queries[c * kPerClient + k]),
                    "application/json");
      }
    });
  }
  for (auto& t : threads) t.join();
  const MetricsSnapshot m = gateway.Metrics();
  o.detail << "MF routing p50 " << Num(m.routing_latency.p50, 3) << " ms, p95 "
           << Num(m.routing_latency.p95, 3) << " ms, p99 " << Num(m.routing_latency.p99, 3)
           << " ms over " << m.routing_latency.count << " requests; ";
  o.Check(m.routing_latency.count == static_cast<std::size_t>(kClients * kPerClient),
          "MF requests missing");
  o.Check(m.predictor_fallbacks == 0, "MF predictor fell back");
  o.Check(m.routing_latency.p95 < 50.0, "routing p95 not under 50 ms");
}

// Unit vector at exactly `cosine` to unit `base`.
EmbeddingVector AtCosine(const EmbeddingVector& base, double cosine, std::mt19937_64& rng) {
  const EmbeddingVector r = RandomUnit(rng, base.dim());
  std::vector<double> orth(base.dim());
  double dot = 0.0;
  for (std::size_t i = 0; i < base.dim(); ++i) dot += base.values[i] * r.values[i];
  double norm = 0.0;
  for (std::size_t i = 0; i < base.dim(); ++i) {
    orth[i] = r.values[i] - dot * base.values[i];
    norm += orth[i] * orth[i];
  }
  norm = std::sqrt(norm);
  const double sine = std::sqrt(1.0 - cosine * cosine);
  EmbeddingVector out;
  for (std::size_t i = 0; i < base.dim(); ++i) {
    out.values.push_back(static_cast<float>(cosine * base.values[i] + sine * orth[i] / norm));
  }
  return out;
}

void ContaminationFixture(Outcome& o) {
  std::mt19937_64 rng(1101);
  const std::size_t dim = 64;
  std::vector<PreferenceRecord> train;
  std::vector<std::string> eval;
  std::map<std::string, EmbeddingVector> table;
  for (int i = 0; i < 300; ++i) {
    const std::string q = "train prompt " + std::to_string(i);
    train.push_back({q, "gpt-4", "mixtral", ComparisonLabel::kWinFirst});
    table[q] = RandomUnit(rng, dim);
  }
  std::vector<bool> planted;
  const double cosines[] = {0.999, 0.98, 0.96, 0.952, 0.948, 0.94, 0.90, 0.80};
  for (int i = 0; i < 160; ++i) {
    const std::string q = "eval prompt " + std::to_string(i);
    eval.push_back(q);
    if (i % 2 == 0) {
      const double c = cosines[(i / 2) % 8];
      table[q] = AtCosine(table["train prompt " + std::to_string(i)], c, rng);
      planted.push_back(c >= 0.95);
    } else {
      table[q] = RandomUnit(rng, dim);
      planted.push_back(false);
    }
  }
  const EmbedFn lookup = [&](std::span<const std::string> texts) {
    std::vector<EmbeddingVector> out;
    for (const auto& t : texts) out.push_back(table.at(t));
    return out;
  };
  const ContaminationResult r = ContaminationFilter(train, eval, lookup, 0.95);
  std::vector<bool> flagged(eval.size(), false);
  for (std::size_t i : r.removed_eval_indices) flagged[i] = true;
  int missed = 0, false_positive = 0, expected = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    if (planted[i]) ++expected;
    if (planted[i] && !flagged[i]) ++missed;
    if (!planted[i] && flagged[i]) ++false_positive;
  }
  o.detail << r.removed_eval_indices.size() << " flagged of " << expected << " planted, "
           << missed << " missed, " << false_positive << " false positives; ";
  o.Check(missed == 0, "planted duplicate missed");
  o.Check(false_positive == 0, "false positive below threshold");
  o.Check(r.kept.size() == train.size(), "train set modified");
}

}  // namespace
}  // namespace prefroute

int main() {
  using namespace prefroute;
  Criterion(1, "cost math", 1.0, CostMath);
  Criterion(2, "cost-saving ratio", 1.0, CostSaving);
  Criterion(3, "tiering matches exhaustive search", 5.0, TieringOracle);
  Criterion(4, "MF gradients match finite differences", 30.0, GradientCheck);
  Criterion(5, "MF learnability", 300.0, MfLearnability);
  Criterion(6, "SW-ranking calibration", 30.0, SwCalibration);
  Criterion(7, "metric identities", 120.0, MetricIdentities);
  Criterion(8, "calibration accuracy", 5.0, CalibrationAccuracy);
  Criterion(9, "benchmark-dataset similarity", 10.0, SimilarityOracle);
  Criterion(10, "gateway end to end", 0.0, GatewayEndToEnd);
  Criterion(11, "contamination filter", 5.0, ContaminationFixture);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
