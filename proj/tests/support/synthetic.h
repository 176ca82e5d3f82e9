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

#ifndef PREFROUTE_TESTS_SUPPORT_SYNTHETIC_H_
#define PREFROUTE_TESTS_SUPPORT_SYNTHETIC_H_

#include <atomic>
#include <cstdint>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "prefroute/evaluation.h"
#include "prefroute/matrix_factorization.h"
#include "prefroute/routing.h"
#include "prefroute/tiering.h"

namespace httplib {
class Server;
}

namespace prefroute::testing {

std::filesystem::path DataDir();
std::filesystem::path TempPath(const std::string& name);

EmbeddingVector RandomUnit(std::mt19937_64& rng, std::size_t dim);

EloTable RandomEloTable(std::mt19937_64& rng, int n);

// Minimum within-group SSE over every contiguous partition of `sorted_desc`
// into exactly k non-empty groups, by exhaustive enumeration.
double BruteForceMinSse(const std::vector<double>& sorted_desc, int k);

// A planted bilinear world: every query is a unit vector and the winner of a
// battle is the tier with the higher planted score.
struct PlantedWorld {
  MfParams truth;
  int strong_tier = 0;
  int weak_tier = 1;
};
PlantedWorld MakePlantedWorld(int tiers, int d_q, int d_m, std::uint64_t seed);

struct PlantedQuery {
  Eigen::VectorXd vector;
  bool strong_wins = false;
};
PlantedQuery SamplePlantedQuery(const PlantedWorld& world, std::mt19937_64& rng);

MfExamples SamplePlantedBattles(const PlantedWorld& world, std::size_t n,
                                std::uint64_t seed);

// Quality scores for a planted eval set: strong scores 1; weak scores 1 only
// when it wins the planted comparison.
std::vector<EvalRecord> PlantedEvalRecords(const std::vector<PlantedQuery>& queries);

// Eval records with independent uniform scores.
std::vector<EvalRecord> RandomEvalRecords(std::mt19937_64& rng, std::size_t n);

// Query text carrying an id and a difficulty marker.
std::string TaggedQuery(int id, bool hard);

// Scores "[hard #id]" queries 0.5 + id * 1e-6 and "[easy #id]" queries
// 0.1 + id * 1e-6, so every probability identifies the query it came from.
class TaggedOracle : public WinPredictor {
 public:
  double Predict(std::string_view query) const override;
  std::string name() const override { return "oracle"; }
  static double Expected(int id, bool hard);
};

// Chat-completions stand-in. Replies with a body derived from the request so
// tests can recompute the exact bytes.
class StubBackend {
 public:
  explicit StubBackend(std::string name);
  ~StubBackend();
  StubBackend(const StubBackend&) = delete;
  StubBackend& operator=(const StubBackend&) = delete;

  std::string base_url() const;  // http://127.0.0.1:<port>/v1
  int port() const { return port_; }
  int requests() const { return requests_.load(); }
  std::vector<std::string> received_bodies() const;
  std::vector<std::string> received_auth() const;

  static std::string ResponseBody(const std::string& name,
                                  const std::string& request_body);
  static std::vector<std::string> StreamChunks(const std::string& name,
                                               const std::string& request_body);

 private:
  std::string name_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> requests_{0};
  mutable std::mutex mu_;
  std::vector<std::string> bodies_;
  std::vector<std::string> auth_;
};

// A loopback URL on which nothing listens.
std::string DeadBackendUrl();

}  // namespace prefroute::testing

#endif  // PREFROUTE_TESTS_SUPPORT_SYNTHETIC_H_
