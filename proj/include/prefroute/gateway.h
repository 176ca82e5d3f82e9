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

#ifndef PREFROUTE_GATEWAY_H_
#define PREFROUTE_GATEWAY_H_

#include <atomic>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "prefroute/embeddings.h"
#include "prefroute/routing.h"

namespace httplib {
class Server;
}

namespace prefroute {

struct BackendConfig {
  std::string base_url;  // e.g. "https://api.openai.com/v1"
  std::string model;
  // Environment variable holding the backend API key. When unset or empty
  // the client's Authorization header is passed through.
  std::string api_key_env;
};

enum class BackendFallback { kRetryOther, kFail };
enum class QueryStrategy { kFirstUser, kConcatUser };

struct GatewayConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  BackendConfig strong;
  BackendConfig weak;
  // sw_ranking | matrix_factorization | external | random
  std::string predictor = "matrix_factorization";
  nlohmann::json predictor_options = nlohmann::json::object();
  double alpha = 0.5;
  RouteTarget predictor_fallback = RouteTarget::kStrong;
  BackendFallback backend_fallback = BackendFallback::kRetryOther;
  QueryStrategy query_strategy = QueryStrategy::kFirstUser;
  double request_timeout_seconds = 60.0;
  int worker_threads = 64;
  std::size_t log_capacity = 100000;
  std::string log_path;  // optional JSON-lines route log

  static GatewayConfig FromJson(const nlohmann::json& j);
  // Reads the file, expands ${VAR} references, then parses JSON.
  static GatewayConfig Load(const std::filesystem::path& path);
  void Validate() const;
};

struct RouteLogEntry {
  std::int64_t timestamp_ms = 0;
  std::string query_hash;  // SHA-256 of the routing query
  double probability = 0.0;  // NaN when the predictor failed
  double alpha = 0.0;
  RouteTarget decision = RouteTarget::kStrong;
  double routing_latency_ms = 0.0;
  double backend_latency_ms = 0.0;
  RouteTarget served_by = RouteTarget::kStrong;
  bool predictor_fallback = false;
  bool backend_fallback = false;
  int status = 0;

  nlohmann::json ToJson() const;
};

struct LatencySummary {
  std::size_t count = 0;
  double p50 = 0.0;
  double p95 = 0.0;
  double p99 = 0.0;
};

// Nearest-rank percentiles.
LatencySummary SummarizeLatencies(std::vector<double> samples_ms);

struct MetricsSnapshot {
  std::uint64_t requests = 0;
  std::uint64_t strong = 0;
  std::uint64_t weak = 0;
  std::uint64_t predictor_fallbacks = 0;
  std::uint64_t backend_fallbacks = 0;
  std::uint64_t errors = 0;
  LatencySummary routing_latency;
  LatencySummary backend_latency;
  double uptime_seconds = 0.0;
  double requests_per_second = 0.0;

  nlohmann::json ToJson() const;
};

// Routing query of a chat-completions request: the first user message, or
// all user messages joined by newlines. Array-style content keeps its text
// parts.
std::string ExtractRoutingQuery(const nlohmann::json& request,
                                QueryStrategy strategy);

// Builds the predictor named in `config` (random predictors also fix alpha
// so that the configured strong fraction is met).
std::shared_ptr<const WinPredictor> BuildPredictor(GatewayConfig& config);

// Chat-completions proxy. POST /v1/chat/completions routes and forwards;
// GET /metrics returns counters; GET /health answers "ok".
class Gateway {
 public:
  Gateway(GatewayConfig config, std::shared_ptr<const WinPredictor> predictor);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  // Binds and serves on a background thread; returns once listening.
  void Start();
  // Binds and serves on the calling thread until Stop(). `on_bound`, when
  // given, receives the bound port before the first request is accepted.
  void Run(const std::function<void(int)>& on_bound = {});
  void Stop();
  int port() const { return bound_port_; }

  MetricsSnapshot Metrics() const;
  std::vector<RouteLogEntry> RouteLog() const;

 private:
  class Impl;
  void Bind();

  GatewayConfig config_;
  std::shared_ptr<const WinPredictor> predictor_;
  std::unique_ptr<httplib::Server> server_;
  std::unique_ptr<Impl> impl_;
  std::thread thread_;
  int bound_port_ = 0;
};

}  // namespace prefroute

#endif  // PREFROUTE_GATEWAY_H_
