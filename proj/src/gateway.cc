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

#include "prefroute/gateway.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <iostream>
#include <sstream>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro.
#include "prefroute/matrix_factorization.h"
#include "prefroute/sw_ranking.h"
#include "httplib.h"

namespace prefroute {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

// Shortest text that parses back to the same double.
std::string ExactNumber(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  const auto end = std::to_chars(buf, buf + sizeof(buf), v).ptr;
  return std::string(buf, end);
}

double MillisSince(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

BackendConfig ParseBackend(const json& j) {
  BackendConfig b;
  b.base_url = j.at("base_url").get<std::string>();
  b.model = j.at("model").get<std::string>();
  b.api_key_env = j.value("api_key_env", "");
  return b;
}

std::string MessageText(const json& content) {
  if (content.is_string()) return content.get<std::string>();
  std::string text;
  if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") {
        if (!text.empty()) text.push_back('\n');
        text += part.value("text", "");
      }
    }
  }
  return text;
}

}  // namespace

GatewayConfig GatewayConfig::FromJson(const json& j) {
  GatewayConfig c;
  try {
    c.host = j.value("host", c.host);
    c.port = j.value("port", c.port);
    c.strong = ParseBackend(j.at("strong"));
    c.weak = ParseBackend(j.at("weak"));
    c.predictor = j.value("predictor", c.predictor);
    c.predictor_options = j.value("predictor_options", json::object());
    c.alpha = j.value("alpha", c.alpha);
    const std::string predictor_fallback = j.value("predictor_fallback", "strong");
    if (predictor_fallback != "strong" && predictor_fallback != "weak") {
      throw ConfigError("predictor_fallback must be strong or weak");
    }
    c.predictor_fallback =
        predictor_fallback == "weak" ? RouteTarget::kWeak : RouteTarget::kStrong;
    const std::string backend_fallback = j.value("backend_fallback", "retry-other");
    if (backend_fallback == "retry-other") {
      c.backend_fallback = BackendFallback::kRetryOther;
    } else if (backend_fallback == "fail") {
      c.backend_fallback = BackendFallback::kFail;
    } else {
      throw ConfigError("backend_fallback must be retry-other or fail");
    }
    const std::string strategy = j.value("query_strategy", "first-user");
    if (strategy == "first-user") {
      c.query_strategy = QueryStrategy::kFirstUser;
    } else if (strategy == "concat-user") {
      c.query_strategy = QueryStrategy::kConcatUser;
    } else {
      throw ConfigError("query_strategy must be first-user or concat-user");
    }
    c.request_timeout_seconds =
        j.value("request_timeout_seconds", c.request_timeout_seconds);
    c.worker_threads = j.value("worker_threads", c.worker_threads);
    c.log_capacity = j.value("log_capacity", c.log_capacity);
    c.log_path = j.value("log_path", c.log_path);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("invalid gateway config: ") + e.what());
  }
  c.Validate();
  return c;
}

GatewayConfig GatewayConfig::Load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read gateway config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  json j;
  try {
    j = json::parse(InterpolateEnv(buffer.str()));
  } catch (const json::exception& e) {
    throw ConfigError("invalid gateway config " + path.string() + ": " + e.what());
  }
  return FromJson(j);
}

void GatewayConfig::Validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
  if (strong.base_url.empty() || weak.base_url.empty()) {
    throw ConfigError("both strong and weak backends must be configured");
  }
  if (port < 0 || port > 65535) throw ConfigError("invalid port");
  if (worker_threads < 1) throw ConfigError("worker_threads must be >= 1");
  if (!(request_timeout_seconds > 0.0)) {
    throw ConfigError("request_timeout_seconds must be positive");
  }
}

json RouteLogEntry::ToJson() const {
  json j = {{"timestamp_ms", timestamp_ms},
            {"query_hash", query_hash},
            {"alpha", alpha},
            {"decision", RouteTargetName(decision)},
            {"routing_latency_ms", routing_latency_ms},
            {"backend_latency_ms", backend_latency_ms},
            {"served_by", RouteTargetName(served_by)},
            {"predictor_fallback", predictor_fallback},
            {"backend_fallback", backend_fallback},
            {"status", status}};
  j["probability"] = std::isnan(probability) ? json(nullptr) : json(probability);
  return j;
}

LatencySummary SummarizeLatencies(std::vector<double> samples) {
  LatencySummary s;
  s.count = samples.size();
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  auto rank = [&](double q) {
    const auto idx = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(samples.size())));
    return samples[std::clamp<std::size_t>(idx, 1, samples.size()) - 1];
  };
  s.p50 = rank(0.50);
  s.p95 = rank(0.95);
  s.p99 = rank(0.99);
  return s;
}

json MetricsSnapshot::ToJson() const {
  auto latency = [](const LatencySummary& l) {
    return json{{"count", l.count}, {"p50_ms", l.p50}, {"p95_ms", l.p95}, {"p99_ms", l.p99}};
  };
  return {{"requests", requests},
          {"strong", strong},
          {"weak", weak},
          {"predictor_fallbacks", predictor_fallbacks},
          {"backend_fallbacks", backend_fallbacks},
          {"errors", errors},
          {"routing_latency", latency(routing_latency)},
          {"backend_latency", latency(backend_latency)},
          {"uptime_seconds", uptime_seconds},
          {"requests_per_second", requests_per_second}};
}

std::string ExtractRoutingQuery(const json& request, QueryStrategy strategy) {
  const auto it = request.find("messages");
  if (it == request.end() || !it->is_array()) return {};
  std::string query;
  for (const auto& message : *it) {
    if (!message.is_object() || message.value("role", "") != "user") continue;
    const auto content = message.find("content");
    if (content == message.end()) continue;
    const std::string text = MessageText(*content);
    if (strategy == QueryStrategy::kFirstUser) return text;
    if (!query.empty()) query.push_back('\n');
    query += text;
  }
  return query;
}

std::shared_ptr<const WinPredictor> BuildPredictor(GatewayConfig& config) {
  const json& opt = config.predictor_options;
  auto make_embedder = [&]() {
    std::shared_ptr<EmbeddingProvider> provider;
    const auto spec = opt.find("embedding_provider");
    ProviderConfig provider_config;
    if (spec != opt.end() && spec->is_object()) {
      provider_config = ProviderConfig::FromJson(*spec);
      provider = std::make_shared<HttpEmbeddingProvider>(provider_config);
    } else {
      provider = MakeProvider(spec != opt.end() ? spec->get<std::string>() : "stub",
                              opt.value("offline", false));
    }
    auto cache = std::make_shared<EmbeddingCache>(
        std::filesystem::path(opt.value("embedding_cache", "")));
    Embedder::Options options;
    options.max_retries = provider_config.max_retries;
    options.initial_backoff_seconds = provider_config.initial_backoff_seconds;
    options.max_in_flight = provider_config.max_in_flight;
    return std::make_shared<Embedder>(provider, cache, options);
  };
  try {
    if (config.predictor == "matrix_factorization") {
      auto embedder = make_embedder();
      auto checkpoint = std::make_shared<MfCheckpoint>(LoadMfCheckpoint(
          opt.at("checkpoint").get<std::string>(), embedder->model_name()));
      return std::make_shared<MfRouter>(checkpoint, embedder);
    }
    if (config.predictor == "sw_ranking") {
      auto embedder = make_embedder();
      LoadedSwCorpus loaded =
          LoadSwCorpus(opt.at("corpus").get<std::string>(), *embedder);
      loaded.config.top_n = opt.value("top_n", std::size_t{2000});
      return std::make_shared<SwRankingRouter>(loaded.corpus, embedder,
                                               loaded.config);
    }
    if (config.predictor == "external") {
      return std::make_shared<ExternalScorer>(opt.at("url").get<std::string>(),
                                              opt.value("timeout_seconds", 2.0));
    }
    if (config.predictor == "random") {
      const double fraction = opt.value("strong_fraction", 0.5);
      if (!(fraction >= 0.0 && fraction <= 1.0)) {
        throw ConfigError("random strong_fraction must lie in [0, 1]");
      }
      config.alpha = 1.0 - fraction;
      return std::make_shared<RandomPredictor>(opt.value("seed", std::uint64_t{0}));
    }
  } catch (const json::exception& e) {
    throw ConfigError("predictor_options for " + config.predictor + ": " + e.what());
  }
  throw ConfigError("unknown predictor " + config.predictor);
}

class Gateway::Impl {
 public:
  Impl(const GatewayConfig& config, std::shared_ptr<const WinPredictor> predictor)
      : config_(config), predictor_(std::move(predictor)), started_(Clock::now()) {
    if (!config_.log_path.empty()) {
      log_file_.open(config_.log_path, std::ios::app);
      if (!log_file_) throw ConfigError("cannot open route log " + config_.log_path);
    }
  }

  void HandleChat(const httplib::Request& req, httplib::Response& res) {
    json request;
    try {
      request = json::parse(req.body);
    } catch (const json::exception&) {
      RecordError();
      res.status = 400;
      res.set_content(R"({"error":{"message":"request body is not valid JSON"}})",
                      "application/json");
      return;
    }
    const std::string query = ExtractRoutingQuery(request, config_.query_strategy);

    const auto route_start = Clock::now();
    RoutingDecision decision;
    if (Trim(query).empty()) {
      decision.target = RouteTarget::kStrong;
      decision.threshold = config_.alpha;
      decision.win_probability = std::numeric_limits<double>::quiet_NaN();
      decision.predictor_name = predictor_->name();
      decision.error = "empty routing query";
      std::cerr << "warning: request without a user message routed to strong\n";
    } else {
      decision = Route(query, *predictor_, config_.alpha, config_.predictor_fallback);
    }
    RouteLogEntry entry;
    entry.routing_latency_ms = MillisSince(route_start);
    entry.timestamp_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    entry.query_hash = Sha256Hex(query);
    entry.probability = decision.win_probability;
    entry.alpha = config_.alpha;
    entry.decision = decision.target;
    entry.predictor_fallback = decision.error.has_value();

    res.set_header("X-Router-Decision", std::string(RouteTargetName(decision.target)));
    res.set_header("X-Router-Probability", ExactNumber(decision.win_probability));
    res.set_header("X-Router-Alpha", ExactNumber(config_.alpha));
    res.set_header("X-Router-Predictor", decision.predictor_name);

    const bool stream = request.value("stream", false);
    std::string auth = req.get_header_value("Authorization");
    if (stream) {
      Stream(request, decision.target, auth, entry, res);
    } else {
      Forward(request, decision.target, auth, entry, res);
    }
  }

  MetricsSnapshot Snapshot() const {
    std::lock_guard lock(mu_);
    MetricsSnapshot m = counters_;
    m.routing_latency = SummarizeLatencies({routing_ms_.begin(), routing_ms_.end()});
    m.backend_latency = SummarizeLatencies({backend_ms_.begin(), backend_ms_.end()});
    m.uptime_seconds =
        std::chrono::duration<double>(Clock::now() - started_).count();
    m.requests_per_second =
        m.uptime_seconds > 0.0 ? static_cast<double>(m.requests) / m.uptime_seconds : 0.0;
    return m;
  }

  std::vector<RouteLogEntry> Log() const {
    std::lock_guard lock(mu_);
    return {log_.begin(), log_.end()};
  }

 private:
  const BackendConfig& Backend(RouteTarget t) const {
    return t == RouteTarget::kStrong ? config_.strong : config_.weak;
  }
  static RouteTarget Other(RouteTarget t) {
    return t == RouteTarget::kStrong ? RouteTarget::kWeak : RouteTarget::kStrong;
  }

  std::unique_ptr<httplib::Client> MakeClient(const BackendConfig& backend) const {
    auto client = std::make_unique<httplib::Client>(SplitUrl(backend.base_url).origin);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
        std::chrono::duration<double>(config_.request_timeout_seconds));
    client->set_connection_timeout(std::min(
        timeout, std::chrono::duration_cast<std::chrono::microseconds>(
                     std::chrono::seconds(5))));
    client->set_read_timeout(timeout);
    client->set_write_timeout(timeout);
    return client;
  }

  httplib::Headers BackendHeaders(const BackendConfig& backend,
                                  const std::string& client_auth) const {
    httplib::Headers headers;
    const char* key =
        backend.api_key_env.empty() ? nullptr : std::getenv(backend.api_key_env.c_str());
    if (key && *key) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    } else if (!client_auth.empty()) {
      headers.emplace("Authorization", client_auth);
    }
    return headers;
  }

  std::string BackendBody(json request, const BackendConfig& backend) const {
    request["model"] = backend.model;
    return request.dump(-1, ' ', false, json::error_handler_t::replace);
  }

  static std::string ChatPath(const BackendConfig& backend) {
    return SplitUrl(backend.base_url).path + "/chat/completions";
  }

  void Forward(const json& request, RouteTarget target, const std::string& auth,
               RouteLogEntry& entry, httplib::Response& res) {
    const auto start = Clock::now();
    RouteTarget served = target;
    auto attempt = [&](RouteTarget t) {
      const BackendConfig& backend = Backend(t);
      auto client = MakeClient(backend);
      return client->Post(ChatPath(backend), BackendHeaders(backend, auth),
                          BackendBody(request, backend), "application/json");
    };
    httplib::Result result = attempt(target);
    if (!result && config_.backend_fallback == BackendFallback::kRetryOther) {
      served = Other(target);
      entry.backend_fallback = true;
      result = attempt(served);
    }
    entry.backend_latency_ms = MillisSince(start);
    entry.served_by = served;
    res.set_header("X-Router-Served-By", std::string(RouteTargetName(served)));
    if (entry.backend_fallback) res.set_header("X-Router-Fallback", "true");
    if (!result) {
      res.status = 502;
      res.set_content(
          json{{"error", {{"message", "backend unreachable: " +
                                          httplib::to_string(result.error())}}}}
              .dump(),
          "application/json");
      entry.status = 502;
      Record(entry, true);
      return;
    }
    res.status = result->status;
    const std::string content_type = result->has_header("Content-Type")
                                         ? result->get_header_value("Content-Type")
                                         : "application/json";
    res.set_content(result->body, content_type);
    entry.status = result->status;
    Record(entry, false);
  }

  void Stream(const json& request, RouteTarget target, const std::string& auth,
              RouteLogEntry entry, httplib::Response& res) {
    res.set_chunked_content_provider(
        "text/event-stream",
        [this, request, target, auth, entry](std::size_t, httplib::DataSink& sink) mutable {
          const auto start = Clock::now();
          bool wrote = false;
          auto attempt = [&](RouteTarget t) {
            const BackendConfig& backend = Backend(t);
            auto client = MakeClient(backend);
            httplib::Request forward;
            forward.method = "POST";
            forward.path = ChatPath(backend);
            forward.headers = BackendHeaders(backend, auth);
            forward.set_header("Content-Type", "application/json");
            forward.body = BackendBody(request, backend);
            forward.content_receiver = [&](const char* data, std::size_t len,
                                           std::uint64_t, std::uint64_t) {
              wrote = true;
              return sink.write(data, len);
            };
            httplib::Response backend_res;
            httplib::Error error = httplib::Error::Success;
            const bool ok = client->send(forward, backend_res, error);
            if (ok) entry.status = backend_res.status;
            return ok;
          };
          RouteTarget served = target;
          bool ok = attempt(target);
          if (!ok && !wrote && config_.backend_fallback == BackendFallback::kRetryOther) {
            served = Other(target);
            entry.backend_fallback = true;
            ok = attempt(served);
          }
          entry.served_by = served;
          entry.backend_latency_ms = MillisSince(start);
          if (!ok) entry.status = 502;
          Record(entry, !ok);
          sink.done();
          return true;
        });
  }

  void RecordError() {
    std::lock_guard lock(mu_);
    ++counters_.errors;
  }

  void Record(const RouteLogEntry& entry, bool failed) {
    std::lock_guard lock(mu_);
    ++counters_.requests;
    ++(entry.decision == RouteTarget::kStrong ? counters_.strong : counters_.weak);
    if (entry.predictor_fallback) ++counters_.predictor_fallbacks;
    if (entry.backend_fallback) ++counters_.backend_fallbacks;
    if (failed) ++counters_.errors;
    routing_ms_.push_back(entry.routing_latency_ms);
    backend_ms_.push_back(entry.backend_latency_ms);
    log_.push_back(entry);
    while (log_.size() > config_.log_capacity) log_.pop_front();
    while (routing_ms_.size() > config_.log_capacity) routing_ms_.pop_front();
    while (backend_ms_.size() > config_.log_capacity) backend_ms_.pop_front();
    if (log_file_.is_open()) log_file_ << entry.ToJson().dump() << "\n" << std::flush;
  }

  const GatewayConfig& config_;
  std::shared_ptr<const WinPredictor> predictor_;
  Clock::time_point started_;
  mutable std::mutex mu_;
  MetricsSnapshot counters_;
  std::deque<double> routing_ms_;
  std::deque<double> backend_ms_;
  std::deque<RouteLogEntry> log_;
  std::ofstream log_file_;
};

Gateway::Gateway(GatewayConfig config, std::shared_ptr<const WinPredictor> predictor)
    : config_(std::move(config)), predictor_(std::move(predictor)) {
  config_.Validate();
  if (!predictor_) throw ConfigError("gateway needs a predictor");
  impl_ = std::make_unique<Impl>(config_, predictor_);
  server_ = std::make_unique<httplib::Server>();
  const int threads = config_.worker_threads;
  server_->new_task_queue = [threads] {
    return new httplib::ThreadPool(static_cast<std::size_t>(threads));
  };
  server_->Post("/v1/chat/completions",
                [this](const httplib::Request& req, httplib::Response& res) {
                  impl_->HandleChat(req, res);
                });
  server_->Get("/metrics", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(impl_->Snapshot().ToJson().dump(2), "application/json");
  });
  server_->Get("/health", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("ok", "text/plain");
  });
}

Gateway::~Gateway() { Stop(); }

void Gateway::Bind() {
  if (config_.port == 0) {
    bound_port_ = server_->bind_to_any_port(config_.host);
  } else if (server_->bind_to_port(config_.host, config_.port)) {
    bound_port_ = config_.port;
  } else {
    bound_port_ = -1;
  }
  if (bound_port_ <= 0) {
    throw ConfigError("cannot bind " + config_.host + ":" + std::to_string(config_.port));
  }
}

void Gateway::Start() {
  Bind();
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void Gateway::Run(const std::function<void(int)>& on_bound) {
  Bind();
  if (on_bound) on_bound(bound_port_);
  server_->listen_after_bind();
}

void Gateway::Stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

MetricsSnapshot Gateway::Metrics() const { return impl_->Snapshot(); }

std::vector<RouteLogEntry> Gateway::RouteLog() const { return impl_->Log(); }

}  // namespace prefroute
