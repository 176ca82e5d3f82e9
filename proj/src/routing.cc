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

#include "prefroute/routing.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>

#include "httplib.h"
#include "json.hpp"

namespace prefroute {

using nlohmann::json;

std::string_view RouteTargetName(RouteTarget target) {
  return target == RouteTarget::kStrong ? "strong" : "weak";
}

RouteTarget ThresholdRoute(double win_probability, double alpha) {
  return win_probability < alpha ? RouteTarget::kWeak : RouteTarget::kStrong;
}

RoutingDecision Route(std::string_view query, const WinPredictor& predictor,
                      double alpha, RouteTarget fallback) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) {
    throw ConfigError("alpha must lie in [0, 1]");
  }
  RoutingDecision decision;
  decision.threshold = alpha;
  decision.predictor_name = predictor.name();
  try {
    const double p = predictor.Predict(query);
    if (!(p >= 0.0 && p <= 1.0)) {
      throw Error("win probability out of range: " + std::to_string(p));
    }
    decision.win_probability = p;
    decision.target = ThresholdRoute(p, alpha);
  } catch (const std::exception& e) {
    decision.target = fallback;
    decision.win_probability = std::numeric_limits<double>::quiet_NaN();
    decision.error = e.what();
  }
  return decision;
}

double StrongFractionAt(std::span<const double> probabilities, double alpha) {
  if (probabilities.empty()) return 0.0;
  const auto strong = std::count_if(
      probabilities.begin(), probabilities.end(),
      [&](double p) { return ThresholdRoute(p, alpha) == RouteTarget::kStrong; });
  return static_cast<double>(strong) / static_cast<double>(probabilities.size());
}

CalibrationResult CalibrateThreshold(std::span<const double> probabilities,
                                     double target_strong_fraction) {
  if (probabilities.empty()) {
    throw ConfigError("calibration needs at least one probability");
  }
  if (!(target_strong_fraction >= 0.0 && target_strong_fraction <= 1.0)) {
    throw ConfigError("target strong fraction must lie in [0, 1]");
  }
  const std::size_t n = probabilities.size();
  CalibrationResult result;
  result.target_fraction = target_strong_fraction;
  result.sample_count = n;
  if (target_strong_fraction >= 1.0) {
    result.alpha = 0.0;
    result.achieved_fraction = 1.0;
    return result;
  }
  std::vector<double> sorted(probabilities.begin(), probabilities.end());
  std::sort(sorted.begin(), sorted.end());
  // Largest count of strong calls allowed by the target.
  const double budget = target_strong_fraction * static_cast<double>(n) + 1e-9;
  std::optional<double> alpha;
  // Scan distinct values from the top; the tail count grows as v decreases.
  for (std::size_t i = n; i-- > 0;) {
    if (i + 1 < n && sorted[i] == sorted[i + 1]) continue;
    const auto first = std::lower_bound(sorted.begin(), sorted.end(), sorted[i]);
    const auto tail = static_cast<double>(sorted.end() - first);
    if (tail > budget) break;
    alpha = sorted[i];
  }
  if (!alpha) {
    alpha = std::min(1.0, std::nextafter(sorted.back(),
                                         std::numeric_limits<double>::infinity()));
  }
  result.alpha = *alpha;
  result.achieved_fraction = StrongFractionAt(probabilities, result.alpha);
  return result;
}

ExternalScorer::ExternalScorer(std::string url, double timeout_seconds,
                               std::string name)
    : timeout_seconds_(timeout_seconds), name_(std::move(name)) {
  UrlParts parts = SplitUrl(url);
  origin_ = std::move(parts.origin);
  path_ = parts.path.empty() ? "/" : std::move(parts.path);
}

double ExternalScorer::Predict(std::string_view query) const {
  httplib::Client client(origin_);
  const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(
      std::chrono::duration<double>(timeout_seconds_));
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  const json body = {{"query", std::string(query)}};
  auto res = client.Post(path_, body.dump(-1, ' ', false, json::error_handler_t::replace),
                         "application/json");
  if (!res) {
    throw Error("external scorer unreachable: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    throw Error("external scorer HTTP " + std::to_string(res->status));
  }
  double p = 0.0;
  try {
    p = json::parse(res->body).at("win_probability").get<double>();
  } catch (const json::exception& e) {
    throw Error(std::string("malformed external scorer response: ") + e.what());
  }
  if (!(p >= 0.0 && p <= 1.0)) {
    throw Error("external scorer probability out of range: " + std::to_string(p));
  }
  return p;
}

RandomPredictor::RandomPredictor(std::uint64_t seed) : rng_(seed) {}

double RandomPredictor::Predict(std::string_view) const {
  std::lock_guard lock(mu_);
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng_);
}

}  // namespace prefroute
