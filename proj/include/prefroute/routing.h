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

#ifndef PREFROUTE_ROUTING_H_
#define PREFROUTE_ROUTING_H_

#include <cstddef>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prefroute/common.h"

namespace prefroute {

// Maps a query to P(strong model wins | query). Implementations hold only
// immutable state after construction, or synchronize internally, so one
// instance may serve concurrent callers.
class WinPredictor {
 public:
  virtual ~WinPredictor() = default;
  virtual double Predict(std::string_view query) const = 0;
  virtual std::string name() const = 0;
  virtual std::string version() const { return "1"; }
};

enum class RouteTarget { kWeak = 0, kStrong = 1 };
std::string_view RouteTargetName(RouteTarget target);

struct RoutingDecision {
  RouteTarget target = RouteTarget::kStrong;
  double win_probability = 0.0;  // NaN when the predictor failed
  double threshold = 0.0;
  std::string predictor_name;
  // Set when the predictor failed and the fallback target was used.
  std::optional<std::string> error;
};

// Weak iff probability < alpha; the boundary goes to Strong.
RouteTarget ThresholdRoute(double win_probability, double alpha);

// Routes `query`. A throwing predictor, or one returning a value outside
// [0, 1], yields `fallback` with the error recorded.
RoutingDecision Route(std::string_view query, const WinPredictor& predictor,
                      double alpha, RouteTarget fallback = RouteTarget::kStrong);

struct CalibrationResult {
  double alpha = 0.0;
  double achieved_fraction = 0.0;
  double target_fraction = 0.0;
  std::size_t sample_count = 0;
};

// Picks the smallest observed probability v whose upper tail
// (fraction of probabilities >= v) does not exceed the target. Target 1
// gives alpha 0. When no observed value qualifies, alpha is placed just
// above the maximum (capped at 1).
CalibrationResult CalibrateThreshold(std::span<const double> probabilities,
                                     double target_strong_fraction);

// Fraction of probabilities routed Strong under alpha.
double StrongFractionAt(std::span<const double> probabilities, double alpha);

// Remote scorer: POST {"query": text} -> {"win_probability": p}.
class ExternalScorer : public WinPredictor {
 public:
  explicit ExternalScorer(std::string url, double timeout_seconds = 2.0,
                          std::string name = "external");

  double Predict(std::string_view query) const override;
  std::string name() const override { return name_; }

 private:
  std::string origin_;
  std::string path_;
  double timeout_seconds_;
  std::string name_;
};

// The random router: a uniform draw per call. With alpha = 1 - c it sends a
// fraction c of traffic to the strong model in expectation.
class RandomPredictor : public WinPredictor {
 public:
  explicit RandomPredictor(std::uint64_t seed = 0);

  double Predict(std::string_view query) const override;
  std::string name() const override { return "random"; }

 private:
  mutable std::mutex mu_;
  mutable std::mt19937_64 rng_;
};

// Fixed-probability predictor; handy for smoke tests and fallbacks.
class ConstantPredictor : public WinPredictor {
 public:
  explicit ConstantPredictor(double probability) : p_(probability) {}
  double Predict(std::string_view) const override { return p_; }
  std::string name() const override { return "constant"; }

 private:
  double p_;
};

}  // namespace prefroute

#endif  // PREFROUTE_ROUTING_H_
