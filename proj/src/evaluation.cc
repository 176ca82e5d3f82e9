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

#include "prefroute/evaluation.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>

#include "json.hpp"

namespace prefroute {

using nlohmann::json;

std::vector<EvalRecord> LoadEvalRecords(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::vector<EvalRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      EvalRecord r;
      r.query = j.at("prompt").get<std::string>();
      r.score_weak = j.at("score_weak").get<double>();
      r.score_strong = j.at("score_strong").get<double>();
      if (j.contains("win_probability") && !j["win_probability"].is_null()) {
        r.win_probability = j["win_probability"].get<double>();
      }
      if (!std::isfinite(r.score_weak) || !std::isfinite(r.score_strong)) {
        throw DataError("non-finite score");
      }
      out.push_back(std::move(r));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return out;
}

void WriteEvalRecords(const std::filesystem::path& path,
                      const std::vector<EvalRecord>& records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) {
    json j = {{"prompt", r.query},
              {"score_weak", r.score_weak},
              {"score_strong", r.score_strong}};
    if (r.win_probability) j["win_probability"] = *r.win_probability;
    out << j.dump(-1, ' ', false, json::error_handler_t::replace) << "\n";
  }
}

double StrongCallFraction(std::span<const RouteTarget> targets) {
  if (targets.empty()) throw ConfigError("no routing decisions");
  const auto strong =
      std::count(targets.begin(), targets.end(), RouteTarget::kStrong);
  return static_cast<double>(strong) / static_cast<double>(targets.size());
}

double StrongCallFraction(std::span<const RoutingDecision> decisions) {
  std::vector<RouteTarget> targets;
  targets.reserve(decisions.size());
  for (const auto& d : decisions) targets.push_back(d.target);
  return StrongCallFraction(targets);
}

double AverageQuality(std::span<const EvalRecord> records,
                      std::span<const RouteTarget> targets) {
  if (records.size() != targets.size()) {
    throw ConfigError("records and decisions differ in length");
  }
  if (records.empty()) throw ConfigError("no evaluation records");
  double sum = 0.0;
  for (std::size_t i = 0; i < records.size(); ++i) {
    sum += targets[i] == RouteTarget::kStrong ? records[i].score_strong
                                              : records[i].score_weak;
  }
  return sum / static_cast<double>(records.size());
}

double AverageQuality(std::span<const EvalRecord> records,
                      std::span<const RoutingDecision> decisions) {
  std::vector<RouteTarget> targets;
  targets.reserve(decisions.size());
  for (const auto& d : decisions) targets.push_back(d.target);
  return AverageQuality(records, targets);
}

double Pgr(double r_router, double r_weak, double r_strong) {
  if (r_strong == r_weak) {
    throw ConfigError("PGR undefined: strong and weak quality are equal");
  }
  return (r_router - r_weak) / (r_strong - r_weak);
}

QualityRange ComputeQualityRange(std::span<const EvalRecord> records) {
  if (records.empty()) throw ConfigError("no evaluation records");
  QualityRange q;
  for (const auto& r : records) {
    q.weak += r.score_weak;
    q.strong += r.score_strong;
  }
  q.weak /= static_cast<double>(records.size());
  q.strong /= static_cast<double>(records.size());
  return q;
}

std::vector<double> DefaultCallTargets() {
  std::vector<double> t;
  for (int i = 0; i <= 10; ++i) t.push_back(i / 10.0);
  return t;
}

CallPerformanceCurve SweepCurve(
    std::span<const EvalRecord> records, std::span<const double> probabilities,
    std::span<const double> targets, std::string predictor_name,
    std::optional<std::span<const double>> calibration) {
  if (records.size() != probabilities.size()) {
    throw ConfigError("records and probabilities differ in length");
  }
  const QualityRange range = ComputeQualityRange(records);
  const auto calib = calibration.value_or(probabilities);
  CallPerformanceCurve curve;
  curve.predictor_name = std::move(predictor_name);
  std::vector<RouteTarget> routed(records.size());
  for (double target : targets) {
    const CalibrationResult cal = CalibrateThreshold(calib, target);
    for (std::size_t i = 0; i < records.size(); ++i) {
      routed[i] = ThresholdRoute(probabilities[i], cal.alpha);
    }
    CurvePoint point;
    point.strong_fraction = target;
    point.alpha = cal.alpha;
    point.achieved_fraction = StrongCallFraction(routed);
    point.pgr = Pgr(AverageQuality(records, routed), range.weak, range.strong);
    curve.points.push_back(point);
  }
  return curve;
}

double Apgr(const CallPerformanceCurve& curve) {
  if (curve.points.empty()) throw ConfigError("APGR of an empty curve");
  if (curve.points.size() == 1) return curve.points.front().pgr;
  double area = 0.0;
  for (std::size_t i = 1; i < curve.points.size(); ++i) {
    const auto& a = curve.points[i - 1];
    const auto& b = curve.points[i];
    area += 0.5 * (a.pgr + b.pgr) * (b.strong_fraction - a.strong_fraction);
  }
  const double span =
      curve.points.back().strong_fraction - curve.points.front().strong_fraction;
  if (span <= 0.0) throw ConfigError("curve fractions must increase");
  return area / span;
}

CptResult Cpt(std::span<const EvalRecord> records,
              std::span<const double> probabilities, double x) {
  if (records.size() != probabilities.size()) {
    throw ConfigError("records and probabilities differ in length");
  }
  const QualityRange range = ComputeQualityRange(records);
  const std::size_t n = records.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return probabilities[a] > probabilities[b];
  });
  // Lowering alpha past each distinct probability moves that whole group of
  // queries to the strong model.
  double quality_sum = 0.0;
  for (const auto& r : records) quality_sum += r.score_weak;
  const double nd = static_cast<double>(n);
  if (Pgr(quality_sum / nd, range.weak, range.strong) >= x) return {0.0, true};
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && probabilities[order[j]] == probabilities[order[i]]) {
      quality_sum += records[order[j]].score_strong - records[order[j]].score_weak;
      ++j;
    }
    const double r_router = j == n ? range.strong : quality_sum / nd;
    if (Pgr(r_router, range.weak, range.strong) >= x) {
      return {static_cast<double>(j) / nd, true};
    }
    i = j;
  }
  return {1.0, false};
}

CptResult Cpt(const CallPerformanceCurve& curve, double x) {
  double prev_fraction = 0.0, prev_pgr = 0.0;
  if (x <= 0.0) return {0.0, true};
  for (const auto& p : curve.points) {
    if (p.pgr >= x) {
      if (p.strong_fraction <= prev_fraction || p.pgr == prev_pgr) {
        return {p.strong_fraction, true};
      }
      const double t = (x - prev_pgr) / (p.pgr - prev_pgr);
      return {prev_fraction + std::clamp(t, 0.0, 1.0) *
                                  (p.strong_fraction - prev_fraction),
              true};
    }
    prev_fraction = p.strong_fraction;
    prev_pgr = p.pgr;
  }
  return {1.0, false};
}

RandomBaseline ComputeRandomBaseline(std::span<const EvalRecord> records,
                                     int trials, std::uint64_t seed,
                                     std::span<const double> targets) {
  if (trials < 2) throw ConfigError("random baseline needs at least 2 trials");
  if (targets.empty()) throw ConfigError("no call-fraction targets");
  const QualityRange range = ComputeQualityRange(records);
  const std::size_t n_targets = targets.size();
  std::vector<std::vector<double>> pgr(n_targets, std::vector<double>(trials));
  std::vector<double> trial_apgr(trials);
  std::vector<RouteTarget> routed(records.size());
  for (int t = 0; t < trials; ++t) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(t)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    CallPerformanceCurve trial_curve;
    for (std::size_t c = 0; c < n_targets; ++c) {
      for (auto& r : routed) {
        r = u(rng) < targets[c] ? RouteTarget::kStrong : RouteTarget::kWeak;
      }
      pgr[c][t] = Pgr(AverageQuality(records, routed), range.weak, range.strong);
      trial_curve.points.push_back({targets[c], pgr[c][t], 0.0, 0.0, 0.0});
    }
    trial_apgr[t] = n_targets > 1 ? Apgr(trial_curve) : pgr[0][t];
  }
  auto mean_ci = [trials](const std::vector<double>& v) {
    const double mean = std::accumulate(v.begin(), v.end(), 0.0) / trials;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= (trials - 1);
    return std::pair{mean, 1.96 * std::sqrt(var / trials)};
  };
  RandomBaseline out;
  out.curve.predictor_name = "random";
  for (std::size_t c = 0; c < n_targets; ++c) {
    const auto [mean, ci] = mean_ci(pgr[c]);
    out.curve.points.push_back({targets[c], mean, targets[c], 1.0 - targets[c], ci});
  }
  std::tie(out.apgr_mean, out.apgr_ci95) = mean_ci(trial_apgr);
  out.degenerate = records.size() < 2 || trials < 30;
  return out;
}

double BenchmarkDatasetSimilarity(const std::vector<EmbeddingVector>& benchmark,
                                  const std::vector<EmbeddingVector>& dataset) {
  if (benchmark.empty() || dataset.empty()) {
    throw ConfigError("benchmark-dataset similarity needs non-empty inputs");
  }
  const std::size_t dim = benchmark.front().dim();
  // Squared norms in double. A prompt present in both sets then scores
  // exactly 1, since dot == |a|^2 and sqrt(x * x) == x.
  auto squared_norms = [dim](const std::vector<EmbeddingVector>& in) {
    std::vector<double> out;
    out.reserve(in.size());
    for (const auto& e : in) {
      if (e.dim() != dim) throw ConfigError("embedding dimension mismatch");
      double sq = 0.0;
      for (float v : e.values) sq += static_cast<double>(v) * v;
      if (sq == 0.0) throw ConfigError("zero-norm embedding");
      out.push_back(sq);
    }
    return out;
  };
  const auto nb = squared_norms(benchmark);
  const auto nd = squared_norms(dataset);
  double total = 0.0;
  for (std::size_t i = 0; i < benchmark.size(); ++i) {
    const float* b = benchmark[i].values.data();
    double best = -1.0;
    for (std::size_t j = 0; j < dataset.size(); ++j) {
      const float* d = dataset[j].values.data();
      double dot = 0.0;
      for (std::size_t k = 0; k < dim; ++k) dot += static_cast<double>(b[k]) * d[k];
      best = std::max(best, std::min(dot / std::sqrt(nb[i] * nd[j]), 1.0));
    }
    total += best;
  }
  return total / static_cast<double>(benchmark.size());
}

CostModel CostModel::FromJson(const json& j) {
  auto price = [](const json& p) {
    ModelPrice m{p.at("input_price").get<double>(),
                 p.at("output_price").get<double>()};
    if (m.input_per_million < 0.0 || m.output_per_million < 0.0) {
      throw ConfigError("prices must be non-negative");
    }
    return m;
  };
  CostModel c;
  c.strong = price(j.at("strong"));
  c.weak = price(j.at("weak"));
  c.avg_input_tokens = j.at("avg_input_tokens").get<double>();
  c.avg_output_tokens = j.at("avg_output_tokens").get<double>();
  if (c.avg_input_tokens < 0.0 || c.avg_output_tokens < 0.0 ||
      c.avg_input_tokens + c.avg_output_tokens <= 0.0) {
    throw ConfigError("token counts must be non-negative with a positive total");
  }
  return c;
}

double AverageTokenCost(const ModelPrice& price, double input_tokens,
                        double output_tokens) {
  const double total = input_tokens + output_tokens;
  if (!(total > 0.0)) throw ConfigError("zero total tokens");
  return (input_tokens * price.input_per_million +
          output_tokens * price.output_per_million) /
         total;
}

SavingRatio CostSavingRatio(double router_cpt, double random_cpt) {
  if (router_cpt <= 0.0) return {std::numeric_limits<double>::infinity(), true};
  return {random_cpt / router_cpt, false};
}

void WriteCurveCsv(std::ostream& out, const CallPerformanceCurve& curve) {
  out << "strong_fraction,pgr,ci95\n";
  out << std::setprecision(10);
  for (const auto& p : curve.points) {
    out << p.strong_fraction << "," << p.pgr << "," << p.ci95 << "\n";
  }
}

namespace {

std::string XmlEscape(const std::string& text) {
  std::string out;
  for (char c : text) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string RenderCurveSvg(const std::vector<CallPerformanceCurve>& curves,
                           const std::string& title) {
  constexpr double kW = 480, kH = 360, kLeft = 60, kRight = 20, kTop = 40,
                   kBottom = 50;
  const double plot_w = kW - kLeft - kRight, plot_h = kH - kTop - kBottom;
  double y_min = 0.0, y_max = 1.0;
  for (const auto& c : curves) {
    for (const auto& p : c.points) {
      y_min = std::min(y_min, p.pgr);
      y_max = std::max(y_max, p.pgr);
    }
  }
  auto px = [&](double f) { return kLeft + f * plot_w; };
  auto py = [&](double v) { return kTop + (y_max - v) / (y_max - y_min) * plot_h; };
  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                                  "#ff7f0e", "#8c564b"};
  std::ostringstream s;
  s << std::fixed << std::setprecision(2);
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kW
    << "\" height=\"" << kH << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  s << "<text x=\"" << kW / 2 << "\" y=\"20\" text-anchor=\"middle\">" << XmlEscape(title)
    << "</text>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(y_min) << "\" x2=\"" << px(1)
    << "\" y2=\"" << py(y_min) << "\" stroke=\"black\"/>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(y_min) << "\" x2=\"" << px(0)
    << "\" y2=\"" << py(y_max) << "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 10; i += 2) {
    const double f = i / 10.0;
    s << "<text x=\"" << px(f) << "\" y=\"" << py(y_min) + 16
      << "\" text-anchor=\"middle\">" << i * 10 << "%</text>\n";
  }
  s << "<text x=\"" << px(0) - 8 << "\" y=\"" << py(1.0) + 4
    << "\" text-anchor=\"end\">1.0</text>\n";
  s << "<text x=\"" << px(0) - 8 << "\" y=\"" << py(0.0) + 4
    << "\" text-anchor=\"end\">0.0</text>\n";
  s << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kH - 12
    << "\" text-anchor=\"middle\">strong-model calls</text>\n";
  s << "<text x=\"16\" y=\"" << kTop + plot_h / 2
    << "\" transform=\"rotate(-90 16 " << kTop + plot_h / 2
    << ")\" text-anchor=\"middle\">PGR</text>\n";
  s << "<line x1=\"" << px(0) << "\" y1=\"" << py(0) << "\" x2=\"" << px(1)
    << "\" y2=\"" << py(1) << "\" stroke=\"gray\" stroke-dasharray=\"4 4\"/>\n";
  for (std::size_t c = 0; c < curves.size(); ++c) {
    const char* color = kColors[c % std::size(kColors)];
    s << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
    for (const auto& p : curves[c].points) {
      s << px(p.strong_fraction) << "," << py(p.pgr) << " ";
    }
    s << "\"/>\n";
    s << "<text x=\"" << px(0) + 10 << "\" y=\"" << kTop + 14 + 16 * c
      << "\" fill=\"" << color << "\">" << XmlEscape(curves[c].predictor_name)
      << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

}  // namespace prefroute
