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

#include "prefroute/tiering.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <utility>

#include "json.hpp"

namespace prefroute {

using nlohmann::json;

std::optional<int> TierAssignment::TierOf(std::string_view model) const {
  const auto it = tier_of.find(std::string(model));
  if (it == tier_of.end()) return std::nullopt;
  return it->second;
}

std::vector<std::string> TierAssignment::ModelsIn(int tier) const {
  std::vector<std::string> out;
  for (const auto& [model, t] : tier_of) {
    if (t == tier) out.push_back(model);
  }
  return out;
}

namespace {

// O(1) SSE of any contiguous range via prefix sums of values shifted by
// their overall mean (keeps the subtraction well conditioned).
class RangeSse {
 public:
  explicit RangeSse(const std::vector<double>& values) {
    double mean = 0.0;
    for (double v : values) mean += v;
    if (!values.empty()) mean /= static_cast<double>(values.size());
    sum_.assign(values.size() + 1, 0.0);
    sq_.assign(values.size() + 1, 0.0);
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double d = values[i] - mean;
      sum_[i + 1] = sum_[i] + d;
      sq_[i + 1] = sq_[i] + d * d;
    }
  }

  // SSE of values[begin, end).
  double operator()(std::size_t begin, std::size_t end) const {
    const double n = static_cast<double>(end - begin);
    const double s = sum_[end] - sum_[begin];
    return std::max(0.0, (sq_[end] - sq_[begin]) - s * s / n);
  }

 private:
  std::vector<double> sum_;
  std::vector<double> sq_;
};

bool LessWithTolerance(double a, double b) {
  if (std::isinf(b)) return a < b;
  return a < b - 1e-9 * (1.0 + std::fabs(b));
}

}  // namespace

double PartitionSse(const std::vector<double>& sorted_desc,
                    const std::vector<std::size_t>& group_sizes) {
  double total = 0.0;
  std::size_t start = 0;
  for (std::size_t size : group_sizes) {
    double mean = 0.0;
    for (std::size_t i = start; i < start + size; ++i) mean += sorted_desc[i];
    mean /= static_cast<double>(size);
    for (std::size_t i = start; i < start + size; ++i) {
      total += (sorted_desc[i] - mean) * (sorted_desc[i] - mean);
    }
    start += size;
  }
  return total;
}

TierAssignment AssignTiers(const EloTable& elo, int k) {
  if (k < 1) throw ConfigError("tier count must be >= 1");
  const std::size_t n = elo.size();
  if (n < static_cast<std::size_t>(k)) {
    throw ConfigError("cannot form " + std::to_string(k) + " tiers from " +
                      std::to_string(n) + " models");
  }
  std::vector<std::pair<std::string, double>> models(elo.begin(), elo.end());
  for (const auto& [name, rating] : models) {
    if (!std::isfinite(rating)) {
      throw ConfigError("non-finite Elo for model " + name);
    }
  }
  std::sort(models.begin(), models.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  std::vector<double> values;
  values.reserve(n);
  for (const auto& m : models) values.push_back(m.second);
  const RangeSse sse(values);

  // best[g][i]: minimal SSE splitting suffix values[i, n) into g groups.
  // cut[g][i]: end of the first of those groups (smallest on ties).
  const auto kk = static_cast<std::size_t>(k);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best(kk + 1, std::vector<double>(n + 1, kInf));
  std::vector<std::vector<std::size_t>> cut(kk + 1, std::vector<std::size_t>(n + 1, n));
  best[0][n] = 0.0;
  for (std::size_t g = 1; g <= kk; ++g) {
    for (std::size_t i = 0; i + g <= n; ++i) {
      for (std::size_t j = i + 1; j + (g - 1) <= n; ++j) {
        if (best[g - 1][j] == kInf) continue;
        const double cost = sse(i, j) + best[g - 1][j];
        if (LessWithTolerance(cost, best[g][i])) {
          best[g][i] = cost;
          cut[g][i] = j;
        }
      }
    }
  }

  TierAssignment out;
  out.k = k;
  std::size_t start = 0;
  std::vector<std::size_t> sizes;
  for (std::size_t g = kk; g >= 1; --g) {
    const std::size_t end = cut[g][start];
    for (std::size_t i = start; i < end; ++i) {
      out.tier_of[models[i].first] = static_cast<int>(kk - g);
    }
    sizes.push_back(end - start);
    if (g > 1) out.boundaries.push_back(0.5 * (values[end - 1] + values[end]));
    start = end;
  }
  out.total_sse = PartitionSse(values, sizes);
  return out;
}

std::string TierLabel(int tier) { return "tier_" + std::to_string(tier); }

std::optional<int> ParseTierLabel(std::string_view label) {
  constexpr std::string_view kPrefix = "tier_";
  if (label.substr(0, kPrefix.size()) != kPrefix) return std::nullopt;
  const std::string_view digits = label.substr(kPrefix.size());
  int value = 0;
  const auto [ptr, ec] =
      std::from_chars(digits.data(), digits.data() + digits.size(), value);
  if (ec != std::errc() || ptr != digits.data() + digits.size() || value < 0) {
    return std::nullopt;
  }
  return value;
}

TierMapping BattlesToTierRecords(const std::vector<PreferenceRecord>& records,
                                 const TierAssignment& tiers) {
  TierMapping out;
  out.records.reserve(records.size());
  for (const auto& r : records) {
    const auto a = tiers.TierOf(r.model_first);
    const auto b = tiers.TierOf(r.model_second);
    if (!a || !b) {
      ++out.dropped;
      if (!a) out.unknown_models.insert(r.model_first);
      if (!b) out.unknown_models.insert(r.model_second);
      continue;
    }
    out.records.push_back({r.query, TierLabel(*a), TierLabel(*b), r.label});
  }
  return out;
}

StrongWeakSets StrongWeakSplit(const TierAssignment& tiers,
                               const std::set<int>& strong_tiers,
                               const std::set<int>& weak_tiers) {
  for (int t : strong_tiers) {
    if (weak_tiers.contains(t)) {
      throw ConfigError("tier " + std::to_string(t) +
                        " is listed as both strong and weak");
    }
  }
  StrongWeakSets out;
  for (const auto& [model, tier] : tiers.tier_of) {
    if (strong_tiers.contains(tier)) out.strong.insert(model);
    if (weak_tiers.contains(tier)) out.weak.insert(model);
  }
  if (out.strong.empty()) throw ConfigError("strong model set is empty");
  if (out.weak.empty()) throw ConfigError("weak model set is empty");
  return out;
}

TierBattle CollapseLabel(int tier_first, int tier_second,
                         ComparisonLabel label) {
  switch (label) {
    case ComparisonLabel::kWinFirst:
      return {tier_first, tier_second};
    case ComparisonLabel::kWinSecond:
      return {tier_second, tier_first};
    case ComparisonLabel::kTie:
    case ComparisonLabel::kTieBothBad:
      break;
  }
  return {std::max(tier_first, tier_second), std::min(tier_first, tier_second)};
}

EloTable LoadEloTable(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  EloTable table;
  try {
    const json j = json::parse(in);
    for (const auto& [model, value] : j.items()) {
      table[model] = value.get<double>();
    }
  } catch (const json::exception& e) {
    throw DataError("invalid Elo table " + path.string() + ": " + e.what());
  }
  return table;
}

TierAssignment LoadTierAssignment(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  TierAssignment tiers;
  try {
    const json j = json::parse(in);
    for (const auto& [model, value] : j.items()) {
      const int t = value.get<int>();
      if (t < 0) throw DataError("negative tier for " + model);
      tiers.tier_of[model] = t;
      tiers.k = std::max(tiers.k, t + 1);
    }
  } catch (const json::exception& e) {
    throw DataError("invalid tier file " + path.string() + ": " + e.what());
  }
  return tiers;
}

void SaveTierAssignment(const std::filesystem::path& path,
                        const TierAssignment& tiers) {
  json j = json::object();
  for (const auto& [model, tier] : tiers.tier_of) j[model] = tier;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace prefroute
