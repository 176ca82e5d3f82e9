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

#ifndef PREFROUTE_TIERING_H_
#define PREFROUTE_TIERING_H_

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "prefroute/preference_data.h"

namespace prefroute {

// Leaderboard ratings, model identity -> Elo.
using EloTable = std::map<std::string, double>;

// Models grouped into contiguous Elo bands. Tier 0 holds the highest-rated
// models.
struct TierAssignment {
  std::map<std::string, int> tier_of;
  int k = 0;
  // k-1 cut points, descending: midpoints between adjacent tiers.
  std::vector<double> boundaries;
  // Sum over tiers of squared deviations from the tier mean.
  double total_sse = 0.0;

  std::optional<int> TierOf(std::string_view model) const;
  std::vector<std::string> ModelsIn(int tier) const;
};

// Optimal contiguous partition of the Elo-sorted models into `k` tiers
// minimizing within-tier SSE. Among equal-cost partitions the smaller tier
// 0 (then tier 1, ...) wins.
TierAssignment AssignTiers(const EloTable& elo, int k);

// Within-group SSE of a partition of `sorted_desc` given as group sizes.
double PartitionSse(const std::vector<double>& sorted_desc,
                    const std::vector<std::size_t>& group_sizes);

std::string TierLabel(int tier);
std::optional<int> ParseTierLabel(std::string_view label);

struct TierMapping {
  std::vector<PreferenceRecord> records;
  std::size_t dropped = 0;
  std::set<std::string> unknown_models;
};

// Replaces model identities with "tier_<i>" labels. Records naming a model
// absent from `tiers` are dropped and counted. Same-tier battles are kept.
TierMapping BattlesToTierRecords(const std::vector<PreferenceRecord>& records,
                                 const TierAssignment& tiers);

struct StrongWeakSets {
  std::set<std::string> strong;
  std::set<std::string> weak;
};

StrongWeakSets StrongWeakSplit(const TierAssignment& tiers,
                               const std::set<int>& strong_tiers = {0, 1},
                               const std::set<int>& weak_tiers = {2});

// Winner and loser tier of a battle. Ties (either kind) count as a win for
// the weaker side, i.e. the larger tier index.
struct TierBattle {
  int winner = 0;
  int loser = 0;
};
TierBattle CollapseLabel(int tier_first, int tier_second,
                         ComparisonLabel label);

EloTable LoadEloTable(const std::filesystem::path& path);
// Reads {model: tier_index}; k is one past the largest index.
TierAssignment LoadTierAssignment(const std::filesystem::path& path);
void SaveTierAssignment(const std::filesystem::path& path,
                        const TierAssignment& tiers);

}  // namespace prefroute

#endif  // PREFROUTE_TIERING_H_
