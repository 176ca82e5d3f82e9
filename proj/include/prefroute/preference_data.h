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

#ifndef PREFROUTE_PREFERENCE_DATA_H_
#define PREFROUTE_PREFERENCE_DATA_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "prefroute/embeddings.h"

namespace prefroute {

enum class ComparisonLabel { kWinFirst, kWinSecond, kTie, kTieBothBad };

// Chatbot Arena export strings: "model_a", "model_b", "tie", "tie (bothbad)".
std::optional<ComparisonLabel> ParseArenaLabel(std::string_view text);
std::string_view ArenaLabelString(ComparisonLabel label);

// One pairwise battle. Responses are never stored, only model identities.
struct PreferenceRecord {
  std::string query;
  std::string model_first;
  std::string model_second;
  ComparisonLabel label = ComparisonLabel::kTie;

  friend bool operator==(const PreferenceRecord&,
                         const PreferenceRecord&) = default;
};

struct GoldenRecord {
  std::string query;
  std::string model;
  bool correct = false;
};

enum class DatasetFormat { kArenaJsonLines, kCsv };
DatasetFormat ParseDatasetFormat(std::string_view name);

struct RowError {
  std::size_t line = 0;  // 1-based physical line number
  std::string message;
};

struct LoadResult {
  std::vector<PreferenceRecord> records;
  std::vector<RowError> errors;
};

struct DatasetSummary {
  std::size_t record_count = 0;
  std::set<std::string> model_set;
  std::size_t pruned_count = 0;
  std::size_t contaminated_count = 0;
  // Record count contributed by each named source.
  std::map<std::string, std::size_t> sources;
};

// Fails fatally ("format mismatch") when more than half of the data rows are
// malformed; otherwise malformed rows are reported in LoadResult::errors.
LoadResult LoadPreferenceDataset(const std::filesystem::path& path,
                                 DatasetFormat format);
LoadResult ParsePreferenceDataset(std::string_view content,
                                  DatasetFormat format);

void WritePreferenceDataset(const std::filesystem::path& path,
                            const std::vector<PreferenceRecord>& records,
                            DatasetFormat format);
std::string SerializePreferenceDataset(
    const std::vector<PreferenceRecord>& records, DatasetFormat format);

// JSON lines with `prompt`, `model`, `correct`.
std::vector<GoldenRecord> LoadGoldenDataset(const std::filesystem::path& path);

// Keeps records whose query has at least `min_chars` Unicode scalar values.
std::vector<PreferenceRecord> PruneShortPrompts(
    const std::vector<PreferenceRecord>& records, std::size_t min_chars = 16);

struct GoldDerivation {
  std::vector<PreferenceRecord> records;
  // Queries that had a golden label for only one model of the pair.
  std::vector<std::string> skipped_queries;
};

// Correct vs incorrect -> win for the correct model; equal correctness ->
// Tie. Output follows first appearance of each query in `gold`.
GoldDerivation DeriveGoldPreferences(
    const std::vector<GoldenRecord>& gold,
    const std::pair<std::string, std::string>& pairing);

struct ContaminationResult {
  std::vector<PreferenceRecord> kept;
  std::vector<std::size_t> removed_eval_indices;
  std::vector<double> max_similarity;  // per eval query
};

// Flags eval queries whose best cosine similarity to any train query is at
// least `threshold`. The train set is returned unchanged.
ContaminationResult ContaminationFilter(
    const std::vector<PreferenceRecord>& train,
    const std::vector<std::string>& eval_queries, const EmbedFn& embedder,
    double threshold = 0.95);

// Same check on precomputed embeddings.
std::vector<std::size_t> FlagContaminated(
    const std::vector<EmbeddingVector>& train,
    const std::vector<EmbeddingVector>& eval, double threshold,
    std::vector<double>* max_similarity = nullptr);

std::vector<PreferenceRecord> MergeDatasets(
    const std::vector<PreferenceRecord>& base,
    const std::vector<PreferenceRecord>& augment);

// Adds `records` from source `name` to `summary`.
void AccumulateSummary(DatasetSummary& summary, const std::string& name,
                       const std::vector<PreferenceRecord>& records);

struct HoldoutSplit {
  std::vector<PreferenceRecord> train;
  std::vector<PreferenceRecord> validation;
};

// Seeded uniform sample of `holdout` records for validation; both halves
// keep their original relative order.
HoldoutSplit SplitHoldout(const std::vector<PreferenceRecord>& records,
                          std::size_t holdout, std::uint64_t seed);

}  // namespace prefroute

#endif  // PREFROUTE_PREFERENCE_DATA_H_
