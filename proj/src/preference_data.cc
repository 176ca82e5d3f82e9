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

#include "prefroute/preference_data.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>
#include <variant>

#include "json.hpp"

namespace prefroute {

using nlohmann::json;

std::optional<ComparisonLabel> ParseArenaLabel(std::string_view text) {
  if (text == "model_a") return ComparisonLabel::kWinFirst;
  if (text == "model_b") return ComparisonLabel::kWinSecond;
  if (text == "tie") return ComparisonLabel::kTie;
  if (text == "tie (bothbad)") return ComparisonLabel::kTieBothBad;
  return std::nullopt;
}

std::string_view ArenaLabelString(ComparisonLabel label) {
  switch (label) {
    case ComparisonLabel::kWinFirst:
      return "model_a";
    case ComparisonLabel::kWinSecond:
      return "model_b";
    case ComparisonLabel::kTie:
      return "tie";
    case ComparisonLabel::kTieBothBad:
      return "tie (bothbad)";
  }
  return "tie";
}

DatasetFormat ParseDatasetFormat(std::string_view name) {
  if (name == "arena" || name == "arena_json_lines" || name == "jsonl") {
    return DatasetFormat::kArenaJsonLines;
  }
  if (name == "csv") return DatasetFormat::kCsv;
  throw ConfigError("unknown dataset format: " + std::string(name));
}

namespace {

std::string ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Builds a record from raw fields, or returns the reason it is invalid.
std::variant<PreferenceRecord, std::string> MakeRecord(
    const std::optional<std::string>& prompt,
    const std::optional<std::string>& model_a,
    const std::optional<std::string>& model_b,
    const std::optional<std::string>& winner) {
  if (!prompt) return std::string("missing field 'prompt'");
  if (!model_a) return std::string("missing field 'model_a'");
  if (!model_b) return std::string("missing field 'model_b'");
  if (!winner) return std::string("missing field 'winner'");
  if (Trim(*prompt).empty()) return std::string("empty prompt");
  if (model_a->empty() || model_b->empty()) {
    return std::string("empty model identity");
  }
  if (*model_a == *model_b) {
    return std::string("model_a and model_b are identical");
  }
  const auto label = ParseArenaLabel(*winner);
  if (!label) return "unknown winner label '" + *winner + "'";
  return PreferenceRecord{*prompt, *model_a, *model_b, *label};
}

struct CsvRow {
  std::size_t line = 0;
  std::vector<std::string> fields;
};

// RFC 4180: quoted fields may contain commas, doubled quotes and line breaks.
std::vector<CsvRow> ParseCsv(std::string_view content,
                             std::vector<RowError>& errors) {
  std::vector<CsvRow> rows;
  std::size_t line = 1;
  std::size_t i = 0;
  while (i < content.size()) {
    CsvRow row;
    row.line = line;
    std::string field;
    bool in_quotes = false;
    bool bad_quote = false;
    bool done = false;
    while (i < content.size() && !done) {
      const char c = content[i];
      if (in_quotes) {
        if (c == '"') {
          if (i + 1 < content.size() && content[i + 1] == '"') {
            field.push_back('"');
            i += 2;
          } else {
            in_quotes = false;
            ++i;
          }
        } else {
          if (c == '\n') ++line;
          field.push_back(c);
          ++i;
        }
        continue;
      }
      switch (c) {
        case '"':
          if (field.empty()) {
            in_quotes = true;
          } else {
            bad_quote = true;
            field.push_back(c);
          }
          ++i;
          break;
        case ',':
          row.fields.push_back(std::move(field));
          field.clear();
          ++i;
          break;
        case '\r':
          ++i;
          break;
        case '\n':
          ++line;
          ++i;
          done = true;
          break;
        default:
          field.push_back(c);
          ++i;
      }
    }
    row.fields.push_back(std::move(field));
    if (in_quotes) {
      errors.push_back({row.line, "unterminated quoted field"});
      continue;
    }
    if (bad_quote) {
      errors.push_back({row.line, "stray quote inside unquoted field"});
      continue;
    }
    if (row.fields.size() == 1 && row.fields[0].empty()) continue;  // blank
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string CsvQuote(std::string_view field) {
  if (field.find_first_of(",\"\r\n") == std::string_view::npos &&
      !field.empty() && field.front() != ' ' && field.back() != ' ') {
    return std::string(field);
  }
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  out.push_back('"');
  return out;
}

void CheckErrorRate(const LoadResult& result) {
  const std::size_t total = result.records.size() + result.errors.size();
  if (total > 0 && 2 * result.errors.size() > total) {
    throw DataError("format mismatch: " +
                    std::to_string(result.errors.size()) + " of " +
                    std::to_string(total) + " rows are malformed (first at line " +
                    std::to_string(result.errors.front().line) + ": " +
                    result.errors.front().message + ")");
  }
}

std::optional<std::string> StringField(const json& obj, const char* name) {
  const auto it = obj.find(name);
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

LoadResult ParsePreferenceDataset(std::string_view content,
                                  DatasetFormat format) {
  LoadResult result;
  if (format == DatasetFormat::kArenaJsonLines) {
    std::size_t line_no = 0;
    std::size_t start = 0;
    while (start <= content.size()) {
      const auto end = content.find('\n', start);
      const std::string_view line = content.substr(
          start, end == std::string_view::npos ? std::string_view::npos
                                               : end - start);
      ++line_no;
      if (!Trim(line).empty()) {
        try {
          const json obj = json::parse(line);
          if (!obj.is_object()) throw DataError("not a JSON object");
          auto made = MakeRecord(StringField(obj, "prompt"),
                                 StringField(obj, "model_a"),
                                 StringField(obj, "model_b"),
                                 StringField(obj, "winner"));
          if (auto* rec = std::get_if<PreferenceRecord>(&made)) {
            result.records.push_back(std::move(*rec));
          } else {
            result.errors.push_back({line_no, std::get<std::string>(made)});
          }
        } catch (const std::exception& e) {
          result.errors.push_back({line_no, std::string("invalid JSON: ") + e.what()});
        }
      }
      if (end == std::string_view::npos) break;
      start = end + 1;
    }
  } else {
    auto rows = ParseCsv(content, result.errors);
    if (!rows.empty()) {
      const CsvRow& header = rows.front();
      std::unordered_map<std::string, std::size_t> column;
      for (std::size_t c = 0; c < header.fields.size(); ++c) {
        column[std::string(Trim(header.fields[c]))] = c;
      }
      for (const char* name : {"prompt", "model_a", "model_b", "winner"}) {
        if (!column.contains(name)) {
          throw DataError("format mismatch: CSV header lacks column '" +
                          std::string(name) + "'");
        }
      }
      for (std::size_t r = 1; r < rows.size(); ++r) {
        const CsvRow& row = rows[r];
        auto get = [&](const char* name) -> std::optional<std::string> {
          const std::size_t c = column.at(name);
          if (c >= row.fields.size()) return std::nullopt;
          return row.fields[c];
        };
        if (row.fields.size() != header.fields.size()) {
          result.errors.push_back(
              {row.line, "expected " + std::to_string(header.fields.size()) +
                             " fields, found " +
                             std::to_string(row.fields.size())});
          continue;
        }
        auto made = MakeRecord(get("prompt"), get("model_a"), get("model_b"),
                               get("winner"));
        if (auto* rec = std::get_if<PreferenceRecord>(&made)) {
          result.records.push_back(std::move(*rec));
        } else {
          result.errors.push_back({row.line, std::get<std::string>(made)});
        }
      }
    }
    std::sort(result.errors.begin(), result.errors.end(),
              [](const RowError& a, const RowError& b) { return a.line < b.line; });
  }
  CheckErrorRate(result);
  return result;
}

LoadResult LoadPreferenceDataset(const std::filesystem::path& path,
                                 DatasetFormat format) {
  return ParsePreferenceDataset(ReadFile(path), format);
}

std::string SerializePreferenceDataset(
    const std::vector<PreferenceRecord>& records, DatasetFormat format) {
  std::string out;
  if (format == DatasetFormat::kArenaJsonLines) {
    for (const auto& r : records) {
      const json obj = {{"prompt", r.query},
                        {"model_a", r.model_first},
                        {"model_b", r.model_second},
                        {"winner", ArenaLabelString(r.label)}};
      out += obj.dump(-1, ' ', false, json::error_handler_t::replace);
      out.push_back('\n');
    }
    return out;
  }
  out = "prompt,model_a,model_b,winner\r\n";
  for (const auto& r : records) {
    out += CsvQuote(r.query) + "," + CsvQuote(r.model_first) + "," +
           CsvQuote(r.model_second) + "," +
           CsvQuote(ArenaLabelString(r.label)) + "\r\n";
  }
  return out;
}

void WritePreferenceDataset(const std::filesystem::path& path,
                            const std::vector<PreferenceRecord>& records,
                            DatasetFormat format) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << SerializePreferenceDataset(records, format);
}

std::vector<GoldenRecord> LoadGoldenDataset(const std::filesystem::path& path) {
  const std::string content = ReadFile(path);
  std::vector<GoldenRecord> out;
  std::set<std::pair<std::string, std::string>> seen;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    try {
      const json obj = json::parse(line);
      GoldenRecord rec{obj.at("prompt").get<std::string>(),
                       obj.at("model").get<std::string>(),
                       obj.at("correct").get<bool>()};
      if (!seen.emplace(rec.query, rec.model).second) {
        throw DataError("duplicate (prompt, model) pair");
      }
      out.push_back(std::move(rec));
    } catch (const std::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return out;
}

std::vector<PreferenceRecord> PruneShortPrompts(
    const std::vector<PreferenceRecord>& records, std::size_t min_chars) {
  std::vector<PreferenceRecord> kept;
  kept.reserve(records.size());
  std::copy_if(records.begin(), records.end(), std::back_inserter(kept),
               [&](const PreferenceRecord& r) {
                 return Utf8Length(r.query) >= min_chars;
               });
  return kept;
}

GoldDerivation DeriveGoldPreferences(
    const std::vector<GoldenRecord>& gold,
    const std::pair<std::string, std::string>& pairing) {
  const auto& [first, second] = pairing;
  if (first == second) throw ConfigError("gold pairing needs two distinct models");
  std::vector<std::string> order;
  std::unordered_map<std::string, std::pair<std::optional<bool>, std::optional<bool>>>
      by_query;
  for (const auto& g : gold) {
    if (g.model != first && g.model != second) continue;
    auto [it, inserted] = by_query.try_emplace(g.query);
    if (inserted) order.push_back(g.query);
    (g.model == first ? it->second.first : it->second.second) = g.correct;
  }
  GoldDerivation out;
  for (const auto& query : order) {
    const auto& [a, b] = by_query.at(query);
    if (!a || !b) {
      out.skipped_queries.push_back(query);
      continue;
    }
    ComparisonLabel label = ComparisonLabel::kTie;
    if (*a && !*b) label = ComparisonLabel::kWinFirst;
    if (!*a && *b) label = ComparisonLabel::kWinSecond;
    out.records.push_back({query, first, second, label});
  }
  return out;
}

std::vector<std::size_t> FlagContaminated(
    const std::vector<EmbeddingVector>& train,
    const std::vector<EmbeddingVector>& eval, double threshold,
    std::vector<double>* max_similarity) {
  std::vector<std::size_t> flagged;
  if (max_similarity) max_similarity->assign(eval.size(), -1.0);
  for (std::size_t e = 0; e < eval.size(); ++e) {
    double best = -1.0;
    for (const auto& t : train) best = std::max(best, CosineSimilarity(eval[e], t));
    if (max_similarity) (*max_similarity)[e] = best;
    if (!train.empty() && best >= threshold) flagged.push_back(e);
  }
  return flagged;
}

namespace {

std::vector<EmbeddingVector> EmbedIdentifyingFailures(
    const EmbedFn& embedder, const std::vector<std::string>& texts) {
  try {
    return embedder(texts);
  } catch (const std::exception& batch_error) {
    for (const auto& text : texts) {
      try {
        embedder(std::span<const std::string>(&text, 1));
      } catch (const std::exception& e) {
        throw Error("embedding failed for text \"" + text + "\": " + e.what());
      }
    }
    throw Error(std::string("embedding failed: ") + batch_error.what());
  }
}

}  // namespace

ContaminationResult ContaminationFilter(
    const std::vector<PreferenceRecord>& train,
    const std::vector<std::string>& eval_queries, const EmbedFn& embedder,
    double threshold) {
  std::vector<std::string> train_queries;
  train_queries.reserve(train.size());
  for (const auto& r : train) train_queries.push_back(r.query);
  ContaminationResult result;
  result.kept = train;
  if (eval_queries.empty() || train.empty()) {
    result.max_similarity.assign(eval_queries.size(), -1.0);
    return result;
  }
  const auto train_emb = EmbedIdentifyingFailures(embedder, train_queries);
  const auto eval_emb = EmbedIdentifyingFailures(embedder, eval_queries);
  result.removed_eval_indices =
      FlagContaminated(train_emb, eval_emb, threshold, &result.max_similarity);
  return result;
}

std::vector<PreferenceRecord> MergeDatasets(
    const std::vector<PreferenceRecord>& base,
    const std::vector<PreferenceRecord>& augment) {
  std::vector<PreferenceRecord> out;
  out.reserve(base.size() + augment.size());
  out.insert(out.end(), base.begin(), base.end());
  out.insert(out.end(), augment.begin(), augment.end());
  return out;
}

void AccumulateSummary(DatasetSummary& summary, const std::string& name,
                       const std::vector<PreferenceRecord>& records) {
  summary.record_count += records.size();
  summary.sources[name] += records.size();
  for (const auto& r : records) {
    summary.model_set.insert(r.model_first);
    summary.model_set.insert(r.model_second);
  }
}

HoldoutSplit SplitHoldout(const std::vector<PreferenceRecord>& records,
                          std::size_t holdout, std::uint64_t seed) {
  if (holdout > records.size()) {
    throw ConfigError("holdout size " + std::to_string(holdout) +
                      " exceeds dataset size " + std::to_string(records.size()));
  }
  std::vector<std::size_t> index(records.size());
  std::iota(index.begin(), index.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(index.begin(), index.end(), rng);
  std::vector<bool> is_holdout(records.size(), false);
  for (std::size_t i = 0; i < holdout; ++i) is_holdout[index[i]] = true;
  HoldoutSplit split;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (is_holdout[i] ? split.validation : split.train).push_back(records[i]);
  }
  return split;
}

}  // namespace prefroute
