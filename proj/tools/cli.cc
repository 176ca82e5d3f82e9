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

#include "cli.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "prefroute/evaluation.h"
#include "prefroute/matrix_factorization.h"
#include "prefroute/preference_data.h"
#include "prefroute/routing.h"
#include "prefroute/sw_ranking.h"
#include "prefroute/tiering.h"
#include "prefroute/gateway.h"

namespace prefroute {
namespace {

using nlohmann::json;

// Reads defaults from a JSON document. Top-level scalars set global flags;
// an object keyed by a subcommand name sets that subcommand's flags.
class JsonConfig : public CLI::Config {
 public:
  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}\n";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      j = json::parse(input);
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("invalid JSON config: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("JSON config must be an object");
    std::vector<CLI::ConfigItem> items;
    Collect(j, {}, items);
    return items;
  }

 private:
  static std::string Scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    return v.dump();
  }

  static void Collect(const json& j, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto nested = parents;
        nested.push_back(key);
        Collect(value, nested, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(Scalar(v));
      } else {
        item.inputs.push_back(Scalar(value));
      }
      items.push_back(std::move(item));
    }
  }
};

struct GlobalOptions {
  std::uint64_t seed = 0;
  std::string embedding_provider = "stub";
  std::string embedding_cache;
  bool offline = false;
};

std::shared_ptr<Embedder> MakeEmbedder(const GlobalOptions& g) {
  auto provider = MakeProvider(g.embedding_provider, g.offline);
  auto cache = std::make_shared<EmbeddingCache>(std::filesystem::path(g.embedding_cache));
  return std::make_shared<Embedder>(provider, cache);
}

struct QueryFile {
  std::vector<std::string> queries;
  std::vector<std::string> lines;  // raw JSON line of each query
};

QueryFile LoadQueryFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  QueryFile file;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (Trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      file.queries.push_back(j.contains("prompt") ? j.at("prompt").get<std::string>()
                                                  : j.at("query").get<std::string>());
      file.lines.push_back(line);
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(line_no) + ": " +
                      e.what());
    }
  }
  return file;
}

std::vector<std::string> LoadQueries(const std::filesystem::path& path) {
  return LoadQueryFile(path).queries;
}

void WriteText(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

void WriteJson(const std::string& path, const json& j) { WriteText(path, j.dump(2) + "\n"); }

std::string Fixed(double v, int digits) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(digits) << v;
  return s.str();
}

std::string Percent(double fraction, int digits = 2) {
  return Fixed(100.0 * fraction, digits) + "%";
}

// Loads records, failing on malformed rows beyond the tolerated share.
std::vector<PreferenceRecord> LoadDataset(const std::string& path,
                                          DatasetFormat format,
                                          std::ostream& err,
                                          std::size_t* malformed = nullptr) {
  LoadResult loaded = LoadPreferenceDataset(path, format);
  for (const auto& e : loaded.errors) {
    err << "warning: " << path << ":" << e.line << ": " << e.message << "\n";
  }
  if (malformed) *malformed += loaded.errors.size();
  return std::move(loaded.records);
}

bool AllTierLabelled(const std::vector<PreferenceRecord>& records) {
  return std::all_of(records.begin(), records.end(), [](const PreferenceRecord& r) {
    return ParseTierLabel(r.model_first) && ParseTierLabel(r.model_second);
  });
}

int MaxTierLabel(const std::vector<PreferenceRecord>& records) {
  int k = 0;
  for (const auto& r : records) {
    k = std::max({k, *ParseTierLabel(r.model_first) + 1,
                  *ParseTierLabel(r.model_second) + 1});
  }
  return k;
}

std::vector<std::string> QueriesOf(const std::vector<PreferenceRecord>& records) {
  std::vector<std::string> q;
  q.reserve(records.size());
  for (const auto& r : records) q.push_back(r.query);
  return q;
}

// A router named on the command line: "mf:<checkpoint>", "sw:<corpus>",
// "external:<url>", "precomputed" or "random".
struct RouterSpec {
  std::string kind;
  std::string arg;
  std::string label;
};

RouterSpec ParseRouterSpec(const std::string& text) {
  RouterSpec spec;
  const auto colon = text.find(':');
  spec.kind = text.substr(0, colon);
  if (colon != std::string::npos) spec.arg = text.substr(colon + 1);
  if (spec.kind == "mf") {
    spec.label = "Matrix Factorization";
  } else if (spec.kind == "sw") {
    spec.label = "SW Ranking";
  } else if (spec.kind == "external") {
    spec.label = "External";
  } else if (spec.kind == "precomputed") {
    spec.label = "Precomputed";
  } else if (spec.kind == "random") {
    spec.label = "Random";
  } else {
    throw ConfigError("unknown router '" + text +
                      "' (expected mf:<checkpoint>, sw:<corpus>, external:<url>, "
                      "precomputed or random)");
  }
  if ((spec.kind == "mf" || spec.kind == "sw" || spec.kind == "external") &&
      spec.arg.empty()) {
    throw ConfigError("router '" + text + "' needs an argument after ':'");
  }
  return spec;
}

// Win probabilities of `spec` for each query.
std::vector<double> ScoreQueries(const RouterSpec& spec,
                                 const std::vector<std::string>& queries,
                                 const std::vector<EvalRecord>* records,
                                 const GlobalOptions& g, std::size_t top_n) {
  std::vector<double> probs;
  probs.reserve(queries.size());
  if (spec.kind == "precomputed") {
    if (!records) throw ConfigError("precomputed router needs eval records");
    for (const auto& r : *records) {
      if (!r.win_probability) {
        throw DataError("record without win_probability: " + r.query.substr(0, 40));
      }
      probs.push_back(*r.win_probability);
    }
    return probs;
  }
  std::shared_ptr<const WinPredictor> predictor;
  if (spec.kind == "mf" || spec.kind == "sw") {
    auto embedder = MakeEmbedder(g);
    embedder->Embed(queries);  // warm the cache in batches
    if (spec.kind == "mf") {
      auto checkpoint = std::make_shared<MfCheckpoint>(
          LoadMfCheckpoint(spec.arg, embedder->model_name()));
      predictor = std::make_shared<MfRouter>(checkpoint, embedder);
    } else {
      LoadedSwCorpus loaded = LoadSwCorpus(spec.arg, *embedder);
      if (top_n > 0) loaded.config.top_n = top_n;
      predictor =
          std::make_shared<SwRankingRouter>(loaded.corpus, embedder, loaded.config);
    }
  } else if (spec.kind == "external") {
    predictor = std::make_shared<ExternalScorer>(spec.arg);
  } else {
    predictor = std::make_shared<RandomPredictor>(g.seed);
  }
  for (const auto& q : queries) probs.push_back(predictor->Predict(q));
  return probs;
}

std::vector<std::string> EvalQueries(const std::vector<EvalRecord>& records) {
  std::vector<std::string> q;
  q.reserve(records.size());
  for (const auto& r : records) q.push_back(r.query);
  return q;
}

// ---------------------------------------------------------------- ingest

struct IngestOptions {
  std::vector<std::string> arena;
  std::vector<std::string> csv;
  std::vector<std::string> golden;
  std::vector<std::string> golden_pair;
  std::string eval_queries;
  std::string eval_output;
  std::size_t min_chars = 16;
  double contamination_threshold = 0.95;
  std::size_t holdout = 0;
  std::string output;
  std::string validation_output;
  std::string output_format = "arena";
  std::string summary;
};

int RunIngest(const IngestOptions& o, const GlobalOptions& g, std::ostream& out,
              std::ostream& err) {
  if (o.arena.empty() && o.csv.empty() && o.golden.empty()) {
    throw ConfigError("ingest needs at least one --arena, --csv or --golden input");
  }
  if (!o.golden.empty() && o.golden_pair.size() != 2) {
    throw ConfigError("--golden needs --golden-pair <strong> <weak>");
  }
  DatasetSummary summary;
  std::size_t malformed = 0;
  std::vector<PreferenceRecord> merged;
  auto add = [&](const std::string& name, std::vector<PreferenceRecord> records) {
    const std::size_t before = records.size();
    records = PruneShortPrompts(records, o.min_chars);
    summary.pruned_count += before - records.size();
    AccumulateSummary(summary, name, records);
    merged = MergeDatasets(merged, records);
  };
  for (const auto& p : o.arena) {
    add(p, LoadDataset(p, DatasetFormat::kArenaJsonLines, err, &malformed));
  }
  for (const auto& p : o.csv) add(p, LoadDataset(p, DatasetFormat::kCsv, err, &malformed));
  std::size_t gold_skipped = 0;
  for (const auto& p : o.golden) {
    GoldDerivation derived =
        DeriveGoldPreferences(LoadGoldenDataset(p), {o.golden_pair[0], o.golden_pair[1]});
    gold_skipped += derived.skipped_queries.size();
    add(p, std::move(derived.records));
  }

  if (!o.eval_output.empty() && o.eval_queries.empty()) {
    throw ConfigError("--eval-output needs --eval-queries");
  }
  if (!o.eval_queries.empty()) {
    auto embedder = MakeEmbedder(g);
    const QueryFile eval = LoadQueryFile(o.eval_queries);
    const ContaminationResult filtered = ContaminationFilter(
        merged, eval.queries, embedder->AsFunction(), o.contamination_threshold);
    summary.contaminated_count = filtered.removed_eval_indices.size();
    if (!o.eval_output.empty()) {
      std::vector<bool> flagged(eval.lines.size(), false);
      for (std::size_t i : filtered.removed_eval_indices) flagged[i] = true;
      std::string text;
      for (std::size_t i = 0; i < eval.lines.size(); ++i) {
        if (!flagged[i]) text += eval.lines[i] + "\n";
      }
      WriteText(o.eval_output, text);
    }
  }

  HoldoutSplit split{merged, {}};
  if (o.holdout > 0) split = SplitHoldout(merged, o.holdout, g.seed);
  summary.record_count = split.train.size() + split.validation.size();

  const DatasetFormat format = ParseDatasetFormat(o.output_format);
  if (!o.output.empty()) WritePreferenceDataset(o.output, split.train, format);
  if (!o.validation_output.empty()) {
    WritePreferenceDataset(o.validation_output, split.validation, format);
  }

  json j = {{"record_count", summary.record_count},
            {"train_count", split.train.size()},
            {"validation_count", split.validation.size()},
            {"models", summary.model_set},
            {"pruned_count", summary.pruned_count},
            {"contaminated_count", summary.contaminated_count},
            {"malformed_rows", malformed},
            {"golden_skipped_queries", gold_skipped},
            {"sources", summary.sources},
            {"seed", g.seed}};
  if (!o.summary.empty()) WriteJson(o.summary, j);
  out << j.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ tier

struct TierOptions {
  std::string elo;
  int k = 10;
  std::string output;
  std::string battles;
  std::string format = "arena";
  std::string tier_output;
  std::string sw_corpus;
  double gamma = 10.0;
  double ridge = 1e-4;
  int strong_tier = 0;
  int weak_tier = 2;
};

int RunTier(const TierOptions& o, const GlobalOptions& g, std::ostream& out,
            std::ostream& err) {
  const TierAssignment tiers = AssignTiers(LoadEloTable(o.elo), o.k);
  if (!o.output.empty()) SaveTierAssignment(o.output, tiers);
  json j = {{"k", tiers.k}, {"total_sse", tiers.total_sse},
            {"boundaries", tiers.boundaries}};
  json members = json::array();
  for (int t = 0; t < tiers.k; ++t) members.push_back(tiers.ModelsIn(t));
  j["tiers"] = members;

  if (!o.battles.empty()) {
    const DatasetFormat format = ParseDatasetFormat(o.format);
    const TierMapping mapped =
        BattlesToTierRecords(LoadDataset(o.battles, format, err), tiers);
    j["tier_records"] = mapped.records.size();
    j["dropped_records"] = mapped.dropped;
    j["unknown_models"] = mapped.unknown_models;
    if (!o.tier_output.empty()) WritePreferenceDataset(o.tier_output, mapped.records, format);
    if (!o.sw_corpus.empty()) {
      SwRankingConfig config;
      config.gamma = o.gamma;
      config.ridge = o.ridge;
      config.strong_tier = o.strong_tier;
      config.weak_tier = o.weak_tier;
      auto embedder = MakeEmbedder(g);
      SaveSwCorpus(o.sw_corpus, mapped.records, tiers.k, config, embedder->model_name());
    }
  } else if (!o.tier_output.empty() || !o.sw_corpus.empty()) {
    throw ConfigError("--tier-output and --sw-corpus need --battles");
  }
  out << j.dump(2) << "\n";
  return 0;
}

// -------------------------------------------------------------- train-mf

struct TrainOptions {
  std::vector<std::string> train;
  std::string validation;
  std::string format = "arena";
  std::string tiers;
  int tier_count = 0;
  std::size_t holdout = 0;
  MfTrainConfig config;
  int strong_tier = 0;
  int weak_tier = 2;
  std::string output;
  std::string report;
};

int RunTrainMf(TrainOptions o, const GlobalOptions& g, std::ostream& out,
               std::ostream& err) {
  const DatasetFormat format = ParseDatasetFormat(o.format);
  std::vector<PreferenceRecord> train;
  for (const auto& p : o.train) {
    auto records = LoadDataset(p, format, err);
    train.insert(train.end(), records.begin(), records.end());
  }
  std::vector<PreferenceRecord> validation;
  if (!o.validation.empty()) validation = LoadDataset(o.validation, format, err);
  if (o.holdout > 0) {
    HoldoutSplit split = SplitHoldout(train, o.holdout, g.seed);
    train = std::move(split.train);
    validation.insert(validation.end(), split.validation.begin(), split.validation.end());
  }

  int tier_count = o.tier_count;
  if (!o.tiers.empty()) {
    const TierAssignment tiers = LoadTierAssignment(o.tiers);
    tier_count = std::max(tier_count, tiers.k);
    train = BattlesToTierRecords(train, tiers).records;
    validation = BattlesToTierRecords(validation, tiers).records;
  } else if (!AllTierLabelled(train) || !AllTierLabelled(validation)) {
    throw ConfigError("records name raw models; pass --tiers to map them to tiers");
  } else if (tier_count == 0) {
    tier_count = std::max(MaxTierLabel(train), MaxTierLabel(validation));
  }
  if (tier_count <= std::max(o.strong_tier, o.weak_tier)) {
    throw ConfigError("strong/weak tier outside the tier range");
  }
  if (train.empty()) throw DataError("no training records");

  auto embedder = MakeEmbedder(g);
  const auto train_set =
      BuildMfExamples(train, embedder->Embed(QueriesOf(train)), tier_count);
  const auto validation_set =
      BuildMfExamples(validation, embedder->Embed(QueriesOf(validation)), tier_count);
  o.config.seed = g.seed;
  MfTrainResult result =
      TrainMf(train_set.examples, validation_set.examples, tier_count, o.config);

  MfCheckpoint checkpoint{std::move(result.params), embedder->model_name(),
                          o.strong_tier, o.weak_tier};
  SaveMfCheckpoint(o.output, checkpoint);
  json report = {{"epoch_loss", result.report.epoch_loss},
                 {"validation_accuracy", result.report.validation_accuracy},
                 {"best_validation_accuracy", result.report.best_validation_accuracy},
                 {"best_epoch", result.report.best_epoch},
                 {"train_examples", train_set.examples.size()},
                 {"validation_examples", validation_set.examples.size()},
                 {"same_tier_skipped",
                  train_set.same_tier_skipped + validation_set.same_tier_skipped},
                 {"tier_count", tier_count},
                 {"embedding_model", checkpoint.embedding_model},
                 {"seed", g.seed}};
  if (!o.report.empty()) WriteJson(o.report, report);
  out << report.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------- calibrate

struct CalibrateOptions {
  std::string router;
  std::string queries;
  std::vector<double> targets;
  std::size_t top_n = 0;
  std::string output;
};

int RunCalibrate(const CalibrateOptions& o, const GlobalOptions& g,
                 std::ostream& out) {
  const RouterSpec spec = ParseRouterSpec(o.router);
  if (spec.kind == "precomputed") {
    throw ConfigError("calibrate needs a model-backed router");
  }
  const auto queries = LoadQueries(o.queries);
  const auto probs = ScoreQueries(spec, queries, nullptr, g, o.top_n);
  json results = json::array();
  for (double target : o.targets) {
    const CalibrationResult c = CalibrateThreshold(probs, target);
    results.push_back({{"target_fraction", c.target_fraction},
                       {"alpha", c.alpha},
                       {"achieved_fraction", c.achieved_fraction},
                       {"sample_count", c.sample_count}});
  }
  json j = {{"router", o.router}, {"calibrations", results}};
  if (!o.output.empty()) WriteJson(o.output, j);
  out << j.dump(2) << "\n";
  return 0;
}

// ------------------------------------------------------------------ eval

struct EvalOptions {
  std::string records;
  std::vector<std::string> routers;
  std::string calibration_queries;
  int trials = 200;
  std::size_t top_n = 0;
  std::string output;
};

std::string Delta(double apgr, double random_apgr) {
  if (random_apgr == 0.0) return "(n/a)";
  const double d = 100.0 * (apgr - random_apgr) / random_apgr;
  std::ostringstream s;
  s << "(" << (d >= 0.0 ? "+" : "") << Fixed(d, 1) << "%)";
  return s.str();
}

std::string CptCell(const CptResult& c) {
  return c.reachable ? Percent(c.fraction) : "n/r";
}

int RunEval(const EvalOptions& o, const GlobalOptions& g, std::ostream& out) {
  const auto records = LoadEvalRecords(o.records);
  if (records.empty()) throw DataError("no eval records in " + o.records);
  const auto queries = EvalQueries(records);
  const auto targets = DefaultCallTargets();
  const RandomBaseline random =
      ComputeRandomBaseline(records, o.trials, g.seed, targets);

  struct Row {
    std::string method;
    std::string cpt50;
    std::string cpt80;
    std::string apgr;
    std::string delta;
  };
  std::vector<Row> rows;
  json methods = json::array();
  const CptResult r50 = Cpt(random.curve, 0.5);
  const CptResult r80 = Cpt(random.curve, 0.8);
  rows.push_back({"Random (95% CI)", CptCell(r50), CptCell(r80),
                  Fixed(random.apgr_mean, 3) + "(+-" + Fixed(random.apgr_ci95, 3) + ")",
                  "(+0%)"});
  methods.push_back({{"method", "random"},
                     {"cpt50", r50.fraction},
                     {"cpt80", r80.fraction},
                     {"apgr", random.apgr_mean},
                     {"apgr_ci95", random.apgr_ci95},
                     {"degenerate", random.degenerate}});

  for (const auto& text : o.routers) {
    const RouterSpec spec = ParseRouterSpec(text);
    if (spec.kind == "random") continue;  // always reported above
    const auto probs = ScoreQueries(spec, queries, &records, g, o.top_n);
    std::optional<std::vector<double>> calibration;
    if (!o.calibration_queries.empty()) {
      calibration = ScoreQueries(spec, LoadQueries(o.calibration_queries), nullptr,
                                 g, o.top_n);
    }
    const CallPerformanceCurve curve =
        calibration ? SweepCurve(records, probs, targets, spec.label,
                                 std::span<const double>(*calibration))
                    : SweepCurve(records, probs, targets, spec.label);
    const double apgr = Apgr(curve);
    const CptResult c50 = Cpt(records, probs, 0.5);
    const CptResult c80 = Cpt(records, probs, 0.8);
    rows.push_back({spec.label, CptCell(c50), CptCell(c80), Fixed(apgr, 3),
                    Delta(apgr, random.apgr_mean)});
    methods.push_back({{"method", text},
                       {"label", spec.label},
                       {"cpt50", c50.fraction},
                       {"cpt50_reachable", c50.reachable},
                       {"cpt80", c80.fraction},
                       {"cpt80_reachable", c80.reachable},
                       {"apgr", apgr}});
  }

  const std::vector<std::string> header = {"Method", "CPT(50%)", "CPT(80%)", "APGR", ""};
  std::vector<std::size_t> width(header.size());
  for (std::size_t c = 0; c < header.size(); ++c) width[c] = header[c].size();
  for (const auto& r : rows) {
    const std::string cells[] = {r.method, r.cpt50, r.cpt80, r.apgr, r.delta};
    for (std::size_t c = 0; c < header.size(); ++c) {
      width[c] = std::max(width[c], cells[c].size());
    }
  }
  auto print = [&](const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      out << std::left << std::setw(static_cast<int>(width[c])) << cells[c]
          << (c + 1 < cells.size() ? "  " : "\n");
    }
  };
  print(header);
  for (const auto& r : rows) print({r.method, r.cpt50, r.cpt80, r.apgr, r.delta});

  if (!o.output.empty()) {
    const QualityRange range = ComputeQualityRange(records);
    WriteJson(o.output, {{"records", records.size()},
                         {"score_weak", range.weak},
                         {"score_strong", range.strong},
                         {"trials", o.trials},
                         {"seed", g.seed},
                         {"methods", methods}});
  }
  return 0;
}

// ----------------------------------------------------------------- curve

struct CurveOptions {
  std::string records;
  std::vector<std::string> routers;
  int points = 10;
  int trials = 200;
  std::size_t top_n = 0;
  std::string csv;
  std::string svg;
  std::string title = "Call-performance curve";
};

int RunCurve(const CurveOptions& o, const GlobalOptions& g, std::ostream& out) {
  if (o.points < 1) throw ConfigError("--points must be >= 1");
  const auto records = LoadEvalRecords(o.records);
  if (records.empty()) throw DataError("no eval records in " + o.records);
  std::vector<double> targets;
  for (int i = 1; i <= o.points; ++i) {
    targets.push_back(static_cast<double>(i) / o.points);
  }
  std::vector<CallPerformanceCurve> curves;
  for (const auto& text : o.routers) {
    const RouterSpec spec = ParseRouterSpec(text);
    if (spec.kind == "random") {
      RandomBaseline random = ComputeRandomBaseline(records, o.trials, g.seed, targets);
      random.curve.predictor_name = spec.label;
      curves.push_back(std::move(random.curve));
      continue;
    }
    const auto probs = ScoreQueries(spec, EvalQueries(records), &records, g, o.top_n);
    curves.push_back(SweepCurve(records, probs, targets, spec.label));
  }
  if (curves.empty()) throw ConfigError("curve needs at least one --router");

  if (o.csv.empty()) {
    WriteCurveCsv(out, curves.front());
  } else {
    std::ofstream csv(o.csv, std::ios::binary);
    if (!csv) throw DataError("cannot write " + o.csv);
    WriteCurveCsv(csv, curves.front());
  }
  if (!o.svg.empty()) WriteText(o.svg, RenderCurveSvg(curves, o.title));
  return 0;
}

// ----------------------------------------------------------- cost-report

struct CostOptions {
  std::string costs;
  std::string eval_json;
  double random_cpt = -1.0;
  std::vector<std::string> cpts;
  int level = 50;
  std::string output;
};

int RunCostReport(const CostOptions& o, std::ostream& out) {
  std::ifstream in(o.costs);
  if (!in) throw DataError("cannot read " + o.costs);
  CostModel model;
  try {
    model = CostModel::FromJson(json::parse(in));
  } catch (const json::exception& e) {
    throw ConfigError("invalid cost model " + o.costs + ": " + e.what());
  }
  if (o.level != 50 && o.level != 80) throw ConfigError("--level must be 50 or 80");
  const double strong = AverageTokenCost(model.strong, model.avg_input_tokens,
                                         model.avg_output_tokens);
  const double weak =
      AverageTokenCost(model.weak, model.avg_input_tokens, model.avg_output_tokens);

  double random_cpt = o.random_cpt;
  std::vector<std::pair<std::string, double>> routers;
  if (!o.eval_json.empty()) {
    std::ifstream ein(o.eval_json);
    if (!ein) throw DataError("cannot read " + o.eval_json);
    const json e = json::parse(ein);
    const std::string key = "cpt" + std::to_string(o.level);
    for (const auto& m : e.at("methods")) {
      const std::string name = m.at("method").get<std::string>();
      if (name == "random") {
        if (random_cpt < 0.0) random_cpt = m.at(key).get<double>();
      } else if (m.value(key + "_reachable", true)) {
        routers.emplace_back(m.value("label", name), m.at(key).get<double>());
      }
    }
  }
  for (const auto& spec : o.cpts) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw ConfigError("--cpt expects NAME=FRACTION");
    routers.emplace_back(spec.substr(0, eq), std::stod(spec.substr(eq + 1)));
  }
  if (random_cpt < 0.0 && !routers.empty()) {
    throw ConfigError("saving ratios need --random-cpt or --eval-json");
  }

  out << "Average cost per 1M tokens: strong $" << Fixed(strong, 2) << ", weak $"
      << Fixed(weak, 2) << "\n";
  json rows = json::array();
  if (!routers.empty()) {
    out << "Router  CPT(" << o.level << "%)  Cost saving ratio  Blended $/1M\n";
    for (const auto& [name, cpt] : routers) {
      const SavingRatio ratio = CostSavingRatio(cpt, random_cpt);
      const double blended = cpt * strong + (1.0 - cpt) * weak;
      out << name << "  " << Percent(cpt) << "  "
          << (ratio.unbounded ? std::string("unbounded") : Fixed(ratio.ratio, 2) + "x")
          << "  $" << Fixed(blended, 2) << "\n";
      rows.push_back({{"router", name},
                      {"cpt", cpt},
                      {"saving_ratio", ratio.unbounded ? json(nullptr) : json(ratio.ratio)},
                      {"unbounded", ratio.unbounded},
                      {"blended_cost_per_million", blended}});
    }
  }
  if (!o.output.empty()) {
    WriteJson(o.output, {{"strong_cost_per_million", strong},
                         {"weak_cost_per_million", weak},
                         {"random_cpt", random_cpt},
                         {"level", o.level},
                         {"routers", rows}});
  }
  return 0;
}

// ----------------------------------------------------------------- serve

struct ServeOptions {
  std::string gateway_config;
  int port = -1;
};

int RunServe(const ServeOptions& o, const GlobalOptions& g, bool provider_given,
             std::ostream& out) {
  GatewayConfig config = GatewayConfig::Load(o.gateway_config);
  if (o.port >= 0) config.port = o.port;
  if (g.offline) config.predictor_options["offline"] = true;
  if (provider_given) config.predictor_options["embedding_provider"] = g.embedding_provider;
  if (!g.embedding_cache.empty()) {
    config.predictor_options["embedding_cache"] = g.embedding_cache;
  }
  auto predictor = BuildPredictor(config);
  Gateway gateway(config, predictor);
  gateway.Run([&](int port) {
    out << "serving " << config.predictor << " router on " << config.host << ":"
        << port << " (alpha " << config.alpha << ")" << std::endl;
  });
  return 0;
}

}  // namespace

int RunCli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Routes queries between a strong and a weak LLM using preference data."};
  app.name("prefroute");
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>());
  app.set_config("--config", "", "JSON file with flag defaults; objects keyed by "
                                 "subcommand name hold that subcommand's flags");

  GlobalOptions g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  auto* provider_opt =
      app.add_option("--embedding-provider", g.embedding_provider,
                     "stub, stub:<dim> or a provider config JSON file")
          ->capture_default_str();
  app.add_option("--embedding-cache", g.embedding_cache,
                 "Persistent embedding cache file (in-memory when empty)");
  app.add_flag("--offline", g.offline, "Force the stub embedder");

  IngestOptions ingest;
  auto* ingest_cmd = app.add_subcommand("ingest", "Load, clean and merge preference data");
  ingest_cmd->add_option("--arena", ingest.arena, "Arena JSON-lines dataset (repeatable)");
  ingest_cmd->add_option("--csv", ingest.csv, "CSV dataset (repeatable)");
  ingest_cmd->add_option("--golden", ingest.golden,
                         "Golden-labelled JSON-lines dataset (repeatable)");
  ingest_cmd->add_option("--golden-pair", ingest.golden_pair,
                         "Strong and weak model names for golden derivation")
      ->expected(2);
  ingest_cmd->add_option("--eval-queries", ingest.eval_queries,
                         "Benchmark prompts (JSON lines) checked for contamination");
  ingest_cmd->add_option("--eval-output", ingest.eval_output,
                         "Benchmark file without the contaminated prompts");
  ingest_cmd->add_option("--min-chars", ingest.min_chars,
                         "Drop prompts shorter than this many characters")
      ->capture_default_str();
  ingest_cmd->add_option("--contamination-threshold", ingest.contamination_threshold,
                         "Cosine at or above which a prompt is contaminated")
      ->capture_default_str();
  ingest_cmd->add_option("--holdout", ingest.holdout, "Validation records to hold out")
      ->capture_default_str();
  ingest_cmd->add_option("--output", ingest.output, "Merged training dataset");
  ingest_cmd->add_option("--validation-output", ingest.validation_output,
                         "Held-out validation dataset");
  ingest_cmd->add_option("--output-format", ingest.output_format, "arena or csv")
      ->capture_default_str();
  ingest_cmd->add_option("--summary", ingest.summary, "Summary JSON path");

  TierOptions tier;
  auto* tier_cmd = app.add_subcommand("tier", "Cluster models into Elo tiers");
  tier_cmd->add_option("--elo", tier.elo, "JSON object of model to Elo")->required();
  tier_cmd->add_option("-k,--k", tier.k, "Number of tiers")->capture_default_str();
  tier_cmd->add_option("--output", tier.output, "Tier assignment JSON");
  tier_cmd->add_option("--battles", tier.battles, "Dataset to map onto tiers");
  tier_cmd->add_option("--format", tier.format, "arena or csv")->capture_default_str();
  tier_cmd->add_option("--tier-output", tier.tier_output, "Tier-labelled dataset");
  tier_cmd->add_option("--sw-corpus", tier.sw_corpus,
                       "Write a similarity-weighted ranking corpus");
  tier_cmd->add_option("--gamma", tier.gamma, "Similarity weight base")
      ->capture_default_str();
  tier_cmd->add_option("--ridge", tier.ridge, "Ridge penalty")->capture_default_str();
  tier_cmd->add_option("--strong-tier", tier.strong_tier, "Strong tier index")
      ->capture_default_str();
  tier_cmd->add_option("--weak-tier", tier.weak_tier, "Weak tier index")
      ->capture_default_str();

  TrainOptions train;
  auto* train_cmd = app.add_subcommand("train-mf", "Train the matrix factorization router");
  train_cmd->add_option("--train", train.train, "Training dataset (repeatable)")
      ->required();
  train_cmd->add_option("--validation", train.validation, "Validation dataset");
  train_cmd->add_option("--format", train.format, "arena or csv")->capture_default_str();
  train_cmd->add_option("--tiers", train.tiers,
                        "Tier assignment JSON mapping raw models to tiers");
  train_cmd->add_option("--tier-count", train.tier_count,
                        "Tier count when records are already tier-labelled");
  train_cmd->add_option("--holdout", train.holdout,
                        "Records split off the training set for validation")
      ->capture_default_str();
  train_cmd->add_option("--epochs", train.config.epochs, "Training epochs")
      ->capture_default_str();
  train_cmd->add_option("--batch-size", train.config.batch_size, "Minibatch size")
      ->capture_default_str();
  train_cmd->add_option("--lr", train.config.learning_rate, "AdamW learning rate")
      ->capture_default_str();
  train_cmd->add_option("--weight-decay", train.config.weight_decay, "AdamW weight decay")
      ->capture_default_str();
  train_cmd->add_option("--dim", train.config.d_m, "Model embedding dimension")
      ->capture_default_str();
  train_cmd->add_option("--strong-tier", train.strong_tier, "Strong tier index")
      ->capture_default_str();
  train_cmd->add_option("--weak-tier", train.weak_tier, "Weak tier index")
      ->capture_default_str();
  train_cmd->add_option("--output", train.output, "Checkpoint path")->required();
  train_cmd->add_option("--report", train.report, "Training report JSON");

  CalibrateOptions calibrate;
  auto* calibrate_cmd =
      app.add_subcommand("calibrate", "Pick thresholds that meet strong-call targets");
  calibrate_cmd
      ->add_option("--router", calibrate.router,
                   "mf:<checkpoint>, sw:<corpus>, external:<url> or random")
      ->required();
  calibrate_cmd->add_option("--queries", calibrate.queries,
                            "Reference prompts (JSON lines)")
      ->required();
  calibrate_cmd->add_option("--target", calibrate.targets,
                            "Strong-call fraction in [0, 1] (repeatable)")
      ->required();
  calibrate_cmd->add_option("--top-n", calibrate.top_n,
                            "SW ranking corpus subsample (0 keeps the saved value)");
  calibrate_cmd->add_option("--output", calibrate.output, "Calibration JSON");

  EvalOptions eval;
  auto* eval_cmd = app.add_subcommand("eval", "Report CPT and APGR against random");
  eval_cmd->add_option("--records", eval.records, "Eval records (JSON lines)")->required();
  eval_cmd->add_option("--router", eval.routers,
                       "mf:<checkpoint>, sw:<corpus>, external:<url> or precomputed "
                       "(repeatable)");
  eval_cmd->add_option("--calibration-queries", eval.calibration_queries,
                       "Prompts used to calibrate thresholds (defaults to the records)");
  eval_cmd->add_option("--trials", eval.trials, "Random-baseline trials")
      ->capture_default_str();
  eval_cmd->add_option("--top-n", eval.top_n,
                       "SW ranking corpus subsample (0 keeps the saved value)");
  eval_cmd->add_option("--output", eval.output, "Metrics JSON");

  CurveOptions curve;
  auto* curve_cmd = app.add_subcommand("curve", "Emit call-performance curves");
  curve_cmd->add_option("--records", curve.records, "Eval records (JSON lines)")
      ->required();
  curve_cmd->add_option("--router", curve.routers,
                        "mf:<checkpoint>, sw:<corpus>, external:<url>, precomputed or "
                        "random (repeatable; the CSV holds the first)")
      ->required();
  curve_cmd->add_option("--points", curve.points, "Strong-call fractions i/points")
      ->capture_default_str();
  curve_cmd->add_option("--trials", curve.trials, "Random-baseline trials")
      ->capture_default_str();
  curve_cmd->add_option("--top-n", curve.top_n,
                        "SW ranking corpus subsample (0 keeps the saved value)");
  curve_cmd->add_option("--csv", curve.csv, "CSV path (stdout when omitted)");
  curve_cmd->add_option("--svg", curve.svg, "SVG plot path");
  curve_cmd->add_option("--title", curve.title, "Plot title")->capture_default_str();

  CostOptions cost;
  auto* cost_cmd = app.add_subcommand("cost-report", "Cost saving ratios against random");
  cost_cmd->add_option("--costs", cost.costs, "Cost model JSON")->required();
  cost_cmd->add_option("--eval-json", cost.eval_json, "Metrics JSON written by eval");
  cost_cmd->add_option("--random-cpt", cost.random_cpt, "Random router CPT fraction");
  cost_cmd->add_option("--cpt", cost.cpts, "NAME=FRACTION router CPT (repeatable)");
  cost_cmd->add_option("--level", cost.level, "CPT level: 50 or 80")
      ->capture_default_str();
  cost_cmd->add_option("--output", cost.output, "Report JSON");

  ServeOptions serve;
  auto* serve_cmd = app.add_subcommand("serve", "Run the routing gateway");
  serve_cmd->add_option("--gateway-config", serve.gateway_config, "Gateway config JSON")
      ->required();
  serve_cmd->add_option("--port", serve.port, "Override the configured port");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  try {
    if (*ingest_cmd) return RunIngest(ingest, g, out, err);
    if (*tier_cmd) return RunTier(tier, g, out, err);
    if (*train_cmd) return RunTrainMf(train, g, out, err);
    if (*calibrate_cmd) return RunCalibrate(calibrate, g, out);
    if (*eval_cmd) return RunEval(eval, g, out);
    if (*curve_cmd) return RunCurve(curve, g, out);
    if (*cost_cmd) return RunCostReport(cost, out);
    if (*serve_cmd) return RunServe(serve, g, provider_opt->count() > 0, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace prefroute
