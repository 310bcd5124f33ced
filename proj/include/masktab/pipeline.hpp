#pragma once

// End-to-end orchestration: generate -> preprocess -> train -> evaluate ->
// importance -> report, with a manifest of seeds and artifact hashes.
//
// Stage seeds: stage_seed(global, name) = derive_seed(global, "stage:" + name)
// where derive_seed(s, label) = splitmix64(s ^ fnv1a64(label)).
//   generate    synth seed             = stage_seed(g, "generate")
//   preprocess  split seed             = stage_seed(g, "preprocess")
//   train       baseline seed          = derive_seed(stage_seed(g, "train"), "baseline")
//               pretrained seed        = derive_seed(stage_seed(g, "train"), "pretrained")
//   importance  permutation seed       = stage_seed(g, "importance")
// Both pretrained models share one autoencoder when their configs agree.

#include <algorithm>
#include <array>
#include <cerrno>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/checkpoint.hpp"
#include "masktab/csv.hpp"
#include "masktab/data_model.hpp"
#include "masktab/dataset_io.hpp"
#include "masktab/error.hpp"
#include "masktab/hash.hpp"
#include "masktab/metrics.hpp"
#include "masktab/preprocess.hpp"
#include "masktab/raw_table.hpp"
#include "masktab/rng.hpp"
#include "masktab/synthgen.hpp"
#include "masktab/trainer.hpp"
#include "masktab/vimp.hpp"

namespace masktab {

inline constexpr const char* kMasktabVersion = "0.1.0";

inline constexpr std::array<const char*, 6> kStageOrder{"generate", "preprocess", "train",
                                                        "evaluate", "importance", "report"};

inline std::uint64_t stage_seed(std::uint64_t global, const std::string& stage) {
  return derive_seed(global, "stage:" + stage);
}

/// Replaces `seed` with MASKTAB_SEED when that variable is set.
inline void apply_seed_override(std::uint64_t& seed) {
  const char* env = std::getenv("MASKTAB_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  errno = 0;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (errno != 0 || *end != '\0' || env[0] == '-')
    throw ConfigError(std::string("MASKTAB_SEED is not an unsigned integer: '") + env + "'");
  seed = v;
}

inline nlohmann::json read_json(const std::filesystem::path& path, bool is_config) {
  auto fail = [&](const std::string& msg) -> nlohmann::json {
    if (is_config) throw ConfigError(msg);
    throw DataError(msg);
  };
  if (!std::filesystem::exists(path)) return fail("file not found: " + path.string());
  try {
    return nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    return fail("cannot parse " + path.string() + ": " + e.what());
  }
}

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  write_file(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Single-stage building blocks, shared with the CLI subcommands

inline void require_valid_split(const SplitAssignment& split, const std::vector<std::string>& blocks) {
  const auto v = validate_split(split, blocks);
  if (!v.empty()) throw DataError("invalid split: " + v.front().message);
}

struct PreprocessedData {
  PreprocessResult result;
  SplitAssignment split;
};

/// Splits on site-year blocks using the raw responses, then encodes and
/// normalises with statistics from the training rows.
inline PreprocessedData preprocess_with_split(const RawTable& raw, const PreprocessOptions& popt,
                                              const SplitOptions& sopt) {
  const auto resp = transform_responses(raw.concentration, raw.below_loq);
  std::vector<std::string> blocks;
  for (std::size_t i = 0; i < raw.n_rows(); ++i) blocks.push_back(block_label(raw.location_ids[i], raw.years[i]));
  auto split = block_split(blocks, resp.y_bin, resp.mask, sopt);
  auto result = encode_and_normalise(raw, split.train_rows, popt);
  require_valid_split(split, result.dataset.blocks);
  return {std::move(result), std::move(split)};
}

inline void write_preprocessed(const std::filesystem::path& dataset_dir, const std::filesystem::path& split_path,
                               const PreprocessedData& p) {
  write_dataset(dataset_dir, p.result.dataset);
  write_json(dataset_dir / "preprocess_report.json", report_to_json(p.result.report));
  write_split(split_path, p.split);
}

struct ModelRun {
  Checkpoint checkpoint;
  TrainHistory history;
  std::optional<PretrainedEncoder> encoder;
};

/// Trains one named model. Pretrained models reuse `shared` when given.
inline ModelRun train_model(const std::string& model, const TabularDataset& ds, const SplitAssignment& split,
                            TrainConfig cfg, const PretrainedEncoder* shared = nullptr) {
  if (!is_known_model(model)) throw ConfigError("unknown model '" + model + "'");
  require_valid_split(split, ds.blocks);
  ModelRun run;
  TrainedModel trained;
  if (model == kModelBaseline) {
    trained = train_baseline(ds, split, cfg);
  } else {
    cfg.finetune_mode = model == kModelFrozen ? FinetuneMode::frozen : FinetuneMode::unfrozen;
    run.encoder = shared ? *shared : pretrain_autoencoder(ds.x, split, cfg);
    trained = finetune(run.encoder->encoder, ds, split, cfg);
  }
  run.history = trained.history;
  run.checkpoint = {model, ds.schema.column_names(), ds.response_names, cfg, std::move(trained.params)};
  return run;
}

inline void write_model_run(const std::filesystem::path& dir, const ModelRun& run) {
  save_checkpoint(dir / "checkpoint.json", run.checkpoint);
  write_json(dir / "history.json", history_to_json(run.history));
  if (run.encoder) {
    auto j = history_to_json(run.encoder->history);
    j["untrained_holdout_loss"] = run.encoder->untrained_holdout_loss;
    j["trained_holdout_loss"] = run.encoder->trained_holdout_loss;
    write_json(dir / "autoencoder_history.json", j);
  }
}

inline EvalReport evaluate_checkpoint(const Checkpoint& ckpt, const TabularDataset& ds,
                                      const std::vector<std::size_t>& rows, double threshold) {
  ckpt.check_compatible(ds);
  if (rows.empty()) throw DataError("evaluate: empty evaluation row set");
  const auto pred = predict(ckpt.params, ds.x.select_rows(rows));
  return evaluate(ckpt.model, ds, rows, pred.concentration, pred.probability, threshold);
}

struct ImportanceOptions {
  GroupingMode mode = GroupingMode::grouped;
  bool bundle_weather_history = true;
  std::size_t repeats = 30;
  std::uint64_t seed = 0;
};

inline const char* to_string(GroupingMode m) { return m == GroupingMode::grouped ? "grouped" : "per-column"; }

inline GroupingMode grouping_mode_from_string(const std::string& s) {
  if (s == "grouped") return GroupingMode::grouped;
  if (s == "per-column") return GroupingMode::per_column;
  throw ConfigError("importance mode must be 'grouped' or 'per-column', got '" + s + "'");
}

inline nlohmann::json importance_for_checkpoint(const Checkpoint& ckpt, const TabularDataset& ds,
                                                const std::vector<std::size_t>& rows, const ImportanceOptions& opt) {
  ckpt.check_compatible(ds);
  const auto groups = feature_groups(ds.schema, opt.mode, opt.bundle_weather_history);
  const auto rep = compute_importance(ckpt.params, ds, rows, groups, opt.repeats, opt.seed);
  auto j = importance_to_json(rep, to_string(opt.mode));
  j["model"] = ckpt.model;
  j["rows"] = "test";
  j["bundle_weather_history"] = opt.bundle_weather_history;
  return j;
}

// ---------------------------------------------------------------------------
// Report

struct ReportOutputs {
  std::string text;
  std::string csv;
  nlohmann::json json;
};

/// One row per model (RMSE, R^2, F1, AUC averages) plus win shares.
inline ReportOutputs build_report(std::vector<EvalReport> reports) {
  if (reports.empty()) throw DataError("report: no evaluation reports");
  std::sort(reports.begin(), reports.end(), [](const auto& a, const auto& b) { return a.model < b.model; });
  const auto wins = winner_ranking(reports);

  auto fixed = [](const std::optional<double>& v) {
    if (!v) return std::string("NA");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", *v);
    return std::string(buf);
  };
  std::ostringstream text;
  text << "Average test-set performance (regression metrics on the log(x+1) scale)\n\n";
  char line[256];
  std::snprintf(line, sizeof line, "%-22s %9s %9s %9s %9s %6s %8s\n", "model", "RMSE", "R2", "F1", "AUC", "wins",
                "win%");
  text << line;
  csv::Table table{{"model", "rmse", "r2", "f1", "auc", "wins", "win_percent"}, {}};
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : reports) {
    const auto& a = r.averages;
    const std::size_t w = wins.wins.at(r.model);
    const double pct = wins.percent.at(r.model);
    std::snprintf(line, sizeof line, "%-22s %9s %9s %9s %9s %6zu %8.2f\n", r.model.c_str(), fixed(a.rmse).c_str(),
                  fixed(a.r2).c_str(), fixed(a.f1).c_str(), fixed(a.auc).c_str(), w, pct);
    text << line;
    auto num = [](const std::optional<double>& v) { return csv::format_number(v ? *v : kSentinel); };
    table.rows.push_back({r.model, num(a.rmse), num(a.r2), num(a.f1), num(a.auc), std::to_string(w),
                          csv::format_number(pct)});
    rows.push_back({{"model", r.model},
                    {"rmse", detail::opt(a.rmse)},
                    {"r2", detail::opt(a.r2)},
                    {"f1", detail::opt(a.f1)},
                    {"auc", detail::opt(a.auc)},
                    {"wins", w},
                    {"win_percent", pct}});
  }
  std::size_t ties = 0;
  for (const auto& p : wins.pairs) ties += p.tie;
  text << "\n" << wins.total << " (response, metric) pairs decided";
  if (ties) text << ", " << ties << " by tie-break";
  text << "\n";
  return {text.str(), csv::to_string(table),
          {{"format", "masktab-report"},
           {"version", 1},
           {"scale", "log1p"},
           {"columns", {"RMSE", "R2", "F1", "AUC"}},
           {"models", rows},
           {"total_pairs", wins.total},
           {"tied_pairs", ties}}};
}

/// Reads every evaluation report in `eval_dir` (files named <model>.json).
inline std::vector<EvalReport> read_eval_reports(const std::filesystem::path& eval_dir) {
  if (!std::filesystem::is_directory(eval_dir)) throw DataError("report: evaluation directory not found: " + eval_dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(eval_dir))
    if (e.is_regular_file() && e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<EvalReport> out;
  for (const auto& f : files) {
    const auto j = read_json(f, false);
    if (j.is_object() && j.value("format", "") == "masktab-eval") out.push_back(eval_report_from_json(j));
  }
  if (out.empty()) throw DataError("report: no evaluation reports in " + eval_dir.string());
  return out;
}

inline void write_report(const std::filesystem::path& dir, const ReportOutputs& r) {
  write_file(dir / "summary.txt", r.text);
  write_file(dir / "summary.csv", r.csv);
  write_json(dir / "summary.json", r.json);
}

// ---------------------------------------------------------------------------
// Pipeline config

struct PipelinePaths {
  std::filesystem::path raw = "raw";
  std::filesystem::path dataset = "dataset";
  std::filesystem::path split = "dataset/split.json";
  std::filesystem::path models = "models";
  std::filesystem::path eval = "eval";
  std::filesystem::path importance = "importance/importance.json";
  std::filesystem::path report = "report";
};

struct PipelineConfig {
  std::filesystem::path out_dir = "masktab-run";
  std::uint64_t seed = 42;
  PipelinePaths paths;
  SynthConfig synth;
  PreprocessOptions preprocess;
  SplitOptions split;
  TrainConfig train;
  std::vector<std::string> models{kModelBaseline, kModelFrozen, kModelUnfrozen};
  std::map<std::string, nlohmann::json> train_overrides;  // merge-patched onto `train`
  double threshold = 0.5;
  ImportanceOptions importance;
  std::vector<std::string> stages{kStageOrder.begin(), kStageOrder.end()};
  bool force = false;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() ? p : out_dir / p;
  }

  /// Per-model training config with the stage-derived seed.
  TrainConfig model_config(const std::string& model) const {
    auto j = train_config_to_json(train);
    if (auto it = train_overrides.find(model); it != train_overrides.end()) j.merge_patch(it->second);
    auto c = train_config_from_json(j);
    c.seed = derive_seed(stage_seed(seed, "train"), model == kModelBaseline ? "baseline" : "pretrained");
    return c;
  }

  void validate() const {
    if (models.empty()) throw ConfigError("pipeline: no models requested");
    for (const auto& m : models)
      if (!is_known_model(m)) throw ConfigError("pipeline: unknown model '" + m + "'");
    for (const auto& [m, _] : train_overrides)
      if (!is_known_model(m)) throw ConfigError("pipeline: train_overrides names unknown model '" + m + "'");
    for (const auto& s : stages)
      if (std::find(kStageOrder.begin(), kStageOrder.end(), s) == kStageOrder.end())
        throw ConfigError("pipeline: unknown stage '" + s + "'");
    if (importance.repeats < 1) throw ConfigError("pipeline: importance repeats must be >= 1");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("pipeline: threshold must lie in (0, 1)");
    train.validate();
    for (const auto& m : models) model_config(m);
  }
};

inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json overrides = nlohmann::json::object();
  for (const auto& [m, j] : c.train_overrides) overrides[m] = j;
  return {{"out_dir", c.out_dir.generic_string()},
          {"seed", c.seed},
          {"paths",
           {{"raw", c.paths.raw.generic_string()},
            {"dataset", c.paths.dataset.generic_string()},
            {"split", c.paths.split.generic_string()},
            {"models", c.paths.models.generic_string()},
            {"eval", c.paths.eval.generic_string()},
            {"importance", c.paths.importance.generic_string()},
            {"report", c.paths.report.generic_string()}}},
          {"synth", synth_config_to_json(c.synth)},
          {"preprocess", {{"sparse_threshold", c.preprocess.sparse_threshold}}},
          {"split", {{"test_fraction", c.split.test_fraction}, {"val_fraction_of_train", c.split.val_fraction_of_train}}},
          {"train", train_config_to_json(c.train)},
          {"models", c.models},
          {"train_overrides", overrides},
          {"evaluation", {{"threshold", c.threshold}}},
          {"importance",
           {{"mode", to_string(c.importance.mode)},
            {"bundle_weather_history", c.importance.bundle_weather_history},
            {"repeats", c.importance.repeats}}},
          {"stages", c.stages}};
}

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
    if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("paths")) {
      const auto& p = j.at("paths");
      auto path = [&](const char* key, std::filesystem::path& field) {
        if (p.contains(key)) field = p.at(key).get<std::string>();
      };
      path("raw", c.paths.raw);
      path("dataset", c.paths.dataset);
      path("split", c.paths.split);
      path("models", c.paths.models);
      path("eval", c.paths.eval);
      path("importance", c.paths.importance);
      path("report", c.paths.report);
    }
    if (j.contains("synth")) c.synth = synth_config_from_json(j.at("synth"));
    if (j.contains("preprocess")) c.preprocess.sparse_threshold = j.at("preprocess").value("sparse_threshold", 0.95);
    if (j.contains("split")) {
      c.split.test_fraction = j.at("split").value("test_fraction", c.split.test_fraction);
      c.split.val_fraction_of_train = j.at("split").value("val_fraction_of_train", c.split.val_fraction_of_train);
    }
    if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
    if (j.contains("models")) c.models = j.at("models").get<std::vector<std::string>>();
    if (j.contains("train_overrides"))
      for (const auto& [m, o] : j.at("train_overrides").items()) c.train_overrides[m] = o;
    if (j.contains("evaluation")) c.threshold = j.at("evaluation").value("threshold", c.threshold);
    if (j.contains("importance")) {
      const auto& i = j.at("importance");
      if (i.contains("mode")) c.importance.mode = grouping_mode_from_string(i.at("mode").get<std::string>());
      c.importance.bundle_weather_history = i.value("bundle_weather_history", c.importance.bundle_weather_history);
      c.importance.repeats = i.value("repeats", c.importance.repeats);
    }
    if (j.contains("stages")) c.stages = j.at("stages").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Manifest and stage runner

namespace detail {

inline std::string manifest_key(const PipelineConfig& cfg, const std::filesystem::path& p) {
  const auto rel = p.lexically_relative(cfg.out_dir);
  return (rel.empty() || *rel.begin() == "..") ? p.generic_string() : rel.generic_string();
}

/// Hashes a file, or every regular file below a directory, keyed by path.
inline void hash_into(nlohmann::json& out, const PipelineConfig& cfg, const std::filesystem::path& p) {
  if (std::filesystem::is_regular_file(p)) {
    out[manifest_key(cfg, p)] = file_hash(p);
    return;
  }
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::recursive_directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  for (const auto& f : files) out[manifest_key(cfg, f)] = file_hash(f);
}

struct StageInput {
  std::filesystem::path path;
  std::string producer;
};

struct StagePlan {
  std::string name;
  std::uint64_t seed = 0;
  nlohmann::json config;
  std::vector<StageInput> inputs;
  std::vector<std::filesystem::path> outputs;
};

inline bool outputs_match(const nlohmann::json& recorded, const PipelineConfig& cfg,
                          const std::vector<std::filesystem::path>& outputs) {
  nlohmann::json now = nlohmann::json::object();
  for (const auto& o : outputs) {
    if (!std::filesystem::exists(o)) return false;
    hash_into(now, cfg, o);
  }
  return now == recorded;
}

}  // namespace detail

struct PipelineResult {
  int exit_code = 0;
  std::filesystem::path artifact_dir;
  std::string failed_stage;
  std::string message;
  std::vector<std::string> ran;
  std::vector<std::string> skipped;
};

/// Runs the selected stages in order. Failures are reported on `err` naming
/// the stage, and returned as the exit code of the error category.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, std::ostream& log = std::cerr,
                                   std::ostream& err = std::cerr) {
  PipelineResult res;
  res.artifact_dir = cfg.out_dir;
  std::string current = "config";
  try {
    cfg.validate();
    const auto manifest_path = cfg.out_dir / "manifest.json";
    nlohmann::json manifest = std::filesystem::exists(manifest_path) ? read_json(manifest_path, false)
                                                                     : nlohmann::json::object();
    if (!manifest.contains("stages") || manifest.value("global_seed", cfg.seed + 1) != cfg.seed)
      manifest["stages"] = nlohmann::json::object();
    manifest["format"] = "masktab-manifest";
    manifest["version"] = 1;
    manifest["masktab_version"] = kMasktabVersion;
    manifest["global_seed"] = cfg.seed;

    const auto raw_dir = cfg.resolve(cfg.paths.raw), dataset_dir = cfg.resolve(cfg.paths.dataset),
               split_path = cfg.resolve(cfg.paths.split), models_dir = cfg.resolve(cfg.paths.models),
               eval_dir = cfg.resolve(cfg.paths.eval), importance_path = cfg.resolve(cfg.paths.importance),
               report_dir = cfg.resolve(cfg.paths.report);
    auto model_dir = [&](const std::string& m) { return models_dir / m; };
    auto eval_file = [&](const std::string& m) { return eval_dir / (m + ".json"); };
    const auto winners_path = eval_dir / "winners.json";

    auto plan = [&](const std::string& stage) {
      detail::StagePlan p{stage, stage_seed(cfg.seed, stage), nlohmann::json::object(), {}, {}};
      const std::vector<std::filesystem::path> dataset_files{
          dataset_dir / "features.csv", dataset_dir / "responses_cont.csv", dataset_dir / "responses_bin.csv",
          dataset_dir / "mask.csv",     dataset_dir / "blocks.csv",         dataset_dir / "schema.json"};
      auto need_dataset = [&] {
        for (const auto& f : dataset_files) p.inputs.push_back({f, "preprocess"});
        p.inputs.push_back({split_path, "preprocess"});
      };
      if (stage == "generate") {
        auto s = cfg.synth;
        s.seed = p.seed;
        p.config = synth_config_to_json(s);
        p.outputs = {raw_dir};
      } else if (stage == "preprocess") {
        p.config = {{"sparse_threshold", cfg.preprocess.sparse_threshold},
                    {"test_fraction", cfg.split.test_fraction},
                    {"val_fraction_of_train", cfg.split.val_fraction_of_train}};
        for (const char* f : {"predictors.csv", "concentrations.csv", "sites.csv", "raw_schema.json"})
          p.inputs.push_back({raw_dir / f, "generate"});
        p.outputs = dataset_files;
        p.outputs.push_back(dataset_dir / "preprocess_report.json");
        p.outputs.push_back(split_path);
      } else if (stage == "train") {
        for (const auto& m : cfg.models) {
          p.config[m] = train_config_to_json(cfg.model_config(m));
          p.outputs.push_back(model_dir(m));
        }
        need_dataset();
      } else if (stage == "evaluate") {
        p.config = {{"threshold", cfg.threshold}, {"models", cfg.models}};
        need_dataset();
        for (const auto& m : cfg.models) {
          p.inputs.push_back({model_dir(m) / "checkpoint.json", "train"});
          p.outputs.push_back(eval_file(m));
        }
        p.outputs.push_back(winners_path);
      } else if (stage == "importance") {
        p.config = pipeline_config_to_json(cfg)["importance"];
        p.config["models"] = cfg.models;
        need_dataset();
        for (const auto& m : cfg.models) p.inputs.push_back({model_dir(m) / "checkpoint.json", "train"});
        p.inputs.push_back({winners_path, "evaluate"});
        p.outputs = {importance_path};
      } else {
        p.config = {{"models", cfg.models}};
        for (const auto& m : cfg.models) p.inputs.push_back({eval_file(m), "evaluate"});
        p.outputs = {report_dir / "summary.txt", report_dir / "summary.csv", report_dir / "summary.json"};
      }
      return p;
    };

    auto load_data = [&] {
      return std::pair{read_dataset(dataset_dir), read_split(split_path)};
    };

    auto execute = [&](const detail::StagePlan& p) {
      if (p.name == "generate") {
        auto s = cfg.synth;
        s.seed = p.seed;
        if (std::filesystem::exists(raw_dir)) std::filesystem::remove_all(raw_dir);
        write_synthetic(raw_dir, s);
      } else if (p.name == "preprocess") {
        auto sopt = cfg.split;
        sopt.seed = p.seed;
        write_preprocessed(dataset_dir, split_path, preprocess_with_split(read_raw_table(raw_dir), cfg.preprocess, sopt));
      } else if (p.name == "train") {
        const auto [ds, split] = load_data();
        std::map<std::string, PretrainedEncoder> encoders;  // keyed by the config that produced them
        for (const auto& m : cfg.models) {
          const auto mc = cfg.model_config(m);
          log << "  training " << m << "\n";
          const PretrainedEncoder* shared = nullptr;
          std::string key;
          if (m != kModelBaseline) {
            auto kj = train_config_to_json(mc);
            kj.erase("finetune_mode");
            key = kj.dump();
            if (auto it = encoders.find(key); it != encoders.end()) shared = &it->second;
          }
          auto run = train_model(m, ds, split, mc, shared);
          if (m != kModelBaseline && !shared) encoders.emplace(key, *run.encoder);
          if (std::filesystem::exists(model_dir(m))) std::filesystem::remove_all(model_dir(m));
          write_model_run(model_dir(m), run);
        }
      } else if (p.name == "evaluate") {
        const auto [ds, split] = load_data();
        std::vector<EvalReport> reports;
        for (const auto& m : cfg.models) {
          reports.push_back(evaluate_checkpoint(load_checkpoint(model_dir(m) / "checkpoint.json"), ds,
                                                split.test_rows, cfg.threshold));
          write_json(eval_file(m), eval_report_to_json(reports.back()));
        }
        write_json(winners_path, winner_ranking_to_json(winner_ranking(reports)));
      } else if (p.name == "importance") {
        const auto [ds, split] = load_data();
        const auto winners = read_json(winners_path, false);
        std::string best;
        std::size_t best_wins = 0;
        for (const auto& m : winners.at("models")) {  // lexicographic, so ties go to the first
          const auto name = m.get<std::string>();
          const auto w = winners.at("wins").at(name).get<std::size_t>();
          if (best.empty() || w > best_wins) {
            best = name;
            best_wins = w;
          }
        }
        log << "  importance for " << best << "\n";
        auto opt = cfg.importance;
        opt.seed = p.seed;
        auto j = importance_for_checkpoint(load_checkpoint(model_dir(best) / "checkpoint.json"), ds,
                                           split.test_rows, opt);
        j["seed"] = p.seed;
        write_json(importance_path, j);
      } else {
        std::vector<EvalReport> reports;
        for (const auto& m : cfg.models) reports.push_back(eval_report_from_json(read_json(eval_file(m), false)));
        write_report(report_dir, build_report(std::move(reports)));
      }
    };

    for (const char* stage : kStageOrder) {
      if (std::find(cfg.stages.begin(), cfg.stages.end(), stage) == cfg.stages.end()) continue;
      current = stage;
      const auto p = plan(stage);
      nlohmann::json inputs = nlohmann::json::object();
      for (const auto& in : p.inputs) {
        if (!std::filesystem::exists(in.path))
          throw DataError("missing input " + in.path.string() + " (" + in.producer + " output); run the " +
                          in.producer + " stage first");
        detail::hash_into(inputs, cfg, in.path);
      }
      const auto fingerprint = hex64(fnv1a64(nlohmann::json{{"config", p.config}, {"inputs", inputs}}.dump()));
      auto& entry = manifest["stages"][stage];
      if (!cfg.force && entry.is_object() && entry.value("fingerprint", "") == fingerprint &&
          detail::outputs_match(entry.at("outputs"), cfg, p.outputs)) {
        log << "stage " << stage << ": up to date\n";
        res.skipped.push_back(stage);
        continue;
      }
      log << "stage " << stage << "\n";
      execute(p);
      nlohmann::json outputs = nlohmann::json::object();
      for (const auto& o : p.outputs) detail::hash_into(outputs, cfg, o);
      entry = {{"status", "complete"},
               {"seed", p.seed},
               {"fingerprint", fingerprint},
               {"config", p.config},
               {"inputs", inputs},
               {"outputs", outputs}};
      write_json(manifest_path, manifest);
      res.ran.push_back(stage);
    }
    write_json(manifest_path, manifest);
  } catch (const Error& e) {
    res.exit_code = e.exit_code();
    res.failed_stage = current;
    res.message = e.what();
  } catch (const nlohmann::json::exception& e) {
    res.exit_code = DataError("").exit_code();
    res.failed_stage = current;
    res.message = std::string("malformed JSON artifact: ") + e.what();
  } catch (const std::exception& e) {
    res.exit_code = 1;
    res.failed_stage = current;
    res.message = e.what();
  }
  if (res.exit_code != 0) err << "masktab: stage '" << res.failed_stage << "' failed: " << res.message << "\n";
  return res;
}

}  // namespace masktab
