// masktab command-line front end.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
// Seed precedence: explicit --seed flag, then MASKTAB_SEED, then the config file.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "masktab.hpp"

namespace fs = std::filesystem;
using namespace masktab;

namespace {

void resolve_seed(std::uint64_t& config_seed, const std::optional<std::uint64_t>& flag) {
  apply_seed_override(config_seed);
  if (flag) config_seed = *flag;
}

TrainConfig load_train_config(const std::string& path) {
  if (path.empty()) return {};
  return train_config_from_json(read_json(path, true));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  for (std::string item; std::getline(ss, item, ',');)
    if (!item.empty()) out.push_back(item);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"masktab: masked multi-task learning for partially observed tabular responses"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kMasktabVersion);

  // generate
  auto* gen = app.add_subcommand("generate", "Write a planted-signal synthetic raw table");
  std::string gen_config, gen_out;
  std::optional<std::uint64_t> gen_seed;
  gen->add_option("--config", gen_config, "SynthConfig JSON (defaults when omitted)");
  gen->add_option("--out", gen_out, "Output raw-table directory")->required();
  gen->add_option("--seed", gen_seed, "Generator seed");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Encode, impute and normalise a raw table; write a block split");
  std::string pre_in, pre_out, pre_split;
  std::uint64_t pre_seed = 0;
  double test_fraction = 0.2, val_fraction = 0.2, sparse_threshold = 0.95;
  pre->add_option("--in", pre_in, "Raw-table directory")->required();
  pre->add_option("--out", pre_out, "Dataset directory")->required();
  pre->add_option("--seed", pre_seed, "Split seed");
  pre->add_option("--split", pre_split, "Split file (default <out>/split.json)");
  pre->add_option("--test-fraction", test_fraction);
  pre->add_option("--val-fraction", val_fraction, "Validation share of the training rows");
  pre->add_option("--sparse-threshold", sparse_threshold, "Drop columns with a larger missing share");

  // train
  auto* tr = app.add_subcommand("train", "Train one model and write its checkpoint plus history.json");
  std::string tr_dataset, tr_split, tr_model = kModelBaseline, tr_config, tr_out;
  std::optional<std::uint64_t> tr_seed;
  tr->add_option("--dataset", tr_dataset)->required();
  tr->add_option("--split", tr_split)->required();
  tr->add_option("--model", tr_model)->check(CLI::IsMember({kModelBaseline, kModelFrozen, kModelUnfrozen}));
  tr->add_option("--config", tr_config, "TrainConfig JSON");
  tr->add_option("--out", tr_out, "Checkpoint path")->required();
  tr->add_option("--seed", tr_seed);

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Per-response RMSE/R2/F1/AUC on the test rows");
  std::string ev_dataset, ev_split, ev_ckpt, ev_out;
  double threshold = 0.5;
  ev->add_option("--dataset", ev_dataset)->required();
  ev->add_option("--split", ev_split)->required();
  ev->add_option("--ckpt", ev_ckpt)->required();
  ev->add_option("--out", ev_out)->required();
  ev->add_option("--threshold", threshold, "F1 decision threshold");

  // importance
  auto* im = app.add_subcommand("importance", "Permutation importance under the masked losses");
  std::string im_dataset, im_split, im_ckpt, im_out, im_mode = "grouped";
  std::size_t repeats = 30;
  std::uint64_t im_seed = 0;
  bool no_bundle = false;
  im->add_option("--ckpt", im_ckpt)->required();
  im->add_option("--dataset", im_dataset)->required();
  im->add_option("--split", im_split)->required();
  im->add_option("--mode", im_mode)->check(CLI::IsMember({"grouped", "per-column"}));
  im->add_option("--repeats", repeats)->check(CLI::PositiveNumber);
  im->add_option("--seed", im_seed);
  im->add_flag("--no-bundle-history", no_bundle, "Treat each weather lag as its own group");
  im->add_option("--out", im_out)->required();

  // report
  auto* rp = app.add_subcommand("report", "Summary table and win shares from evaluation reports");
  std::string rp_eval, rp_out;
  rp->add_option("--eval", rp_eval, "Directory of <model>.json evaluation reports")->required();
  rp->add_option("--out", rp_out, "Output directory for summary.{txt,csv,json}")->required();

  // pipeline
  auto* pl = app.add_subcommand("pipeline", "Run generate -> preprocess -> train -> evaluate -> importance -> report");
  std::string pl_config, pl_out, pl_stages;
  std::optional<std::uint64_t> pl_seed;
  bool force = false;
  pl->add_option("--config", pl_config, "PipelineConfig JSON (defaults when omitted)");
  pl->add_option("--out", pl_out, "Artifact directory (overrides out_dir)");
  pl->add_option("--stages", pl_stages, "Comma-separated subset of stages");
  pl->add_option("--seed", pl_seed, "Global seed");
  pl->add_flag("--force", force, "Rerun stages even when their inputs are unchanged");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*gen) {
      SynthConfig cfg = gen_config.empty() ? SynthConfig{} : synth_config_from_json(read_json(gen_config, true));
      resolve_seed(cfg.seed, gen_seed);
      write_synthetic(gen_out, cfg);
      std::cerr << "wrote " << cfg.n_samples << " rows to " << gen_out << "\n";
    } else if (*pre) {
      PreprocessOptions popt;
      popt.sparse_threshold = sparse_threshold;
      const SplitOptions sopt{test_fraction, val_fraction, pre_seed};
      const auto p = preprocess_with_split(read_raw_table(pre_in), popt, sopt);
      write_preprocessed(pre_out, pre_split.empty() ? fs::path(pre_out) / "split.json" : fs::path(pre_split), p);
      for (const auto& w : p.result.report.warnings) std::cerr << "warning: " << w << "\n";
      std::cerr << "dataset: " << p.result.dataset.n_rows() << " rows x " << p.result.dataset.n_features()
                << " features; split " << p.split.fit_rows().size() << "/" << p.split.val_rows.size() << "/"
                << p.split.test_rows.size() << "\n";
    } else if (*tr) {
      auto cfg = load_train_config(tr_config);
      resolve_seed(cfg.seed, tr_seed);
      const auto ds = read_dataset(tr_dataset);
      const auto run = train_model(tr_model, ds, read_split(tr_split), cfg);
      const fs::path out(tr_out);
      save_checkpoint(out, run.checkpoint);
      write_json(out.parent_path() / "history.json", history_to_json(run.history));
      std::cerr << tr_model << ": best epoch " << run.history.best_epoch << ", validation loss "
                << csv::format_number(run.history.best_val_loss) << "\n";
    } else if (*ev) {
      const auto ds = read_dataset(ev_dataset);
      const auto rep = evaluate_checkpoint(load_checkpoint(ev_ckpt), ds, read_split(ev_split).test_rows, threshold);
      write_json(ev_out, eval_report_to_json(rep));
    } else if (*im) {
      const auto ds = read_dataset(im_dataset);
      const ImportanceOptions opt{grouping_mode_from_string(im_mode), !no_bundle, repeats, im_seed};
      auto j = importance_for_checkpoint(load_checkpoint(im_ckpt), ds, read_split(im_split).test_rows, opt);
      j["seed"] = im_seed;
      write_json(im_out, j);
    } else if (*rp) {
      const auto r = build_report(read_eval_reports(rp_eval));
      write_report(rp_out, r);
      std::cout << r.text;
    } else if (*pl) {
      PipelineConfig cfg = pl_config.empty() ? PipelineConfig{} : pipeline_config_from_json(read_json(pl_config, true));
      resolve_seed(cfg.seed, pl_seed);
      if (!pl_out.empty()) cfg.out_dir = pl_out;
      if (!pl_stages.empty()) cfg.stages = split_list(pl_stages);
      cfg.force = force;
      const auto res = run_pipeline(cfg);
      if (res.exit_code != 0) return res.exit_code;
      std::cerr << "artifacts in " << res.artifact_dir.string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "masktab: " << e.what() << "\n";
    return e.exit_code();
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "masktab: malformed JSON input: " << e.what() << "\n";
    return DataError("").exit_code();
  } catch (const std::exception& e) {
    std::cerr << "masktab: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
