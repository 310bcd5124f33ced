#pragma once

// Permutation variable importance under the masked training losses. A group
// of columns (one-hot levels of one categorical, a sin/cos date pair, or a
// bundled weather history) is permuted with a single row permutation so its
// within-row structure survives.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/masked_loss.hpp"
#include "masktab/nn.hpp"
#include "masktab/rng.hpp"
#include "masktab/trainer.hpp"

namespace masktab {

enum class ImportanceTask { regression, classification };

inline const char* to_string(ImportanceTask t) {
  return t == ImportanceTask::regression ? "regression" : "classification";
}

enum class GroupingMode { grouped, per_column };

struct FeatureGroup {
  std::string name;
  std::vector<std::size_t> columns;
};

inline bool is_history_variable(const std::string& v) {
  static const std::string suffix = "_history";
  return v.size() > suffix.size() && v.compare(v.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Permutation units. Grouped mode bundles columns sharing an original
/// variable (one-hot levels, date sin/cos pairs, and, unless disabled, all
/// lags of one weather history). Per-column mode treats every column alone.
/// Groups are ordered by their first column.
inline std::vector<FeatureGroup> feature_groups(const FeatureSchema& schema, GroupingMode mode,
                                                bool bundle_weather_history = true) {
  auto parts = schema.group_by([&](const SchemaEntry& e) {
    if (mode == GroupingMode::per_column) return e.name;
    if (is_history_variable(e.original_variable) && !bundle_weather_history) return e.name;
    return e.original_variable;
  });
  std::vector<FeatureGroup> out;
  for (auto& [name, cols] : parts) out.push_back({name, std::move(cols)});
  return out;
}

struct ImportanceEntry {
  std::string group;
  ImportanceTask task = ImportanceTask::regression;
  std::vector<std::size_t> columns;
  double baseline_loss = 0.0;
  double permuted_loss_mean = 0.0;
  double permuted_loss_sd = 0.0;
  double importance = 0.0;  // percent increase over baseline
  std::size_t n_repeats = 0;
  std::uint64_t seed = 0;
};

struct ImportanceReport {
  std::vector<ImportanceEntry> entries;
  std::size_t n_rows = 0;
};

namespace detail {

inline double task_loss(ImportanceTask task, const Prediction& pred, const Matrix& yc, const Matrix& yb,
                        const Matrix& m) {
  return task == ImportanceTask::regression ? masked_mse({yc, pred.concentration, m}).loss
                                            : masked_bce({yb, pred.probability, m}).loss;
}

/// Row permutation for one (group, repeat); independent of task so both tasks
/// see the same shuffles.
inline std::vector<std::size_t> group_permutation(std::uint64_t seed, const std::string& group, std::size_t repeat,
                                                  std::size_t n) {
  Rng rng(derive_seed(derive_seed(seed, group), repeat));
  return rng.permutation(n);
}

inline void permute_columns(Matrix& x, const Matrix& original, const std::vector<std::size_t>& columns,
                            const std::vector<std::size_t>& perm) {
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (auto c : columns) x(i, c) = original(perm[i], c);
}

inline void finish_entry(ImportanceEntry& e, const std::vector<double>& losses) {
  double mean = 0.0;
  for (double l : losses) mean += l;
  mean /= static_cast<double>(losses.size());
  double ss = 0.0;
  for (double l : losses) ss += (l - mean) * (l - mean);
  e.permuted_loss_mean = mean;
  e.permuted_loss_sd = losses.size() > 1 ? std::sqrt(ss / static_cast<double>(losses.size() - 1)) : 0.0;
  e.importance = e.baseline_loss > 0.0 ? 100.0 * (mean - e.baseline_loss) / e.baseline_loss : 0.0;
  e.n_repeats = losses.size();
}

inline void check_inputs(const nn::NetworkParams& params, const TabularDataset& ds,
                         const std::vector<std::size_t>& rows, std::size_t n_repeats) {
  if (rows.empty()) throw DataError("permutation_importance: empty row set");
  if (n_repeats < 1) throw ConfigError("permutation_importance: repeats must be >= 1");
  if (params.input_dim() != ds.n_features())
    throw DataError("permutation_importance: model expects " + std::to_string(params.input_dim()) +
                    " features, dataset has " + std::to_string(ds.n_features()));
}

}  // namespace detail

/// Importance of one group for one task on the given rows.
inline ImportanceEntry permutation_importance(const nn::NetworkParams& params, const TabularDataset& ds,
                                              const std::vector<std::size_t>& rows, const FeatureGroup& group,
                                              ImportanceTask task, std::size_t n_repeats, std::uint64_t seed) {
  detail::check_inputs(params, ds, rows, n_repeats);
  if (group.columns.empty()) throw DataError("permutation_importance: unknown or empty group '" + group.name + "'");
  for (auto c : group.columns)
    if (c >= ds.n_features()) throw DataError("permutation_importance: group column out of range");
  const Matrix x = ds.x.select_rows(rows);
  const Matrix yc = ds.y_cont.select_rows(rows), yb = ds.y_bin.select_rows(rows), m = ds.mask.select_rows(rows);
  ImportanceEntry e{group.name, task, group.columns};
  e.seed = seed;
  e.baseline_loss = detail::task_loss(task, predict(params, x), yc, yb, m);
  Matrix xp = x;
  std::vector<double> losses;
  for (std::size_t r = 0; r < n_repeats; ++r) {
    detail::permute_columns(xp, x, group.columns, detail::group_permutation(seed, group.name, r, rows.size()));
    losses.push_back(detail::task_loss(task, predict(params, xp), yc, yb, m));
  }
  detail::finish_entry(e, losses);
  return e;
}

/// Looks a group up by name in the schema-derived grouping.
inline FeatureGroup find_group(const std::vector<FeatureGroup>& groups, const std::string& name) {
  for (const auto& g : groups)
    if (g.name == name) return g;
  throw DataError("unknown feature group '" + name + "'");
}

/// Both tasks for every group. Predictions are shared across tasks per
/// (group, repeat), so each entry equals a standalone permutation_importance call.
inline ImportanceReport compute_importance(const nn::NetworkParams& params, const TabularDataset& ds,
                                           const std::vector<std::size_t>& rows,
                                           const std::vector<FeatureGroup>& groups, std::size_t n_repeats,
                                           std::uint64_t seed) {
  detail::check_inputs(params, ds, rows, n_repeats);
  const Matrix x = ds.x.select_rows(rows);
  const Matrix yc = ds.y_cont.select_rows(rows), yb = ds.y_bin.select_rows(rows), m = ds.mask.select_rows(rows);
  const auto base_pred = predict(params, x);
  const double base_reg = detail::task_loss(ImportanceTask::regression, base_pred, yc, yb, m);
  const double base_cls = detail::task_loss(ImportanceTask::classification, base_pred, yc, yb, m);

  ImportanceReport report;
  report.n_rows = rows.size();
  std::vector<ImportanceEntry> reg_entries, cls_entries;
  Matrix xp = x;
  for (const auto& g : groups) {
    std::vector<double> reg, cls;
    for (std::size_t r = 0; r < n_repeats; ++r) {
      detail::permute_columns(xp, x, g.columns, detail::group_permutation(seed, g.name, r, rows.size()));
      const auto pred = predict(params, xp);
      reg.push_back(detail::task_loss(ImportanceTask::regression, pred, yc, yb, m));
      cls.push_back(detail::task_loss(ImportanceTask::classification, pred, yc, yb, m));
    }
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (auto c : g.columns) xp(i, c) = x(i, c);
    ImportanceEntry er{g.name, ImportanceTask::regression, g.columns, base_reg};
    er.seed = seed;
    detail::finish_entry(er, reg);
    ImportanceEntry ec{g.name, ImportanceTask::classification, g.columns, base_cls};
    ec.seed = seed;
    detail::finish_entry(ec, cls);
    reg_entries.push_back(std::move(er));
    cls_entries.push_back(std::move(ec));
  }
  report.entries = std::move(reg_entries);
  report.entries.insert(report.entries.end(), cls_entries.begin(), cls_entries.end());
  return report;
}

struct ImportanceRanking {
  std::vector<std::string> regression;
  std::vector<std::string> classification;
  std::vector<std::string> intersection;  // in both top-k lists, regression order
};

/// Descending importance per task; ties keep schema (first-column) order.
inline ImportanceRanking rank_importance(const ImportanceReport& report, std::size_t top_k = 10) {
  auto ranked = [&](ImportanceTask task) {
    std::vector<const ImportanceEntry*> v;
    for (const auto& e : report.entries)
      if (e.task == task) v.push_back(&e);
    std::stable_sort(v.begin(), v.end(), [](auto* a, auto* b) {
      if (a->importance != b->importance) return a->importance > b->importance;
      return a->columns.front() < b->columns.front();
    });
    std::vector<std::string> names;
    for (auto* e : v) names.push_back(e->group);
    return names;
  };
  ImportanceRanking out{ranked(ImportanceTask::regression), ranked(ImportanceTask::classification), {}};
  const std::size_t kc = std::min(top_k, out.classification.size());
  const std::set<std::string> top_cls(out.classification.begin(),
                                      out.classification.begin() + static_cast<std::ptrdiff_t>(kc));
  for (std::size_t i = 0; i < std::min(top_k, out.regression.size()); ++i)
    if (top_cls.count(out.regression[i])) out.intersection.push_back(out.regression[i]);
  return out;
}

inline nlohmann::json importance_to_json(const ImportanceReport& r, const std::string& mode) {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : r.entries)
    entries.push_back({{"group", e.group},
                       {"task", to_string(e.task)},
                       {"columns", e.columns},
                       {"baseline_loss", e.baseline_loss},
                       {"permuted_loss_mean", e.permuted_loss_mean},
                       {"permuted_loss_sd", e.permuted_loss_sd},
                       {"importance_percent", e.importance},
                       {"n_repeats", e.n_repeats},
                       {"seed", e.seed}});
  const auto rank = rank_importance(r);
  return {{"format", "masktab-importance"},
          {"version", 1},
          {"mode", mode},
          {"n_rows", r.n_rows},
          {"entries", entries},
          {"ranking",
           {{"regression", rank.regression},
            {"classification", rank.classification},
            {"top10_intersection", rank.intersection}}}};
}

}  // namespace masktab
