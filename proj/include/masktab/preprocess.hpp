#pragma once

// Raw table -> model-ready TabularDataset, plus block-aware splitting.

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "masktab/csv.hpp"
#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/raw_table.hpp"
#include "masktab/rng.hpp"

namespace masktab {

// ---------------------------------------------------------------------------
// Feature transforms

struct DayEncoding {
  double sin_component;
  double cos_component;
};

/// Cyclical day-of-year encoding with a fixed 365-day period (leap years included).
inline DayEncoding encode_day_of_year(double day) {
  if (!(day >= 1.0 && day <= 366.0))
    throw DataError("day of year out of range [1, 366]: " + csv::format_number(day));
  const double angle = 2.0 * std::numbers::pi * day / 365.0;
  return {std::sin(angle), std::cos(angle)};
}

struct HumidityReading {
  double percent;
  bool supersaturated;  // dew point above air temperature; percent clamped to 100
};

inline constexpr double kMagnusA = 17.625;
inline constexpr double kMagnusB = 243.04;

/// Relative humidity (%) from air temperature and dew point (both deg C),
/// August-Roche-Magnus form.
inline HumidityReading relative_humidity(double temperature, double dew_point) {
  if (!std::isfinite(temperature) || !std::isfinite(dew_point))
    throw NumericalError("relative_humidity: non-finite temperature input");
  if (temperature <= -kMagnusB || dew_point <= -kMagnusB)
    throw DataError("relative_humidity: temperature below the Magnus validity limit");
  if (dew_point > temperature) return {100.0, true};
  const double num = std::exp(kMagnusA * dew_point / (kMagnusB + dew_point));
  const double den = std::exp(kMagnusA * temperature / (kMagnusB + temperature));
  return {100.0 * num / den, false};
}

struct TransformedResponses {
  Matrix y_cont;
  Matrix y_bin;
  Matrix mask;
};

/// Below-LOQ cells become 0, then y_cont = ln(x + 1) and y_bin = [x > 0].
/// Cells with NaN concentration and no LOQ flag stay missing.
inline TransformedResponses transform_responses(const Matrix& concentration,
                                                const Matrix& below_loq) {
  require_same_shape(concentration, below_loq, "transform_responses");
  const std::size_t n = concentration.rows(), k = concentration.cols();
  TransformedResponses out{Matrix(n, k, kSentinel), Matrix(n, k, kSentinel), Matrix(n, k, 0.0)};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      double x = concentration(i, j);
      if (below_loq(i, j) != 0.0) x = 0.0;
      if (std::isnan(x)) continue;
      if (x < 0.0 || !std::isfinite(x))
        throw DataError("negative or infinite concentration at " + detail::cell(i, j));
      out.y_cont(i, j) = std::log1p(x);
      out.y_bin(i, j) = x > 0.0 ? 1.0 : 0.0;
      out.mask(i, j) = 1.0;
    }
  return out;
}

/// Soil pH reported as a single value or a range "lo-hi" (hyphen or en dash);
/// ranges become their midpoint. Empty/NA gives NaN.
inline double parse_ph(const std::string& text) {
  if (csv::is_missing(text)) return kSentinel;
  static const std::string en_dash = "\xE2\x80\x93";
  std::string s = text;
  std::size_t pos = s.find(en_dash);
  std::size_t len = en_dash.size();
  if (pos == std::string::npos) {
    pos = s.find('-', 1);  // skip a leading sign
    len = 1;
  }
  if (pos == std::string::npos) return csv::parse_number(csv::trim(s));
  const double lo = csv::parse_number(csv::trim(s.substr(0, pos)));
  const double hi = csv::parse_number(csv::trim(s.substr(pos + len)));
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Encoding and normalisation

struct DroppedColumn {
  std::string name;
  std::string reason;  // "sparse>95%", "constant", "unimputable"
};

struct NormalisationStats {
  double mean;
  double sd;
};

struct PreprocessReport {
  std::vector<DroppedColumn> columns_dropped;
  std::map<std::string, std::size_t> imputation_counts;
  std::map<std::string, NormalisationStats> normalisation_stats;
  std::size_t supersaturated_cells = 0;
  std::vector<std::string> warnings;
};

struct PreprocessOptions {
  double sparse_threshold = 0.95;
};

struct PreprocessResult {
  TabularDataset dataset;
  PreprocessReport report;
};

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline NormalisationStats population_stats(const std::vector<double>& col,
                                           const std::vector<std::size_t>& rows) {
  double mean = 0.0;
  for (auto r : rows) mean += col[r];
  mean /= static_cast<double>(rows.size());
  double ss = 0.0;
  for (auto r : rows) ss += (col[r] - mean) * (col[r] - mean);
  return {mean, std::sqrt(ss / static_cast<double>(rows.size()))};
}

struct ColumnBuilder {
  std::vector<std::vector<double>> columns;
  std::vector<SchemaEntry> entries;

  void add(std::vector<double> values, std::string name, std::string variable, ColumnKind kind,
           std::string group, std::optional<std::string> level = std::nullopt) {
    entries.push_back({entries.size(), std::move(name), std::move(variable), kind,
                       std::move(group), std::move(level)});
    columns.push_back(std::move(values));
  }
};

}  // namespace detail

/// z-scores training statistics in place and registers a continuous column,
/// or drops it when it has zero spread on the training rows.
inline void add_normalised_column(detail::ColumnBuilder& out, PreprocessReport& report,
                                  std::vector<double> values, const std::string& name,
                                  const std::string& variable,
                                  const std::vector<std::size_t>& training_rows) {
  const auto stats = detail::population_stats(values, training_rows);
  if (!(stats.sd > 0.0)) {
    report.columns_dropped.push_back({name, "constant"});
    return;
  }
  for (double& v : values) v = (v - stats.mean) / stats.sd;
  report.normalisation_stats[name] = stats;
  out.add(std::move(values), name, variable, ColumnKind::continuous, name);
}

/// Encodes predictors and responses. Imputation values and normalisation
/// statistics come from training_rows only and are applied to every row.
inline PreprocessResult encode_and_normalise(const RawTable& raw,
                                             const std::vector<std::size_t>& training_rows,
                                             const PreprocessOptions& opt = {}) {
  const std::size_t n = raw.n_rows();
  if (training_rows.empty()) throw DataError("encode_and_normalise: empty training row set");
  for (auto r : training_rows)
    if (r >= n) throw DataError("encode_and_normalise: training row out of range");

  PreprocessResult result;
  PreprocessReport& report = result.report;
  detail::ColumnBuilder out;

  // Temperature lags paired with dew-point lags, keyed by lag.
  std::map<int, const RawColumn*> temperature_lags;
  for (const auto& c : raw.predictors)
    if (c.type == RawColumnType::weather_lag && c.weather_variable == "temperature")
      temperature_lags[c.lag] = &c;

  auto missing_fraction = [&](const std::vector<double>& v) {
    std::size_t miss = 0;
    for (auto r : training_rows) miss += std::isnan(v[r]) ? 1 : 0;
    return static_cast<double>(miss) / static_cast<double>(training_rows.size());
  };

  // Sparse check then median imputation; returns false when the column is dropped.
  auto impute_numeric = [&](std::vector<double>& v, const std::string& name) {
    if (missing_fraction(v) > opt.sparse_threshold) {
      report.columns_dropped.push_back({name, "sparse>95%"});
      return false;
    }
    std::vector<double> observed;
    for (auto r : training_rows)
      if (!std::isnan(v[r])) observed.push_back(v[r]);
    if (observed.empty()) {
      report.columns_dropped.push_back({name, "unimputable"});
      return false;
    }
    const double fill = detail::median_of(std::move(observed));
    std::size_t count = 0;
    for (double& x : v)
      if (std::isnan(x)) {
        x = fill;
        ++count;
      }
    if (count) report.imputation_counts[name] = count;
    return true;
  };

  for (const auto& col : raw.predictors) {
    switch (col.type) {
      case RawColumnType::continuous:
      case RawColumnType::ph: {
        std::vector<double> v(n);
        for (std::size_t i = 0; i < n; ++i)
          v[i] = col.type == RawColumnType::ph ? parse_ph(col.values[i])
                                               : csv::parse_number(col.values[i]);
        if (!impute_numeric(v, col.name)) break;
        add_normalised_column(out, report, std::move(v), col.name, col.name, training_rows);
        break;
      }
      case RawColumnType::weather_lag: {
        char lag_suffix[16];
        std::snprintf(lag_suffix, sizeof lag_suffix, "_lag_%02d", col.lag);
        std::vector<double> v(n);
        std::string name = col.name, history = col.weather_variable + "_history";
        if (col.weather_variable == "dewpoint") {
          auto t = temperature_lags.find(col.lag);
          if (t == temperature_lags.end())
            throw DataError("dew point lag " + std::to_string(col.lag) +
                            " has no matching temperature lag");
          name = std::string("humidity") + lag_suffix;
          history = "humidity_history";
          for (std::size_t i = 0; i < n; ++i) {
            const double temp = csv::parse_number(t->second->values[i]);
            const double dew = csv::parse_number(col.values[i]);
            if (std::isnan(temp) || std::isnan(dew)) {
              v[i] = kSentinel;
              continue;
            }
            const auto rh = relative_humidity(temp, dew);
            v[i] = rh.percent;
            report.supersaturated_cells += rh.supersaturated ? 1 : 0;
          }
        } else {
          for (std::size_t i = 0; i < n; ++i) v[i] = csv::parse_number(col.values[i]);
        }
        if (!impute_numeric(v, name)) break;
        add_normalised_column(out, report, std::move(v), name, history, training_rows);
        break;
      }
      case RawColumnType::day_of_year: {
        std::vector<double> day(n);
        for (std::size_t i = 0; i < n; ++i) day[i] = csv::parse_number(col.values[i]);
        if (!impute_numeric(day, col.name)) break;
        std::vector<double> s(n), c(n);
        for (std::size_t i = 0; i < n; ++i) {
          const auto enc = encode_day_of_year(day[i]);
          s[i] = enc.sin_component;
          c[i] = enc.cos_component;
        }
        add_normalised_column(out, report, std::move(s), col.name + "_sin", col.name,
                              training_rows);
        add_normalised_column(out, report, std::move(c), col.name + "_cos", col.name,
                              training_rows);
        break;
      }
      case RawColumnType::categorical: {
        std::vector<std::string> v = col.values;
        std::size_t miss = 0;
        std::map<std::string, std::size_t> freq;
        for (auto r : training_rows) {
          if (csv::is_missing(v[r])) ++miss;
          else ++freq[v[r]];
        }
        if (static_cast<double>(miss) / static_cast<double>(training_rows.size()) >
            opt.sparse_threshold) {
          report.columns_dropped.push_back({col.name, "sparse>95%"});
          break;
        }
        if (freq.empty()) {
          report.columns_dropped.push_back({col.name, "unimputable"});
          break;
        }
        // Mode; std::map order makes ties resolve to the smallest label.
        std::string mode = freq.begin()->first;
        std::size_t best = 0;
        for (const auto& [label, count] : freq)
          if (count > best) {
            best = count;
            mode = label;
          }
        std::size_t count = 0;
        for (auto& x : v)
          if (csv::is_missing(x)) {
            x = mode;
            ++count;
          }
        if (count) report.imputation_counts[col.name] = count;
        const std::set<std::string> levels(v.begin(), v.end());
        if (levels.size() < 2) {
          report.columns_dropped.push_back({col.name, "constant"});
          break;
        }
        for (const auto& level : levels) {
          std::vector<double> ind(n);
          for (std::size_t i = 0; i < n; ++i) ind[i] = v[i] == level ? 1.0 : 0.0;
          out.add(std::move(ind), col.name + "=" + level, col.name, ColumnKind::one_hot_level,
                  col.name, level);
        }
        break;
      }
    }
  }

  if (out.columns.empty()) throw DataError("encode_and_normalise: no predictor columns survived");
  if (report.supersaturated_cells)
    report.warnings.push_back(std::to_string(report.supersaturated_cells) +
                              " weather cells had dew point above air temperature; relative "
                              "humidity clamped to 100");

  TabularDataset& ds = result.dataset;
  ds.x = Matrix(n, out.columns.size());
  for (std::size_t c = 0; c < out.columns.size(); ++c)
    for (std::size_t i = 0; i < n; ++i) ds.x(i, c) = out.columns[c][i];
  ds.schema = FeatureSchema(std::move(out.entries));

  auto responses = transform_responses(raw.concentration, raw.below_loq);
  ds.y_cont = std::move(responses.y_cont);
  ds.y_bin = std::move(responses.y_bin);
  ds.mask = std::move(responses.mask);
  ds.response_names = raw.response_names;
  ds.blocks.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    ds.blocks.push_back(block_label(raw.location_ids[i], raw.years[i]));
  return result;
}

inline nlohmann::json report_to_json(const PreprocessReport& r) {
  nlohmann::json dropped = nlohmann::json::array();
  for (const auto& d : r.columns_dropped) dropped.push_back({{"name", d.name}, {"reason", d.reason}});
  nlohmann::json stats = nlohmann::json::object();
  for (const auto& [name, s] : r.normalisation_stats) stats[name] = {{"mean", s.mean}, {"sd", s.sd}};
  return {{"format_version", 1},
          {"columns_dropped", dropped},
          {"imputation_counts", r.imputation_counts},
          {"normalisation_stats", stats},
          {"supersaturated_cells", r.supersaturated_cells},
          {"warnings", r.warnings}};
}

// ---------------------------------------------------------------------------
// Block-aware split

struct SplitOptions {
  double test_fraction = 0.20;
  double val_fraction_of_train = 0.20;
  std::uint64_t seed = 0;
};

namespace detail {

struct Block {
  std::vector<std::size_t> rows;
  std::vector<double> pos, neg;  // per response, observed cells only
  std::uint64_t order_key = 0;
};

/// Splits the blocks covering `rows` into (kept, held) with the held share
/// close to `fraction`. Blocks go largest first to whichever side keeps the
/// per-response positive rates of the two sides closer; a side stops
/// accepting blocks once it reaches its row target. Equal-sized blocks are
/// then swapped across sides while that narrows the gap further.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> partition_blocks(
    const std::vector<std::size_t>& rows, const std::vector<std::string>& labels,
    const Matrix& y_bin, const Matrix& mask, double fraction, Rng& rng) {
  const std::size_t k = mask.cols();
  std::map<std::string, Block> by_label;
  for (auto r : rows) {
    auto& b = by_label[labels[r]];
    if (b.rows.empty()) {
      b.pos.assign(k, 0.0);
      b.neg.assign(k, 0.0);
    }
    b.rows.push_back(r);
    for (std::size_t j = 0; j < k; ++j) {
      if (mask(r, j) == 0.0) continue;
      (y_bin(r, j) == 1.0 ? b.pos[j] : b.neg[j]) += 1.0;
    }
  }
  std::vector<Block> blocks;
  for (auto& [label, b] : by_label) {
    b.order_key = rng.next_u64();
    blocks.push_back(std::move(b));
  }
  std::sort(blocks.begin(), blocks.end(), [](const Block& a, const Block& b) {
    if (a.rows.size() != b.rows.size()) return a.rows.size() > b.rows.size();
    return a.order_key < b.order_key;
  });

  std::vector<double> total_pos(k, 0.0), total_neg(k, 0.0);
  for (const auto& b : blocks)
    for (std::size_t j = 0; j < k; ++j) {
      total_pos[j] += b.pos[j];
      total_neg[j] += b.neg[j];
    }
  const double n_total = static_cast<double>(rows.size());
  const auto held_target = static_cast<std::size_t>(std::llround(fraction * n_total));
  const std::size_t kept_target = rows.size() - held_target;

  // Smoothed positive rate per side; the prior keeps early, nearly empty
  // sides from dominating the comparison.
  constexpr double kPrior = 2.0;
  std::vector<double> overall(k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const double obs = total_pos[j] + total_neg[j];
    overall[j] = obs > 0.0 ? total_pos[j] / obs : 0.0;
  }
  struct Side {
    std::vector<double> pos, obs;
    std::size_t n = 0;
  };
  Side held{std::vector<double>(k, 0.0), std::vector<double>(k, 0.0)};
  Side kept_side = held;
  auto rate = [&](const Side& s, std::size_t j, const Block* add) {
    const double p = s.pos[j] + (add ? add->pos[j] : 0.0);
    const double o = s.obs[j] + (add ? add->pos[j] + add->neg[j] : 0.0);
    return (p + kPrior * overall[j]) / (o + kPrior);
  };
  // Summed absolute difference of held and kept positive rates.
  auto divergence = [&](const Block* to_held, const Block* to_kept) {
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j)
      d += std::abs(rate(held, j, to_held) - rate(kept_side, j, to_kept));
    return d;
  };
  auto add = [&](Side& s, const Block& b) {
    s.n += b.rows.size();
    for (std::size_t j = 0; j < k; ++j) {
      s.pos[j] += b.pos[j];
      s.obs[j] += b.pos[j] + b.neg[j];
    }
  };

  std::vector<char> in_held(blocks.size(), 0);
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    const auto& b = blocks[bi];
    const bool held_open = held.n < held_target;
    const bool kept_open = kept_side.n < kept_target;
    bool to_held;
    if (held_open && !kept_open) to_held = true;
    else if (!held_open) to_held = false;
    else {
      // Row quotas pace the choice: a side that is behind its share wins ties.
      const double held_lag = static_cast<double>(held_target - held.n) / std::max<double>(1.0, static_cast<double>(held_target));
      const double kept_lag = static_cast<double>(kept_target - kept_side.n) / std::max<double>(1.0, static_cast<double>(kept_target));
      const double dh = divergence(&b, nullptr), dk = divergence(nullptr, &b);
      to_held = dh < dk || (dh == dk && held_lag > kept_lag);
    }
    in_held[bi] = to_held;
    add(to_held ? held : kept_side, b);
  }

  // Refinement: swap equal-sized blocks across sides while that lowers the
  // divergence. Row counts are unchanged by construction.
  auto remove = [&](Side& s, const Block& b) {
    s.n -= b.rows.size();
    for (std::size_t j = 0; j < k; ++j) {
      s.pos[j] -= b.pos[j];
      s.obs[j] -= b.pos[j] + b.neg[j];
    }
  };
  double current = divergence(nullptr, nullptr);
  for (int pass = 0; pass < 20; ++pass) {
    bool improved = false;
    for (std::size_t a = 0; a < blocks.size(); ++a) {
      if (!in_held[a]) continue;
      for (std::size_t c = 0; c < blocks.size(); ++c) {
        if (in_held[c] || blocks[c].rows.size() != blocks[a].rows.size()) continue;
        remove(held, blocks[a]);
        remove(kept_side, blocks[c]);
        add(held, blocks[c]);
        add(kept_side, blocks[a]);
        const double d = divergence(nullptr, nullptr);
        if (d < current - 1e-12) {
          current = d;
          in_held[a] = 0;
          in_held[c] = 1;
          improved = true;
          break;
        }
        remove(held, blocks[c]);
        remove(kept_side, blocks[a]);
        add(held, blocks[a]);
        add(kept_side, blocks[c]);
      }
    }
    if (!improved) break;
  }

  std::vector<std::size_t> kept, held_out;
  for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
    auto& dest = in_held[bi] ? held_out : kept;
    dest.insert(dest.end(), blocks[bi].rows.begin(), blocks[bi].rows.end());
  }
  std::sort(kept.begin(), kept.end());
  std::sort(held_out.begin(), held_out.end());
  return {std::move(kept), std::move(held_out)};
}

}  // namespace detail

/// Assigns whole blocks to train/validation/test partitions.
inline SplitAssignment block_split(const std::vector<std::string>& blocks, const Matrix& y_bin,
                                   const Matrix& mask, const SplitOptions& opt = {}) {
  const std::size_t n = blocks.size();
  if (y_bin.rows() != n || mask.rows() != n)
    throw DataError("block_split: block labels and responses disagree on row count");
  if (!(opt.test_fraction > 0.0 && opt.test_fraction < 1.0) ||
      !(opt.val_fraction_of_train > 0.0 && opt.val_fraction_of_train < 1.0))
    throw ConfigError("block_split: fractions must lie in (0, 1)");
  const std::set<std::string> distinct(blocks.begin(), blocks.end());
  if (distinct.size() < 3)
    throw DataError("block_split: need at least 3 distinct blocks, found " +
                    std::to_string(distinct.size()));

  Rng rng(derive_seed(opt.seed, "block_split"));
  std::vector<std::size_t> all(n);
  for (std::size_t i = 0; i < n; ++i) all[i] = i;
  auto [train, test] = detail::partition_blocks(all, blocks, y_bin, mask, opt.test_fraction, rng);
  auto [fit, val] =
      detail::partition_blocks(train, blocks, y_bin, mask, opt.val_fraction_of_train, rng);
  if (test.empty() || val.empty() || fit.empty())
    throw DataError("block_split: too few blocks to fill train, validation and test partitions");
  return {std::move(train), std::move(val), std::move(test)};
}

inline SplitAssignment block_split(const TabularDataset& ds, const SplitOptions& opt = {}) {
  return block_split(ds.blocks, ds.y_bin, ds.mask, opt);
}

}  // namespace masktab
