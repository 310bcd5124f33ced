#pragma once

// Per-response evaluation on observed cells and winner-takes-all ranking.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/matrix.hpp"

namespace masktab {

struct RegressionMetrics {
  std::optional<double> rmse;
  std::optional<double> r2;
};

struct ClassificationMetrics {
  std::optional<double> f1;
  std::optional<double> auc;
};

/// RMSE and R^2 over observed entries of one response. R^2 needs at least
/// two observed entries with nonzero spread.
inline RegressionMetrics regression_metrics(std::span<const double> y, std::span<const double> y_hat,
                                            std::span<const double> mask) {
  if (y.size() != y_hat.size() || y.size() != mask.size()) throw DataError("regression_metrics: length mismatch");
  double n = 0.0, mean = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i] != 0.0) {
      n += 1.0;
      mean += y[i];
    }
  RegressionMetrics out;
  if (n == 0.0) return out;
  mean /= n;
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i] != 0.0) {
      ss_res += (y[i] - y_hat[i]) * (y[i] - y_hat[i]);
      ss_tot += (y[i] - mean) * (y[i] - mean);
    }
  out.rmse = std::sqrt(ss_res / n);
  if (n >= 2.0 && ss_tot > 0.0) out.r2 = 1.0 - ss_res / ss_tot;
  return out;
}

/// Area under the ROC curve via the rank-sum statistic with mid-ranks for ties.
/// Returns nullopt unless both classes are present.
inline std::optional<double> auc_rank(std::span<const double> y, std::span<const double> p) {
  std::vector<std::pair<double, double>> v;  // (score, label)
  for (std::size_t i = 0; i < y.size(); ++i) v.emplace_back(p[i], y[i]);
  std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  double n_pos = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < v.size();) {
    std::size_t j = i;
    while (j < v.size() && v[j].first == v[i].first) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t t = i; t < j; ++t)
      if (v[t].second == 1.0) {
        rank_sum += mid_rank;
        n_pos += 1.0;
      }
    i = j;
  }
  const double n_neg = static_cast<double>(v.size()) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) return std::nullopt;
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

/// F1 at `threshold` and rank AUC over observed entries of one response.
/// Both are undefined (nullopt) when the observed labels hold a single class.
inline ClassificationMetrics classification_metrics(std::span<const double> y, std::span<const double> p,
                                                    std::span<const double> mask, double threshold = 0.5) {
  if (y.size() != p.size() || y.size() != mask.size()) throw DataError("classification_metrics: length mismatch");
  std::vector<double> ys, ps;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (mask[i] != 0.0) {
      ys.push_back(y[i]);
      ps.push_back(p[i]);
    }
  ClassificationMetrics out;
  out.auc = auc_rank(ys, ps);
  if (!out.auc) return out;
  double tp = 0.0, fp = 0.0, fn = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const bool pred = ps[i] >= threshold;
    const bool pos = ys[i] == 1.0;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  out.f1 = tp == 0.0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
  return out;
}

struct ResponseEval {
  std::string name;
  std::optional<double> rmse, r2, f1, auc;
  std::size_t n_observed = 0;
  std::size_t n_positive = 0;
  std::vector<std::string> flags;
};

struct MetricAverages {
  std::optional<double> rmse, r2, f1, auc;
};

inline constexpr int kEvalReportVersion = 1;

struct EvalReport {
  std::string model;
  std::vector<ResponseEval> per_response;
  MetricAverages averages;
  double threshold = 0.5;
  std::string scale = "log1p";
};

namespace detail {
inline std::optional<double> mean_defined(const std::vector<ResponseEval>& v,
                                          std::optional<double> ResponseEval::*field) {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : v)
    if (r.*field) {
      s += *(r.*field);
      ++n;
    }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}
}  // namespace detail

/// Evaluates every response on the given rows; averages skip undefined values.
inline EvalReport evaluate(const std::string& model, const TabularDataset& ds, const std::vector<std::size_t>& rows,
                           const Matrix& concentration_hat, const Matrix& probability_hat, double threshold = 0.5) {
  const std::size_t k = ds.n_responses();
  if (concentration_hat.rows() != rows.size() || probability_hat.rows() != rows.size() ||
      concentration_hat.cols() != k || probability_hat.cols() != k)
    throw DataError("evaluate: prediction shape does not match rows x responses");
  const Matrix yc = ds.y_cont.select_rows(rows), yb = ds.y_bin.select_rows(rows), m = ds.mask.select_rows(rows);
  EvalReport rep{model, {}, {}, threshold};
  for (std::size_t j = 0; j < k; ++j) {
    const auto y_c = yc.column(j), y_b = yb.column(j), mk = m.column(j);
    const auto c_hat = concentration_hat.column(j), p_hat = probability_hat.column(j);
    ResponseEval r;
    r.name = ds.response_names.at(j);
    for (std::size_t i = 0; i < rows.size(); ++i)
      if (mk[i] != 0.0) {
        ++r.n_observed;
        r.n_positive += y_b[i] == 1.0;
      }
    const auto reg = regression_metrics(y_c, c_hat, mk);
    const auto cls = classification_metrics(y_b, p_hat, mk, threshold);
    r.rmse = reg.rmse;
    r.r2 = reg.r2;
    r.f1 = cls.f1;
    r.auc = cls.auc;
    if (r.n_observed == 0) r.flags.push_back("no observed test entries");
    else if (!r.r2) r.flags.push_back("r2 undefined: observed variance is zero or fewer than 2 entries");
    if (r.n_observed > 0 && !r.auc) r.flags.push_back("f1/auc undefined: single class in evaluation rows");
    rep.per_response.push_back(std::move(r));
  }
  rep.averages = {detail::mean_defined(rep.per_response, &ResponseEval::rmse),
                  detail::mean_defined(rep.per_response, &ResponseEval::r2),
                  detail::mean_defined(rep.per_response, &ResponseEval::f1),
                  detail::mean_defined(rep.per_response, &ResponseEval::auc)};
  return rep;
}

namespace detail {
inline nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }
inline std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}
}  // namespace detail

inline nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : r.per_response)
    per.push_back({{"response", e.name},
                   {"rmse", detail::opt(e.rmse)},
                   {"r2", detail::opt(e.r2)},
                   {"f1", detail::opt(e.f1)},
                   {"auc", detail::opt(e.auc)},
                   {"n_observed", e.n_observed},
                   {"n_positive", e.n_positive},
                   {"flags", e.flags}});
  return {{"format", "masktab-eval"},
          {"version", kEvalReportVersion},
          {"model", r.model},
          {"scale", r.scale},
          {"threshold", r.threshold},
          {"averages",
           {{"rmse", detail::opt(r.averages.rmse)},
            {"r2", detail::opt(r.averages.r2)},
            {"f1", detail::opt(r.averages.f1)},
            {"auc", detail::opt(r.averages.auc)}}},
          {"per_response", per}};
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "masktab-eval") throw DataError("not a masktab evaluation report");
  if (j.at("version").get<int>() != kEvalReportVersion) throw DataError("unsupported evaluation report version");
  EvalReport r;
  r.model = j.at("model").get<std::string>();
  r.scale = j.at("scale").get<std::string>();
  r.threshold = j.at("threshold").get<double>();
  const auto& a = j.at("averages");
  r.averages = {detail::opt_from(a.at("rmse")), detail::opt_from(a.at("r2")), detail::opt_from(a.at("f1")),
                detail::opt_from(a.at("auc"))};
  for (const auto& e : j.at("per_response")) {
    ResponseEval x;
    x.name = e.at("response").get<std::string>();
    x.rmse = detail::opt_from(e.at("rmse"));
    x.r2 = detail::opt_from(e.at("r2"));
    x.f1 = detail::opt_from(e.at("f1"));
    x.auc = detail::opt_from(e.at("auc"));
    x.n_observed = e.at("n_observed").get<std::size_t>();
    x.n_positive = e.at("n_positive").get<std::size_t>();
    x.flags = e.at("flags").get<std::vector<std::string>>();
    r.per_response.push_back(std::move(x));
  }
  return r;
}

// ---------------------------------------------------------------------------
// Winner-takes-all

enum class Metric { rmse, r2, f1, auc };

inline constexpr std::array<Metric, 4> kMetricOrder{Metric::rmse, Metric::r2, Metric::f1, Metric::auc};

inline const char* to_string(Metric m) {
  switch (m) {
    case Metric::rmse: return "rmse";
    case Metric::r2: return "r2";
    case Metric::f1: return "f1";
    case Metric::auc: return "auc";
  }
  return "?";
}

inline std::optional<double> metric_value(const ResponseEval& r, Metric m) {
  switch (m) {
    case Metric::rmse: return r.rmse;
    case Metric::r2: return r.r2;
    case Metric::f1: return r.f1;
    case Metric::auc: return r.auc;
  }
  return std::nullopt;
}

struct PairWinner {
  std::string response;
  Metric metric;
  std::string winner;
  bool tie = false;
};

struct WinnerRanking {
  std::vector<std::string> models;  // lexicographic
  std::map<std::string, std::size_t> wins;
  std::map<std::string, double> percent;
  std::vector<PairWinner> pairs;
  std::size_t total = 0;
};

/// One winner per (response, metric) pair with at least one defined value:
/// lowest RMSE, highest R^2/F1/AUC. Exact ties go to the lexicographically
/// smallest model name and are flagged.
inline WinnerRanking winner_ranking(const std::vector<EvalReport>& reports) {
  if (reports.empty()) throw DataError("winner_ranking: no reports");
  std::vector<const EvalReport*> sorted;
  for (const auto& r : reports) sorted.push_back(&r);
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->model < b->model; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i]->model == sorted[i - 1]->model) throw DataError("winner_ranking: duplicate model '" + sorted[i]->model + "'");
  const std::size_t k = sorted.front()->per_response.size();
  for (auto* r : sorted) {
    if (r->per_response.size() != k) throw DataError("winner_ranking: reports cover different responses");
    for (std::size_t j = 0; j < k; ++j)
      if (r->per_response[j].name != sorted.front()->per_response[j].name)
        throw DataError("winner_ranking: response sets are not aligned");
  }

  WinnerRanking out;
  for (auto* r : sorted) {
    out.models.push_back(r->model);
    out.wins[r->model] = 0;
  }
  for (std::size_t j = 0; j < k; ++j)
    for (Metric m : kMetricOrder) {
      const EvalReport* best = nullptr;
      double best_v = 0.0;
      bool tie = false;
      for (auto* r : sorted) {
        const auto v = metric_value(r->per_response[j], m);
        if (!v) continue;
        const bool better = !best || (m == Metric::rmse ? *v < best_v : *v > best_v);
        if (best && *v == best_v) tie = true;
        if (better) {
          best = r;
          best_v = *v;
          tie = false;
        }
      }
      if (!best) continue;
      ++out.wins[best->model];
      ++out.total;
      out.pairs.push_back({sorted.front()->per_response[j].name, m, best->model, tie});
    }
  if (out.total == 0) throw DataError("winner_ranking: no (response, metric) pair has a defined value");
  for (const auto& [model, w] : out.wins)
    out.percent[model] = 100.0 * static_cast<double>(w) / static_cast<double>(out.total);
  return out;
}

inline nlohmann::json winner_ranking_to_json(const WinnerRanking& w) {
  nlohmann::json pairs = nlohmann::json::array();
  for (const auto& p : w.pairs)
    pairs.push_back({{"response", p.response}, {"metric", to_string(p.metric)}, {"winner", p.winner}, {"tie", p.tie}});
  return {{"models", w.models}, {"wins", w.wins}, {"percent", w.percent}, {"total", w.total}, {"pairs", pairs}};
}

}  // namespace masktab
