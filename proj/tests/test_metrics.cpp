#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace masktab;

namespace {

using Vec = std::vector<double>;

double brute_force_auc(const Vec& y, const Vec& p) {
  double score = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i)
    for (std::size_t j = 0; j < y.size(); ++j) {
      if (y[i] != 1.0 || y[j] != 0.0) continue;
      pairs += 1.0;
      score += p[i] > p[j] ? 1.0 : (p[i] == p[j] ? 0.5 : 0.0);
    }
  return score / pairs;
}

ResponseEval response(std::string name, std::optional<double> rmse, std::optional<double> r2,
                      std::optional<double> f1, std::optional<double> auc) {
  ResponseEval r;
  r.name = std::move(name);
  r.rmse = rmse;
  r.r2 = r2;
  r.f1 = f1;
  r.auc = auc;
  return r;
}

EvalReport report(std::string model, std::vector<ResponseEval> rs) {
  EvalReport e;
  e.model = std::move(model);
  e.per_response = std::move(rs);
  return e;
}

}  // namespace

TEST(Regression, HandExample) {
  const Vec y{0, 1, 2, 3}, y_hat{0, 1, 2, 7}, m{1, 1, 1, 1};
  const auto r = regression_metrics(y, y_hat, m);
  EXPECT_NEAR(*r.rmse, 2.0, 1e-12);
  EXPECT_NEAR(*r.r2, -2.2, 1e-12);
}

TEST(Regression, PerfectFitAndMaskedEntries) {
  const Vec y{0.5, 1, 2, 3}, y_hat{0.5, 1, 2, 100}, m{1, 1, 1, 0};
  const auto r = regression_metrics(y, y_hat, m);
  EXPECT_EQ(*r.rmse, 0.0);
  EXPECT_EQ(*r.r2, 1.0);
}

TEST(Regression, UndefinedCases) {
  const Vec y{2, 2, 2}, y_hat{1, 2, 3};
  EXPECT_FALSE(regression_metrics(y, y_hat, Vec{1, 1, 1}).r2);  // zero spread
  EXPECT_TRUE(regression_metrics(y, y_hat, Vec{1, 1, 1}).rmse);
  EXPECT_FALSE(regression_metrics(y, y_hat, Vec{0, 0, 0}).rmse);
  EXPECT_FALSE(regression_metrics(Vec{1, 2}, Vec{1, 2}, Vec{1, 0}).r2);
  EXPECT_THROW(regression_metrics(Vec{1, 2}, Vec{1}, Vec{1, 1}), DataError);
}

TEST(Classification, HandExample) {
  const Vec y{1, 0, 1, 0}, p{0.9, 0.8, 0.7, 0.1}, m{1, 1, 1, 1};
  const auto c = classification_metrics(y, p, m);
  EXPECT_DOUBLE_EQ(*c.auc, 0.75);
  EXPECT_NEAR(*c.f1, 0.8, 1e-12);
}

TEST(Classification, SeparatedTiedAndSingleClass) {
  const Vec y{0, 0, 1, 1}, m{1, 1, 1, 1};
  const auto sep = classification_metrics(y, Vec{0.1, 0.2, 0.8, 0.9}, m);
  EXPECT_EQ(*sep.auc, 1.0);
  EXPECT_EQ(*sep.f1, 1.0);
  EXPECT_EQ(*classification_metrics(y, Vec{0.3, 0.3, 0.3, 0.3}, m).auc, 0.5);
  const auto single = classification_metrics(Vec{1, 1, 0}, Vec{0.2, 0.9, 0.4}, Vec{1, 1, 0});
  EXPECT_FALSE(single.auc);
  EXPECT_FALSE(single.f1);
  // No true positives: precision undefined, F1 reported as 0.
  EXPECT_EQ(*classification_metrics(y, Vec{0.1, 0.2, 0.3, 0.4}, m).f1, 0.0);
}

TEST(Classification, ThresholdIsInclusive) {
  const Vec y{0, 1}, m{1, 1};
  EXPECT_EQ(*classification_metrics(y, Vec{0.1, 0.5}, m).f1, 1.0);
  EXPECT_EQ(*classification_metrics(y, Vec{0.1, 0.5}, m, 0.6).f1, 0.0);
}

TEST(Auc, MatchesBruteForceExactly) {
  Rng rng(2024);
  for (int inst = 0; inst < 200; ++inst) {
    const std::size_t n = 2 + rng.below(49);
    Vec y(n), p(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<double>(rng.below(2));
      p[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
    }
    y[0] = 1.0;
    y[1] = 0.0;
    EXPECT_EQ(*auc_rank(y, p), brute_force_auc(y, p)) << "instance " << inst;
  }
}

TEST(Auc, InvariantUnderMonotoneTransform) {
  Rng rng(7);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 30;
    Vec y(n), p(n), q(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<double>(i % 2);
      p[i] = rng.uniform(-3, 3);
      q[i] = 1.0 / (1.0 + std::exp(-2.0 * p[i])) + 5.0;
    }
    EXPECT_EQ(*auc_rank(y, p), *auc_rank(y, q));
  }
}

TEST(Auc, RangeProperty) {
  Rng rng(9);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + rng.below(30);
    Vec y(n), p(n), m(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = static_cast<double>(rng.below(2));
      p[i] = rng.uniform();
    }
    const auto c = classification_metrics(y, p, m);
    if (!c.auc) continue;
    EXPECT_GE(*c.auc, 0.0);
    EXPECT_LE(*c.auc, 1.0);
    EXPECT_GE(*c.f1, 0.0);
    EXPECT_LE(*c.f1, 1.0);
  }
}

TEST(Evaluate, FlagsAndAverages) {
  TabularDataset ds;
  ds.response_names = {"a", "b", "c"};
  ds.y_cont = Matrix::from_rows({{0, 1, 0}, {1, 1, 0}, {2, 0, 0}});
  ds.y_bin = Matrix::from_rows({{0, 1, 0}, {1, 1, 0}, {1, 0, 0}});
  ds.mask = Matrix::from_rows({{1, 1, 0}, {1, 1, 0}, {1, 0, 0}});
  ds.x = Matrix(3, 1);
  const std::vector<std::size_t> rows{0, 1, 2};
  const auto c_hat = Matrix::from_rows({{0, 1, 0}, {1, 1, 0}, {2, 0, 0}});
  const auto p_hat = Matrix::from_rows({{0.1, 0.9, 0.5}, {0.9, 0.9, 0.5}, {0.8, 0.1, 0.5}});
  const auto rep = evaluate("m", ds, rows, c_hat, p_hat);
  ASSERT_EQ(rep.per_response.size(), 3u);
  EXPECT_EQ(*rep.per_response[0].r2, 1.0);
  EXPECT_EQ(*rep.per_response[0].auc, 1.0);
  EXPECT_EQ(rep.per_response[0].n_positive, 2u);
  EXPECT_FALSE(rep.per_response[1].r2);  // observed y_cont {1,1} has no spread
  EXPECT_FALSE(rep.per_response[1].auc);
  EXPECT_EQ(rep.per_response[1].flags.size(), 2u);
  EXPECT_EQ(rep.per_response[2].n_observed, 0u);
  EXPECT_FALSE(rep.per_response[2].rmse);
  EXPECT_EQ(*rep.averages.r2, 1.0);                 // only response a is defined
  EXPECT_EQ(*rep.averages.rmse, 0.0);
  EXPECT_THROW(evaluate("m", ds, rows, Matrix(2, 3), p_hat), DataError);

  const auto back = eval_report_from_json(eval_report_to_json(rep));
  EXPECT_EQ(eval_report_to_json(back), eval_report_to_json(rep));
}

TEST(Winners, StrictlyBetterModelTakesAll) {
  std::vector<ResponseEval> good, bad;
  for (int j = 0; j < 24; ++j) {
    const auto n = "r" + std::to_string(j);
    good.push_back(response(n, 0.1, 0.9, 0.9, 0.95));
    bad.push_back(response(n, 0.5, 0.2, 0.5, 0.6));
  }
  const auto w = winner_ranking({report("zeta", good), report("alpha", bad)});
  EXPECT_EQ(w.total, 96u);
  EXPECT_EQ(w.wins.at("zeta"), 96u);
  EXPECT_EQ(w.percent.at("zeta"), 100.0);
  EXPECT_EQ(w.percent.at("alpha"), 0.0);
}

TEST(Winners, ExactTieGoesToSmallestNameAndIsFlagged) {
  const auto w = winner_ranking({report("b", {response("r", 1.0, 0.5, 0.5, 0.7)}),
                                 report("a", {response("r", 1.0, 0.4, 0.6, 0.7)})});
  ASSERT_EQ(w.pairs.size(), 4u);
  EXPECT_EQ(w.pairs[0].winner, "a");  // rmse tie
  EXPECT_TRUE(w.pairs[0].tie);
  EXPECT_EQ(w.pairs[1].winner, "b");  // r2
  EXPECT_FALSE(w.pairs[1].tie);
  EXPECT_EQ(w.pairs[2].winner, "a");  // f1
  EXPECT_EQ(w.pairs[3].winner, "a");  // auc tie
  EXPECT_TRUE(w.pairs[3].tie);
}

TEST(Winners, PercentagesSumToHundredAndSkipUndefined) {
  Rng rng(3);
  std::vector<EvalReport> reps;
  for (const char* m : {"baseline", "pretrained-frozen", "pretrained-unfrozen"}) {
    std::vector<ResponseEval> rs;
    for (int j = 0; j < 24; ++j)
      rs.push_back(response("r" + std::to_string(j), rng.uniform(), j == 3 ? std::nullopt : std::optional(rng.uniform()),
                            rng.uniform(), rng.uniform()));
    reps.push_back(report(m, rs));
  }
  const auto w = winner_ranking(reps);
  EXPECT_EQ(w.total, 95u);  // r3 has no defined R^2 anywhere
  double sum = 0.0;
  std::size_t wins = 0;
  for (const auto& [m, p] : w.percent) sum += p;
  for (const auto& [m, n] : w.wins) wins += n;
  EXPECT_NEAR(sum, 100.0, 1e-9);
  EXPECT_EQ(wins, w.total);
}

TEST(Winners, Errors) {
  EXPECT_THROW(winner_ranking({}), DataError);
  EXPECT_THROW(winner_ranking({report("a", {response("r", 1, 1, 1, 1)}), report("a", {response("r", 1, 1, 1, 1)})}),
               DataError);
  EXPECT_THROW(winner_ranking({report("a", {response("r", 1, 1, 1, 1)}), report("b", {response("s", 1, 1, 1, 1)})}),
               DataError);
  const std::nullopt_t none = std::nullopt;
  EXPECT_THROW(winner_ranking({report("a", {response("r", none, none, none, none)})}), DataError);
}
