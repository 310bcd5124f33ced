#include <gtest/gtest.h>

#include <cmath>

#include "test_support.hpp"

using namespace masktab;
using masktab::testing::check_loss_gradient;

TEST(MaskedMse, HandExample) {
  // Observed cells: (1-1)^2 + (3-5)^2 = 4 over 2 observed -> 2.
  const auto y = Matrix::from_rows({{1, 2, 3}});
  const auto y_hat = Matrix::from_rows({{1, 2, 5}});
  const auto m = Matrix::from_rows({{1, 0, 1}});
  const auto r = masked_mse({y, y_hat, m});
  EXPECT_NEAR(r.loss, 2.0, 1e-6);
  EXPECT_NEAR(r.loss, 4.0 / (2.0 + kLossEpsilon), 1e-15);
  EXPECT_EQ(r.grad(0, 1), 0.0);
  EXPECT_NEAR(r.grad(0, 2), 2.0 * 2.0 / (2.0 + kLossEpsilon), 1e-12);
}

TEST(MaskedBce, HandExample) {
  const auto y = Matrix::from_rows({{1}});
  const auto p = Matrix::from_rows({{0.5}});
  const auto m = Matrix::from_rows({{1}});
  EXPECT_NEAR(masked_bce({y, p, m}).loss, std::log(2.0), 1e-6);
}

TEST(MaskedLoss, FullyMaskedRowContributesZero) {
  const auto y = Matrix::from_rows({{1, 0}, {0, 1}});
  const auto p = Matrix::from_rows({{0.3, 0.9}, {0.2, 0.4}});
  const auto m = Matrix::from_rows({{0, 0}, {1, 1}});
  const auto r = masked_bce({y, p, m});
  const double row1 = -(std::log(0.8) + std::log(0.4)) / (2.0 + kLossEpsilon);
  EXPECT_NEAR(r.loss, row1 / 2.0, 1e-15);  // averaged over both rows
  EXPECT_EQ(r.grad(0, 0), 0.0);
  EXPECT_EQ(r.grad(0, 1), 0.0);
  const auto all_masked = masked_mse({y, p, Matrix(2, 2, 0.0)});
  EXPECT_EQ(all_masked.loss, 0.0);
}

TEST(MaskedBce, ClippingKeepsLossFiniteAndZeroesGradient) {
  const auto y = Matrix::from_rows({{1, 0, 1}});
  const auto p = Matrix::from_rows({{0.0, 1.0, 1e-9}});
  const auto m = Matrix(1, 3, 1.0);
  const auto r = masked_bce({y, p, m});
  EXPECT_TRUE(std::isfinite(r.loss));
  // All three cells clip to the boundary: each contributes -ln(eps).
  EXPECT_NEAR(r.loss, -3.0 * std::log(kLossEpsilon) / (3.0 + kLossEpsilon), 1e-9);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(r.grad(0, j), 0.0);
  // Exactly at the boundary the gradient passes through.
  const auto edge = Matrix::from_rows({{kLossEpsilon, 1.0 - kLossEpsilon, 0.5}});
  const auto e = masked_bce({y, edge, m});
  EXPECT_NE(e.grad(0, 0), 0.0);
  EXPECT_NE(e.grad(0, 1), 0.0);
}

TEST(MaskedBce, NonBinaryObservedTargetRejected) {
  const auto y = Matrix::from_rows({{0.5}});
  const auto p = Matrix::from_rows({{0.5}});
  EXPECT_THROW(masked_bce({y, p, Matrix(1, 1, 1.0)}), DataError);
  EXPECT_NO_THROW(masked_bce({y, p, Matrix(1, 1, 0.0)}));
}

TEST(MaskedLoss, ShapeMismatchRejected) {
  EXPECT_THROW(masked_mse({Matrix(2, 2), Matrix(2, 3), Matrix(2, 2)}), DataError);
  EXPECT_THROW(combined_loss({Matrix(2, 2), Matrix(2, 2), Matrix(2, 2)}, {Matrix(3, 2), Matrix(3, 2), Matrix(3, 2)}),
               DataError);
}

TEST(MaskedLoss, GradientsMatchFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed)
    for (double frac : {0.0, 0.5, 1.0})
      for (bool bce : {false, true}) {
        const auto r = check_loss_gradient(bce, seed, frac);
        EXPECT_LT(r.max_rel_err, 1e-4) << (bce ? "bce" : "mse") << " seed " << seed << " masked " << frac;
        EXPECT_EQ(r.skipped, 0u);
      }
}

TEST(MaskedLoss, MaskedTargetsAreInvisible) {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 6, k = 4;
    const Matrix mask = masktab::testing::random_mask(n, k, 0.5, rng);
    Matrix yc = masktab::testing::random_matrix(n, k, rng, 0.0, 3.0);
    Matrix yb(n, k);
    for (double& v : yb.data()) v = static_cast<double>(rng.below(2));
    const Matrix c_hat = masktab::testing::random_matrix(n, k, rng, 0.0, 3.0);
    const Matrix p_hat = masktab::testing::random_matrix(n, k, rng, 0.01, 0.99);
    const auto before = combined_loss({yc, c_hat, mask}, {yb, p_hat, mask});
    for (std::size_t i = 0; i < yc.size(); ++i)
      if (mask.data()[i] == 0.0) {
        yc.data()[i] = rng.uniform(-100.0, 100.0);
        yb.data()[i] = std::nan("");
      }
    const auto after = combined_loss({yc, c_hat, mask}, {yb, p_hat, mask});
    EXPECT_EQ(before.loss, after.loss);
    EXPECT_EQ(before.regression_grad, after.regression_grad);
    EXPECT_EQ(before.classification_grad, after.classification_grad);
  }
}

TEST(MaskedLoss, FullyObservedMatchesUnmaskedFormulas) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 1 + rng.below(10), k = 1 + rng.below(6);
    const Matrix y = masktab::testing::random_matrix(n, k, rng, 0.0, 3.0);
    const Matrix y_hat = masktab::testing::random_matrix(n, k, rng, 0.0, 3.0);
    Matrix yb(n, k);
    for (double& v : yb.data()) v = static_cast<double>(rng.below(2));
    const Matrix p = masktab::testing::random_matrix(n, k, rng, 0.01, 0.99);
    const Matrix ones(n, k, 1.0);
    double mse = 0.0, bce = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
      mse += std::pow(y.data()[i] - y_hat.data()[i], 2);
      bce -= yb.data()[i] * std::log(p.data()[i]) + (1 - yb.data()[i]) * std::log(1 - p.data()[i]);
    }
    // Unmasked means over n*k cells, rescaled for the k + eps denominator.
    const double shift = static_cast<double>(k) / (static_cast<double>(k) + kLossEpsilon);
    mse = mse / static_cast<double>(n * k) * shift;
    bce = bce / static_cast<double>(n * k) * shift;
    EXPECT_LT(masktab::testing::rel_err(masked_mse({y, y_hat, ones}).loss, mse, 1e-300), 1e-9);
    EXPECT_LT(masktab::testing::rel_err(masked_bce({yb, p, ones}).loss, bce, 1e-300), 1e-9);
  }
}

TEST(CombinedLoss, WeightsScaleTermsAndGradients) {
  const auto y = Matrix::from_rows({{1.0, 0.0}});
  const auto c = Matrix::from_rows({{0.5, 0.5}});
  const auto m = Matrix(1, 2, 1.0);
  const auto base = combined_loss({y, c, m}, {y, c, m});
  EXPECT_NEAR(base.loss, base.regression_loss + base.classification_loss, 1e-15);
  const auto w = combined_loss({y, c, m}, {y, c, m}, {2.0, 0.5});
  EXPECT_NEAR(w.loss, 2.0 * base.regression_loss + 0.5 * base.classification_loss, 1e-15);
  EXPECT_NEAR(w.regression_grad(0, 0), 2.0 * base.regression_grad(0, 0), 1e-15);
  EXPECT_NEAR(w.classification_grad(0, 1), 0.5 * base.classification_grad(0, 1), 1e-15);
}
