#pragma once

// Masked regression and classification losses over partially observed
// multi-response targets. Each sample is normalised by its own observed count
// (plus epsilon); the batch loss is the mean over samples. Targets and
// predictions at masked cells are never read.

#include <algorithm>
#include <cmath>
#include <string>

#include "masktab/data_model.hpp"
#include "masktab/error.hpp"
#include "masktab/matrix.hpp"

namespace masktab {

inline constexpr double kLossEpsilon = 1e-7;

/// Non-owning view of one loss evaluation: targets, predictions, mask (B x K).
struct MaskedBatch {
  const Matrix& y;
  const Matrix& y_hat;
  const Matrix& mask;
  double epsilon = kLossEpsilon;
};

struct LossResult {
  double loss = 0.0;
  Matrix grad;  // d loss / d y_hat, B x K
};

namespace detail {

inline void check_batch(const MaskedBatch& b, const char* what) {
  require_same_shape(b.y, b.y_hat, what);
  require_same_shape(b.y, b.mask, what);
}

inline double observed_count(const Matrix& mask, std::size_t i) {
  double s = 0.0;
  for (double m : mask.row(i)) s += m;
  return s;
}

}  // namespace detail

inline LossResult masked_mse(const MaskedBatch& b) {
  detail::check_batch(b, "masked_mse");
  const std::size_t n = b.y.rows(), k = b.y.cols();
  LossResult r{0.0, Matrix(n, k, 0.0)};
  if (n == 0) return r;
  const double inv_batch = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double denom = detail::observed_count(b.mask, i) + b.epsilon;
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double m = b.mask(i, j);
      if (m == 0.0) continue;
      const double diff = b.y(i, j) - b.y_hat(i, j);
      sum += m * diff * diff;
      r.grad(i, j) = 2.0 * m * (b.y_hat(i, j) - b.y(i, j)) / denom * inv_batch;
    }
    r.loss += sum / denom;
  }
  r.loss *= inv_batch;
  return r;
}

/// Predictions are clipped to [epsilon, 1 - epsilon] before the logs; the
/// gradient is zero where the clip is active.
inline LossResult masked_bce(const MaskedBatch& b) {
  detail::check_batch(b, "masked_bce");
  const std::size_t n = b.y.rows(), k = b.y.cols();
  LossResult r{0.0, Matrix(n, k, 0.0)};
  if (n == 0) return r;
  const double inv_batch = 1.0 / static_cast<double>(n);
  const double lo = b.epsilon, hi = 1.0 - b.epsilon;
  for (std::size_t i = 0; i < n; ++i) {
    const double denom = detail::observed_count(b.mask, i) + b.epsilon;
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double m = b.mask(i, j);
      if (m == 0.0) continue;
      const double y = b.y(i, j);
      if (y != 0.0 && y != 1.0)
        throw DataError("masked_bce: observed target not in {0,1} at " + detail::cell(i, j));
      const double raw = b.y_hat(i, j);
      const double p = std::clamp(raw, lo, hi);
      sum += m * (y * std::log(p) + (1.0 - y) * std::log(1.0 - p));
      if (raw >= lo && raw <= hi)
        r.grad(i, j) = -m * (y / p - (1.0 - y) / (1.0 - p)) / denom * inv_batch;
    }
    r.loss += -sum / denom;
  }
  r.loss *= inv_batch;
  return r;
}

struct LossWeights {
  double regression = 1.0;
  double classification = 1.0;
};

struct CombinedLoss {
  double loss = 0.0;
  double regression_loss = 0.0;
  double classification_loss = 0.0;
  Matrix regression_grad;      // already scaled by its weight
  Matrix classification_grad;  // already scaled by its weight
};

/// Weighted sum of the two masked losses over the same rows.
inline CombinedLoss combined_loss(const MaskedBatch& regression, const MaskedBatch& classification,
                                  LossWeights w = {}) {
  if (regression.y.rows() != classification.y.rows())
    throw DataError("combined_loss: regression and classification batches differ in row count");
  auto mse = masked_mse(regression);
  auto bce = masked_bce(classification);
  for (double& g : mse.grad.data()) g *= w.regression;
  for (double& g : bce.grad.data()) g *= w.classification;
  return {w.regression * mse.loss + w.classification * bce.loss, mse.loss, bce.loss,
          std::move(mse.grad), std::move(bce.grad)};
}

}  // namespace masktab
