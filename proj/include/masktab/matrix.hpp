#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "masktab/error.hpp"

namespace masktab {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t r = 0; r < m.rows_; ++r) {
      if (rows[r].size() != m.cols_) throw DataError("ragged matrix literal");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    assert(r < rows_ && c < cols_);
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  std::vector<double> column(std::size_t c) const {
    std::vector<double> out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  Matrix select_rows(std::span<const std::size_t> idx) const {
    Matrix out(idx.size(), cols_);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      assert(idx[i] < rows_);
      std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(idx[i] * cols_), cols_,
                  out.data_.begin() + static_cast<std::ptrdiff_t>(i * cols_));
    }
    return out;
  }

  Matrix transposed() const {
    Matrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  bool same_shape(const Matrix& o) const noexcept { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* what) {
  if (!a.same_shape(b))
    throw DataError(std::string(what) + ": shape mismatch " + shape_string(a) + " vs " +
                    shape_string(b));
}

/// out = a * b^T, where b is stored (n x k) and a is (m x k). Uses a transposed
/// copy of b so the inner loop is a contiguous axpy.
inline void matmul_transb(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.cols())
    throw DataError("matmul: inner dimension mismatch " + shape_string(a) + " * " +
                    shape_string(b) + "^T");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  const Matrix bt = b.transposed();  // k x n
  if (out.rows() != m || out.cols() != n) out = Matrix(m, n);
  else out.fill(0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = bt.row(p).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
}

/// out = a * b with a (m x k), b (k x n).
inline void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows())
    throw DataError("matmul: inner dimension mismatch " + shape_string(a) + " * " +
                    shape_string(b));
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (out.rows() != m || out.cols() != n) out = Matrix(m, n);
  else out.fill(0.0);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.row(i).data();
    const double* ai = a.row(i).data();
    for (std::size_t p = 0; p < k; ++p) {
      const double s = ai[p];
      if (s == 0.0) continue;
      const double* bp = b.row(p).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * bp[j];
    }
  }
}

/// out += a^T * b with a (m x n), b (m x k); out is (n x k).
inline void matmul_transa_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  assert(a.rows() == b.rows() && out.rows() == a.cols() && out.cols() == b.cols());
  const std::size_t m = a.rows(), n = a.cols(), k = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a.row(i).data();
    const double* bi = b.row(i).data();
    for (std::size_t r = 0; r < n; ++r) {
      const double s = ai[r];
      if (s == 0.0) continue;
      double* o = out.row(r).data();
      for (std::size_t j = 0; j < k; ++j) o[j] += s * bi[j];
    }
  }
}

}  // namespace masktab
