#pragma once

// Dense small-matrix linear algebra used throughout the library.
//
// Everything here works on row-major storage and plain std::vector<double>
// vectors. Sizes are tiny (state dimension <= 6, constraint count <= 2,
// network widths <= a few hundred), so no blocking or BLAS is attempted.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <span>
#include <vector>

#include "pnode/error.hpp"

namespace pnode {

using Vector = std::vector<double>;

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, Vector entries)
      : rows_(rows), cols_(cols), data_(std::move(entries)) {
    if (data_.size() != rows_ * cols_) throw DimensionError("Matrix: entry count does not match shape");
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ ? rows.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<const double> entries() const noexcept { return data_; }
  std::span<double> entries() noexcept { return data_; }

  // Appends one row; the first append on an empty 0x0 matrix fixes the column count.
  void append_row(std::span<const double> r) {
    if (rows_ == 0 && cols_ == 0) cols_ = r.size();
    if (r.size() != cols_) throw DimensionError("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), r.begin(), r.end());
    ++rows_;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  Vector data_;
};

// ---------------------------------------------------------------------------
// Vector helpers

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(std::span<const double> a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline bool all_finite(std::span<const double> a) {
  return std::all_of(a.begin(), a.end(), [](double v) { return std::isfinite(v); });
}

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw DimensionError("axpy: length mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline Vector subtract(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("subtract: length mismatch");
  Vector r(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) r[i] = a[i] - b[i];
  return r;
}

// ---------------------------------------------------------------------------
// Matrix-vector kernels

// out[i] = sum_j a[i*cols + j] * x[j]. Shared by matvec and the autodiff tape
// so both paths produce bit-identical results.
inline void matvec_kernel(std::span<const double> a, std::size_t rows, std::size_t cols,
                          std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < rows; ++i) {
    const double* ai = a.data() + i * cols;
    double s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += ai[j] * x[j];
    out[i] = s;
  }
}

inline Vector matvec(const Matrix& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw DimensionError("matvec: A.cols != x.len");
  Vector out(a.rows());
  matvec_kernel(a.entries(), a.rows(), a.cols(), x, out);
  return out;
}

// A^T y
inline Vector matvec_transposed(const Matrix& a, std::span<const double> y) {
  if (a.rows() != y.size()) throw DimensionError("matvec_transposed: A.rows != y.len");
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto r = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += r[j] * y[i];
  }
  return out;
}

// A B^T
inline Matrix multiply_abt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("multiply_abt: inner dimension mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) out(i, j) = dot(a.row(i), b.row(j));
  return out;
}

inline Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw DimensionError("multiply: inner dimension mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// ---------------------------------------------------------------------------
// Factorizations

// Cholesky factor L (lower) of a symmetric positive-definite matrix, A = L L^T.
class Cholesky {
 public:
  explicit Cholesky(const Matrix& a) : l_(a.rows(), a.cols()) {
    if (a.rows() != a.cols()) throw DimensionError("Cholesky: matrix is not square");
    const std::size_t n = a.rows();
    double scale = 0.0;
    for (double v : a.entries()) {
      if (!std::isfinite(v)) throw NonFiniteError("Cholesky: non-finite matrix entry");
      scale = std::max(scale, std::abs(v));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (std::abs(a(i, j) - a(j, i)) > 1e-12 * scale)
          throw Error("Cholesky: matrix is not symmetric within 1e-12 relative");

    for (std::size_t j = 0; j < n; ++j) {
      double d = a(j, j);
      for (std::size_t k = 0; k < j; ++k) d -= l_(j, k) * l_(j, k);
      if (!(d > 0.0)) throw SingularMatrixError(j, "Cholesky: non-positive pivot");
      const double ljj = std::sqrt(d);
      l_(j, j) = ljj;
      for (std::size_t i = j + 1; i < n; ++i) {
        double s = a(i, j);
        for (std::size_t k = 0; k < j; ++k) s -= l_(i, k) * l_(j, k);
        l_(i, j) = s / ljj;
      }
    }
  }

  std::size_t size() const noexcept { return l_.rows(); }

  Vector solve(std::span<const double> b) const {
    const std::size_t n = l_.rows();
    if (b.size() != n) throw DimensionError("Cholesky::solve: rhs length mismatch");
    Vector x(b.begin(), b.end());
    for (std::size_t i = 0; i < n; ++i) {
      double s = x[i];
      for (std::size_t k = 0; k < i; ++k) s -= l_(i, k) * x[k];
      x[i] = s / l_(i, i);
    }
    for (std::size_t ii = n; ii-- > 0;) {
      double s = x[ii];
      for (std::size_t k = ii + 1; k < n; ++k) s -= l_(k, ii) * x[k];
      x[ii] = s / l_(ii, ii);
    }
    return x;
  }

 private:
  Matrix l_;
};

inline Vector solve_spd(const Matrix& a, std::span<const double> b) {
  if (a.rows() != b.size()) throw DimensionError("solve_spd: A.rows != b.len");
  return Cholesky(a).solve(b);
}

// LU with partial pivoting for the few small non-symmetric systems that show up
// in implicit differentiation of the fixed-Jacobian projection.
inline Vector solve_general(Matrix a, std::span<const double> b) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DimensionError("solve_general: matrix is not square");
  if (b.size() != n) throw DimensionError("solve_general: rhs length mismatch");
  Vector x(b.begin(), b.end());
  double scale = 0.0;
  for (double v : a.entries()) scale = std::max(scale, std::abs(v));
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(a(i, k)) > std::abs(a(p, k))) p = i;
    if (!(std::abs(a(p, k)) > 1e-14 * scale)) throw SingularMatrixError(k, "solve_general: zero pivot");
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(k, j), a(p, j));
      std::swap(x[k], x[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      const double f = a(i, k) / a(k, k);
      for (std::size_t j = k; j < n; ++j) a(i, j) -= f * a(k, j);
      x[i] -= f * x[k];
    }
  }
  for (std::size_t ii = n; ii-- > 0;) {
    double s = x[ii];
    for (std::size_t j = ii + 1; j < n; ++j) s -= a(ii, j) * x[j];
    x[ii] = s / a(ii, ii);
  }
  return x;
}

// ---------------------------------------------------------------------------
// Finite differences

using VectorFunction = std::function<Vector(std::span<const double>)>;

// Central-difference Jacobian; column j is (fn(x + eps e_j) - fn(x - eps e_j)) / (2 eps).
inline Matrix finite_diff_jacobian(const VectorFunction& fn, std::span<const double> x, double eps) {
  if (!(eps > 0.0)) throw Error("finite_diff_jacobian: eps must be positive");
  Vector probe(x.begin(), x.end());
  Matrix jac;
  for (std::size_t j = 0; j < x.size(); ++j) {
    probe[j] = x[j] + eps;
    const Vector plus = fn(probe);
    probe[j] = x[j] - eps;
    const Vector minus = fn(probe);
    probe[j] = x[j];
    if (!all_finite(plus) || !all_finite(minus))
      throw NonFiniteError("finite_diff_jacobian: non-finite function value");
    if (plus.size() != minus.size()) throw DimensionError("finite_diff_jacobian: inconsistent output length");
    if (j == 0) jac = Matrix(plus.size(), x.size());
    for (std::size_t i = 0; i < plus.size(); ++i) jac(i, j) = (plus[i] - minus[i]) / (2.0 * eps);
  }
  return jac;
}

}  // namespace pnode
