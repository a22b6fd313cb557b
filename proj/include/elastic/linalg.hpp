#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "elastic/error.hpp"

namespace elastic {

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericsError(std::string("non-finite value in ") + what);
    }
  }
}

inline void require_same_dim(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw DimensionError(std::string(what) + ": dimension mismatch " +
                         std::to_string(a) + " vs " + std::to_string(b));
  }
}

}  // namespace detail

// Dense vector of doubles: a worker variable, the center variable, or a
// momentum buffer. Entries are finite; every producing operation checks.
class ParamVector {
 public:
  ParamVector() = default;
  explicit ParamVector(std::size_t dim, double fill = 0.0) : data_(dim, fill) {
    detail::require_finite(data_, "ParamVector");
  }
  ParamVector(std::initializer_list<double> values) : data_(values) {
    detail::require_finite(data_, "ParamVector");
  }
  explicit ParamVector(std::vector<double> values) : data_(std::move(values)) {
    detail::require_finite(data_, "ParamVector");
  }

  std::size_t dim() const noexcept { return data_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator[](std::size_t i) noexcept { return data_[i]; }

  std::span<const double> values() const noexcept { return data_; }
  std::span<double> values() noexcept { return data_; }
  const std::vector<double>& raw() const noexcept { return data_; }

  auto begin() const noexcept { return data_.begin(); }
  auto end() const noexcept { return data_.end(); }
  auto begin() noexcept { return data_.begin(); }
  auto end() noexcept { return data_.end(); }

  // Call after mutating through operator[] or values().
  void check_finite(const char* what = "ParamVector") const {
    detail::require_finite(data_, what);
  }

  friend bool operator==(const ParamVector&, const ParamVector&) = default;

 private:
  std::vector<double> data_;
};

// a*x + y, elementwise. Inputs are not modified.
inline ParamVector axpy(double a, const ParamVector& x, const ParamVector& y) {
  detail::require_same_dim(x.dim(), y.dim(), "axpy");
  if (!std::isfinite(a)) throw NumericsError("axpy: non-finite scalar");
  ParamVector out(y);
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = a * x[i] + y[i];
  out.check_finite("axpy");
  return out;
}

inline ParamVector operator+(const ParamVector& a, const ParamVector& b) {
  detail::require_same_dim(a.dim(), b.dim(), "add");
  ParamVector out(a);
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = a[i] + b[i];
  out.check_finite("add");
  return out;
}

inline ParamVector operator-(const ParamVector& a, const ParamVector& b) {
  detail::require_same_dim(a.dim(), b.dim(), "sub");
  ParamVector out(a);
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = a[i] - b[i];
  out.check_finite("sub");
  return out;
}

inline ParamVector operator*(double s, const ParamVector& a) {
  ParamVector out(a);
  for (std::size_t i = 0; i < out.dim(); ++i) out[i] = s * a[i];
  out.check_finite("scale");
  return out;
}

inline double dot(const ParamVector& a, const ParamVector& b) {
  detail::require_same_dim(a.dim(), b.dim(), "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const ParamVector& a) { return std::sqrt(dot(a, a)); }

inline double norm_inf(const ParamVector& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

inline double distance(const ParamVector& a, const ParamVector& b) {
  detail::require_same_dim(a.dim(), b.dim(), "distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

// Row-major dense matrix.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("DenseMatrix: data length " +
                           std::to_string(data_.size()) + " != rows*cols");
    }
    detail::require_finite(data_, "DenseMatrix");
  }
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw DimensionError("DenseMatrix: ragged rows");
      data_.insert(data_.end(), r.begin(), r.end());
    }
    detail::require_finite(data_, "DenseMatrix");
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix diagonal(std::span<const double> d) {
    DenseMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool square() const noexcept { return rows_ == cols_; }

  double operator()(std::size_t r, std::size_t c) const noexcept {
    return data_[r * cols_ + c];
  }
  double& operator()(std::size_t r, std::size_t c) noexcept {
    return data_[r * cols_ + c];
  }

  std::span<const double> values() const noexcept { return data_; }

  DenseMatrix transposed() const {
    DenseMatrix t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  void check_finite(const char* what = "DenseMatrix") const {
    detail::require_finite(data_, what);
  }

  friend bool operator==(const DenseMatrix&, const DenseMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline DenseMatrix operator*(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_dim(a.cols(), b.rows(), "matmul");
  DenseMatrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  out.check_finite("matmul");
  return out;
}

inline DenseMatrix operator+(const DenseMatrix& a, const DenseMatrix& b) {
  detail::require_same_dim(a.rows(), b.rows(), "matadd rows");
  detail::require_same_dim(a.cols(), b.cols(), "matadd cols");
  DenseMatrix out(a);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += b(i, j);
  out.check_finite("matadd");
  return out;
}

inline ParamVector operator*(const DenseMatrix& m, const ParamVector& x) {
  detail::require_same_dim(m.cols(), x.dim(), "matvec");
  ParamVector out(m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < m.cols(); ++j) s += m(i, j) * x[j];
    out[i] = s;
  }
  out.check_finite("matvec");
  return out;
}

// Max-abs entrywise norm (the residual norm used by the Lyapunov solver).
inline double max_abs(const DenseMatrix& m) {
  double r = 0.0;
  for (double v : m.values()) r = std::max(r, std::abs(v));
  return r;
}

}  // namespace elastic
