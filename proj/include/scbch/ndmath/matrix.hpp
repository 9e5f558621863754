#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "scbch/error.hpp"

namespace scbch::nd {

// Dense row-major matrix of doubles. Value type; copies are deep.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("Matrix: data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }
  Matrix(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("Matrix: ragged initializer");
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
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }
  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }

  bool same_shape(const Matrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }
  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline bool all_finite(const Matrix& m) {
  return std::all_of(m.values().begin(), m.values().end(),
                     [](double v) { return std::isfinite(v); });
}

inline void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_str() +
                     " vs " + b.shape_str());
  }
}

inline void require_nonempty(const Matrix& m, const char* op) {
  if (m.empty()) throw ShapeError(std::string(op) + ": empty input");
}

// ---------------------------------------------------------------------------
// Pure (untaped) arithmetic. Every function returns a fresh matrix.
// ---------------------------------------------------------------------------

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape_str() + " x " + b.shape_str());
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Matrix c(n, m);
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  // i-k-j order: fixed summation order per output entry.
  for (std::size_t i = 0; i < n; ++i) {
    double* crow = pc + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

template <class F>
Matrix map(const Matrix& a, F&& f) {
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Matrix zip(const Matrix& a, const Matrix& b, const char* op, F&& f) {
  require_same_shape(a, b, op);
  Matrix out(a.rows(), a.cols());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline double sigmoid_scalar(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  return zip(a, b, "add", [](double x, double y) { return x + y; });
}
inline Matrix sub(const Matrix& a, const Matrix& b) {
  return zip(a, b, "sub", [](double x, double y) { return x - y; });
}
inline Matrix mul(const Matrix& a, const Matrix& b) {
  return zip(a, b, "mul", [](double x, double y) { return x * y; });
}
inline Matrix scale(const Matrix& a, double s) {
  return map(a, [s](double x) { return x * s; });
}
inline Matrix add_scalar(const Matrix& a, double s) {
  return map(a, [s](double x) { return x + s; });
}
inline Matrix tanh(const Matrix& a) {
  return map(a, [](double x) { return std::tanh(x); });
}
inline Matrix relu(const Matrix& a) {
  return map(a, [](double x) { return x > 0.0 ? x : 0.0; });
}
inline Matrix sigmoid(const Matrix& a) { return map(a, sigmoid_scalar); }
inline Matrix exp(const Matrix& a) {
  return map(a, [](double x) {
    const double y = std::exp(x);
    if (!std::isfinite(y)) throw NumericalError("exp: overflow at " + std::to_string(x));
    return y;
  });
}
inline Matrix log(const Matrix& a) {
  return map(a, [](double x) {
    if (!(x > 0.0) || !std::isfinite(x)) {
      throw NumericalError("log: argument outside (0, inf): " + std::to_string(x));
    }
    return std::log(x);
  });
}
inline Matrix abs(const Matrix& a) {
  return map(a, [](double x) { return std::fabs(x); });
}
inline Matrix clamp(const Matrix& a, double lo, double hi) {
  return map(a, [lo, hi](double x) { return std::clamp(x, lo, hi); });
}

// Adds a 1 x cols row vector to every row.
inline Matrix add_row(const Matrix& a, const Matrix& r) {
  if (r.rows() != 1 || r.cols() != a.cols()) {
    throw ShapeError("add_row: " + a.shape_str() + " + " + r.shape_str());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += r[j];
  return out;
}

// Adds an rows x 1 column vector to every column.
inline Matrix add_col(const Matrix& a, const Matrix& c) {
  if (c.cols() != 1 || c.rows() != a.rows()) {
    throw ShapeError("add_col: " + a.shape_str() + " + " + c.shape_str());
  }
  Matrix out = a;
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out(i, j) += c[i];
  return out;
}

// Diagonal of a square matrix as an n x 1 column.
inline Matrix diag(const Matrix& a) {
  if (a.rows() != a.cols()) throw ShapeError("diag: not square " + a.shape_str());
  Matrix d(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) d[i] = a(i, i);
  return d;
}

inline double sum_value(const Matrix& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  return s;
}

inline Matrix sum(const Matrix& a) {
  require_nonempty(a, "sum");
  return Matrix(1, 1, sum_value(a));
}
inline Matrix mean(const Matrix& a) {
  require_nonempty(a, "mean");
  return Matrix(1, 1, sum_value(a) / static_cast<double>(a.size()));
}
inline Matrix row_sum(const Matrix& a) {
  require_nonempty(a, "row_sum");
  Matrix out(a.rows(), 1);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (double v : a.row(i)) s += v;
    out[i] = s;
  }
  return out;
}
inline Matrix row_mean(const Matrix& a) {
  require_nonempty(a, "row_mean");
  return scale(row_sum(a), 1.0 / static_cast<double>(a.cols()));
}

// Row subset in the given order.
inline Matrix gather_rows(const Matrix& a, std::span<const std::size_t> idx) {
  Matrix out(idx.size(), a.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= a.rows()) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[r]) + " out of range for " +
                       a.shape_str());
    }
    auto src = a.row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace scbch::nd
