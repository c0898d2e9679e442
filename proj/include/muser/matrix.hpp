#pragma once

// Dense row-major double matrices and the handful of primitives the rest of
// the project is built from. Everything is 64-bit; finiteness is enforced at
// the public boundaries so NaN/Inf never propagate silently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "muser/common.hpp"

namespace muser {

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, data.size() == rows * cols

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(std::size_t r, std::size_t c, std::vector<double> values)
      : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != rows * cols) throw Error("Matrix: data length does not match shape");
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Matrix& o) const { return rows == o.rows && cols == o.cols; }
  bool operator==(const Matrix& o) const {
    return rows == o.rows && cols == o.cols && data == o.data;
  }
};

inline std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void ensure_finite(const Matrix& m, const char* op) {
  for (double v : m.data)
    if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite entry in result");
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols != b.rows)
    throw Error("matmul: dimension mismatch " + shape_str(a) + " * " + shape_str(b));
  Matrix out(a.rows, b.cols);
  // i-k-j order keeps the b walk row-major.
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &out.data[i * out.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      if (aik == 0.0) continue;
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  ensure_finite(out, "matmul");
  return out;
}

/// a * transpose(b); both operands walked row-major.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols != b.cols)
    throw Error("matmul_nt: dimension mismatch " + shape_str(a) + " * " + shape_str(b) + "^T");
  Matrix out(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = &b.data[j * b.cols];
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      out(i, j) = acc;
    }
  }
  ensure_finite(out, "matmul_nt");
  return out;
}

/// transpose(a) * b.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows != b.rows)
    throw Error("matmul_tn: dimension mismatch " + shape_str(a) + "^T * " + shape_str(b));
  Matrix out(a.cols, b.cols);
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = &a.data[k * a.cols];
    const double* brow = &b.data[k * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      if (aki == 0.0) continue;
      double* orow = &out.data[i * out.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
  ensure_finite(out, "matmul_tn");
  return out;
}

inline Matrix transpose(const Matrix& a) {
  Matrix out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw Error("add: shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  Matrix out = a;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
  ensure_finite(out, "add");
  return out;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix out = a;
  for (double& v : out.data) v *= s;
  ensure_finite(out, "scale");
  return out;
}

/// Row-wise softmax with per-row max subtraction; stable for entries up to
/// +-1e4 in magnitude.
inline Matrix softmax_rows(const Matrix& x) {
  ensure_finite(x, "softmax_rows input");
  Matrix out(x.rows, x.cols);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double m = -HUGE_VAL;
    for (std::size_t j = 0; j < x.cols; ++j) m = std::max(m, x(i, j));
    double z = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) {
      const double e = std::exp(x(i, j) - m);
      out(i, j) = e;
      z += e;
    }
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) /= z;
  }
  ensure_finite(out, "softmax_rows");
  return out;
}

enum class Axis { kRows, kCols };

namespace detail {
// Sum in ascending order so the result does not depend on how the terms were
// laid out. This makes the contrastive loss exactly invariant to batch
// permutations.
inline double ordered_sum(std::vector<double>& terms) {
  std::sort(terms.begin(), terms.end());
  double acc = 0.0;
  for (double t : terms) acc += t;
  return acc;
}
}  // namespace detail

/// Mean over i of -log softmax(logits along `axis`)[i][i]; the matched class
/// for line i is column/row i.
inline double cross_entropy_diag(const Matrix& logits, Axis axis) {
  if (logits.rows != logits.cols)
    throw Error("cross_entropy_diag: matrix must be square, got " + shape_str(logits));
  ensure_finite(logits, "cross_entropy_diag input");
  const std::size_t n = logits.rows;
  std::vector<double> ces(n);
  std::vector<double> terms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double m = -HUGE_VAL;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = axis == Axis::kRows ? logits(i, j) : logits(j, i);
      m = std::max(m, v);
    }
    for (std::size_t j = 0; j < n; ++j) {
      const double v = axis == Axis::kRows ? logits(i, j) : logits(j, i);
      terms[j] = std::exp(v - m);
    }
    const double z = detail::ordered_sum(terms);
    ces[i] = std::log(z) - (logits(i, i) - m);
  }
  const double total = detail::ordered_sum(ces);
  return total / static_cast<double>(n);
}

/// Each row divided by max(||row||, eps); zero rows stay zero instead of
/// producing NaN.
inline Matrix l2_normalize_rows(const Matrix& x, double eps = 1e-12) {
  if (eps <= 0.0) throw Error("l2_normalize_rows: eps must be positive");
  ensure_finite(x, "l2_normalize_rows input");
  Matrix out = x;
  for (std::size_t i = 0; i < x.rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) ss += x(i, j) * x(i, j);
    const double inv = 1.0 / std::max(std::sqrt(ss), eps);
    for (std::size_t j = 0; j < x.cols; ++j) out(i, j) *= inv;
  }
  ensure_finite(out, "l2_normalize_rows");
  return out;
}

inline Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0,
                            double hi = 1.0) {
  Matrix m(r, c);
  for (double& v : m.data) v = uniform_real(rng, lo, hi);
  return m;
}

}  // namespace muser
