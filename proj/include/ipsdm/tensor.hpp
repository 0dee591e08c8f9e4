#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace ipsdm {

/// Dense row-major matrix. Vectors are 1 x n matrices.
template <typename T>
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, T fill = T{}) : rows(r), cols(c), data(r * c, fill) {}

  T& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  const T& operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }

  std::span<T> row(std::size_t r) noexcept { return {data.data() + r * cols, cols}; }
  std::span<const T> row(std::size_t r) const noexcept { return {data.data() + r * cols, cols}; }

  std::size_t size() const noexcept { return data.size(); }
  bool same_shape(const Matrix& o) const noexcept { return rows == o.rows && cols == o.cols; }
  void zero() noexcept { std::fill(data.begin(), data.end(), T{}); }

  template <typename U>
  Matrix<U> cast() const {
    Matrix<U> out(rows, cols);
    std::transform(data.begin(), data.end(), out.data.begin(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

namespace linalg {

/// C += A * B
template <typename T>
void matmul_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols == b.rows && c.rows == a.rows && c.cols == b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    T* ci = c.data.data() + i * c.cols;
    for (std::size_t k = 0; k < a.cols; ++k) {
      const T aik = a(i, k);
      const T* bk = b.data.data() + k * b.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += aik * bk[j];
    }
  }
}

/// C += A^T * B
template <typename T>
void matmul_tn_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.rows == b.rows && c.rows == a.cols && c.cols == b.cols);
  for (std::size_t r = 0; r < a.rows; ++r) {
    const T* ar = a.data.data() + r * a.cols;
    const T* br = b.data.data() + r * b.cols;
    for (std::size_t i = 0; i < a.cols; ++i) {
      const T ari = ar[i];
      T* ci = c.data.data() + i * c.cols;
      for (std::size_t j = 0; j < b.cols; ++j) ci[j] += ari * br[j];
    }
  }
}

/// C += A * B^T
template <typename T>
void matmul_nt_acc(const Matrix<T>& a, const Matrix<T>& b, Matrix<T>& c) {
  assert(a.cols == b.cols && c.rows == a.rows && c.cols == b.rows);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const T* ai = a.data.data() + i * a.cols;
    for (std::size_t j = 0; j < b.rows; ++j) {
      const T* bj = b.data.data() + j * b.cols;
      T s{};
      for (std::size_t k = 0; k < a.cols; ++k) s += ai[k] * bj[k];
      c(i, j) += s;
    }
  }
}

template <typename T>
Matrix<T> matmul(const Matrix<T>& x, const Matrix<T>& w) {
  Matrix<T> out(x.rows, w.cols);
  matmul_acc(x, w, out);
  return out;
}

/// out = X * W + bias (bias is 1 x out_cols)
template <typename T>
Matrix<T> affine(const Matrix<T>& x, const Matrix<T>& w, const Matrix<T>& bias) {
  Matrix<T> out(x.rows, w.cols);
  for (std::size_t i = 0; i < out.rows; ++i) std::copy(bias.data.begin(), bias.data.end(), out.row(i).begin());
  matmul_acc(x, w, out);
  return out;
}

/// Column sums of `g` accumulated into the 1 x n `bias_grad`.
template <typename T>
void add_column_sums(const Matrix<T>& g, Matrix<T>& bias_grad) {
  for (std::size_t i = 0; i < g.rows; ++i) {
    const T* gi = g.data.data() + i * g.cols;
    for (std::size_t j = 0; j < g.cols; ++j) bias_grad.data[j] += gi[j];
  }
}

template <typename T>
bool all_finite(const Matrix<T>& m) {
  return std::all_of(m.data.begin(), m.data.end(), [](T v) { return std::isfinite(v); });
}

}  // namespace linalg
}  // namespace ipsdm
