#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "bbn/errors.hpp"

namespace bbn {

inline std::string shape_string(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
      : shape_(std::move(shape)), values_(element_count(shape_), fill) {}

  Tensor(std::vector<std::size_t> shape, std::vector<double> values)
      : shape_(std::move(shape)), values_(std::move(values)) {
    if (element_count(shape_) != values_.size()) {
      throw DimensionError("tensor shape " + shape_string(shape_) + " does not match " +
                           std::to_string(values_.size()) + " values");
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor({rows, cols}, std::move(values));
  }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return values_.size(); }

  std::size_t rows() const { return require_matrix(), shape_[0]; }
  std::size_t cols() const { return require_matrix(), shape_[1]; }

  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  double* data() noexcept { return values_.data(); }
  const double* data() const noexcept { return values_.data(); }

  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  double& at(std::size_t r, std::size_t c) noexcept { return values_[r * shape_[1] + c]; }
  double at(std::size_t r, std::size_t c) const noexcept { return values_[r * shape_[1] + c]; }

  std::span<double> row(std::size_t r) { return {values_.data() + r * shape_[1], shape_[1]}; }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * shape_[1], shape_[1]};
  }

  void fill(double v) { std::fill(values_.begin(), values_.end(), v); }

  bool all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
  }

  bool operator==(const Tensor&) const = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
  }

  void require_matrix() const {
    if (shape_.size() != 2) throw DimensionError("expected a matrix, got " + shape_string(shape_));
  }

  std::vector<std::size_t> shape_;
  std::vector<double> values_;
};

// out = a * b, with a (m x k) and b (k x n).
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul " + shape_string(a.shape()) + " * " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    double* o = out.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a.at(i, p);
      if (av == 0.0) continue;
      const double* br = b.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// out = a^T * b, with a (k x m) and b (k x n).
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn " + shape_string(a.shape()) + "^T * " + shape_string(b.shape()));
  }
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t p = 0; p < k; ++p) {
    const double* ar = a.data() + p * m;
    const double* br = b.data() + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ar[i];
      if (av == 0.0) continue;
      double* o = out.data() + i * n;
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  return out;
}

// out = a * b^T, with a (m x k) and b (n x k).
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt " + shape_string(a.shape()) + " * " + shape_string(b.shape()) + "^T");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* ar = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* br = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ar[p] * br[p];
      out.at(i, j) = s;
    }
  }
  return out;
}

// Rows of `src` selected by `indices`, in order.
inline Tensor gather_rows(const Tensor& src, std::span<const std::size_t> indices) {
  const std::size_t d = src.cols();
  Tensor out = Tensor::matrix(indices.size(), d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    auto r = src.row(indices[i]);
    std::copy(r.begin(), r.end(), out.row(i).begin());
  }
  return out;
}

inline Tensor scaled(const Tensor& t, double s) {
  Tensor out = t;
  for (double& v : out.values()) v *= s;
  return out;
}

}  // namespace bbn
