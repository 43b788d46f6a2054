// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cblas.h>

#include <Eigen/Core>
#include <unsupported/Eigen/SpecialFunctions>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "droprate/error.hpp"

namespace droprate {

/// Extents of a tensor of rank 1..3.
class Shape {
 public:
  static constexpr std::size_t kMaxRank = 3;

  Shape() = default;
  Shape(std::initializer_list<std::size_t> extents) {
    if (extents.size() == 0 || extents.size() > kMaxRank) {
      throw DimensionError("tensor rank must be 1.." + std::to_string(kMaxRank) + ", got " +
                           std::to_string(extents.size()));
    }
    for (std::size_t e : extents) {
      if (e == 0) throw DimensionError("tensor extents must be positive");
      dims_[rank_++] = e;
    }
  }

  std::size_t rank() const noexcept { return rank_; }
  std::size_t operator[](std::size_t i) const { return dims_.at(i); }
  std::size_t back() const noexcept { return dims_[rank_ - 1]; }

  std::size_t numel() const noexcept {
    std::size_t n = rank_ ? 1 : 0;
    for (std::size_t i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  /// Product of every extent except the last.
  std::size_t rows() const noexcept { return rank_ ? numel() / back() : 0; }

  std::string str() const {
    std::string s = "[";
    for (std::size_t i = 0; i < rank_; ++i) {
      if (i) s += ", ";
      s += std::to_string(dims_[i]);
    }
    return s + "]";
  }

  friend bool operator==(const Shape& a, const Shape& b) noexcept {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

 private:
  std::array<std::size_t, kMaxRank> dims_{};
  std::size_t rank_ = 0;
};

/// Dense row-major tensor owning its storage.
template <class T>
class BasicTensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  BasicTensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw DimensionError("data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_.str());
    }
  }

  static BasicTensor zeros(Shape s) { return BasicTensor(s, T(0)); }
  static BasicTensor ones(Shape s) { return BasicTensor(s, T(1)); }
  static BasicTensor identity(std::size_t n) {
    BasicTensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t.data_[i * n + i] = T(1);
    return t;
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.rank(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> span() noexcept { return data_; }
  std::span<const T> span() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  T& at(std::size_t i, std::size_t j) { return data_[i * shape_.back() + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_.back() + j]; }
  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  /// Same storage viewed under another shape with equal element count.
  BasicTensor reshaped(Shape s) const& {
    check_reshape(s);
    return BasicTensor(s, data_);
  }
  BasicTensor reshaped(Shape s) && {
    check_reshape(s);
    return BasicTensor(s, std::move(data_));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <class U>
  BasicTensor<U> cast() const {
    return BasicTensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_reshape(const Shape& s) const {
    if (s.numel() != shape_.numel())
      throw DimensionError("cannot reshape " + shape_.str() + " to " + s.str());
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

inline void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (!(a == b)) throw DimensionError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

namespace kernels {

/// C = alpha * op(A) * op(B) + beta * C, row-major.
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, std::size_t lda, const T* b, std::size_t ldb, T beta, T* c, std::size_t ldc) {
  const auto ta = trans_a ? CblasTrans : CblasNoTrans;
  const auto tb = trans_b ? CblasTrans : CblasNoTrans;
  const auto im = static_cast<blasint>(m), in = static_cast<blasint>(n), ik = static_cast<blasint>(k);
  if constexpr (std::is_same_v<T, float>) {
    cblas_sgemm(CblasRowMajor, ta, tb, im, in, ik, alpha, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
  } else {
    cblas_dgemm(CblasRowMajor, ta, tb, im, in, ik, alpha, a, static_cast<blasint>(lda), b,
                static_cast<blasint>(ldb), beta, c, static_cast<blasint>(ldc));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

// Eigen peels unaligned heads through its scalar path, whose erf/exp differ
// from the packet versions in the last bits. Evaluating in an aligned buffer
// makes the result depend only on n, not on where the input lives.
inline Eigen::ArrayXf& aligned_scratch(const float* x, std::size_t n) {
  thread_local Eigen::ArrayXf buf;
  buf = Eigen::Map<const Eigen::ArrayXf>(x, static_cast<Eigen::Index>(n));
  return buf;
}

/// Standard normal CDF, Phi(x) = (1 + erf(x / sqrt 2)) / 2, elementwise.
/// float goes through Eigen's vectorized erf; double uses std::erf.
template <class T>
inline void normal_cdf(const T* x, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    Eigen::ArrayXf& xs = aligned_scratch(x, n);
    xs = 0.5f * (1.0f + (xs * static_cast<float>(kInvSqrt2)).erf());
    Eigen::Map<Eigen::ArrayXf>(out, static_cast<Eigen::Index>(n)) = xs;
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(0.5 * (1.0 + std::erf(x[i] * kInvSqrt2)));
  }
}

/// Standard normal density, elementwise.
template <class T>
inline void normal_pdf(const T* x, T* out, std::size_t n) {
  if constexpr (std::is_same_v<T, float>) {
    Eigen::ArrayXf& xs = aligned_scratch(x, n);
    xs = static_cast<float>(kInvSqrt2Pi) * (-0.5f * xs.square()).exp();
    Eigen::Map<Eigen::ArrayXf>(out, static_cast<Eigen::Index>(n)) = xs;
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(kInvSqrt2Pi * std::exp(-0.5 * x[i] * x[i]));
  }
}

/// gelu(x) = x Phi(x). `cdf` receives Phi(x).
template <class T>
inline void gelu(const T* x, T* y, T* cdf, std::size_t n) {
  normal_cdf(x, cdf, n);
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] * cdf[i];
}

/// In-place numerically stable softmax of one row, double accumulation.
template <class T>
inline void softmax_row(T* row, std::size_t n) {
  T mx = row[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
  double sum = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double e = std::exp(static_cast<double>(row[j]) - mx);
    row[j] = static_cast<T>(e);
    sum += e;
  }
  const double inv = 1.0 / sum;
  for (std::size_t j = 0; j < n; ++j) row[j] = static_cast<T>(row[j] * inv);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Value-level operations. Differentiable counterparts live in autograd.hpp.

/// [M,K] x [K,N] -> [M,N]; a rank-3 left operand [B,M,K] is treated as [B*M,K].
template <class T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + a.shape().str() + " and " + b.shape().str());
  }
  const std::size_t m = a.shape().rows(), k = b.dim(0), n = b.dim(1);
  Shape out = a.rank() == 3 ? Shape{a.dim(0), a.dim(1), n} : Shape{m, n};
  if (a.rank() == 1) out = Shape{n};
  BasicTensor<T> c(out);
  kernels::gemm<T>(false, false, m, n, k, T(1), a.data(), k, b.data(), n, T(0), c.data(), n);
  return c;
}

template <class T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape(a.shape(), b.shape(), "add");
  BasicTensor<T> c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

template <class T>
BasicTensor<T> scale(const BasicTensor<T>& a, T s) {
  BasicTensor<T> c = a;
  for (auto& v : c.storage()) v *= s;
  return c;
}

/// Exact (erf-based) GELU.
template <class T>
BasicTensor<T> gelu(const BasicTensor<T>& a) {
  BasicTensor<T> c(a.shape());
  std::vector<T> cdf(a.size());
  kernels::gelu(a.data(), c.data(), cdf.data(), a.size());
  return c;
}

template <class T>
BasicTensor<T> softmax_lastdim(const BasicTensor<T>& x) {
  BasicTensor<T> y = x;
  const std::size_t n = x.shape().back();
  for (std::size_t r = 0; r < x.shape().rows(); ++r) kernels::softmax_row(y.data() + r * n, n);
  return y;
}

constexpr double kLayerNormEps = 1e-5;

/// Normalizes over the last dimension, then applies gain and bias.
/// When `mean_out`/`rstd_out` are given they receive per-row statistics.
template <class T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain, const BasicTensor<T>& bias,
                          std::type_identity_t<std::vector<T>>* mean_out = nullptr,
                          std::type_identity_t<std::vector<T>>* rstd_out = nullptr) {
  const std::size_t c = x.shape().back();
  if (gain.size() != c || bias.size() != c) {
    throw DimensionError("layer_norm: input " + x.shape().str() + " with gain " + gain.shape().str() +
                         " and bias " + bias.shape().str());
  }
  const std::size_t rows = x.shape().rows();
  BasicTensor<T> y(x.shape());
  if (mean_out) mean_out->resize(rows);
  if (rstd_out) rstd_out->resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * c;
    double mean = 0.0;
    for (std::size_t j = 0; j < c; ++j) mean += xr[j];
    mean /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double d = xr[j] - mean;
      var += d * d;
    }
    var /= static_cast<double>(c);
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    T* yr = y.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) {
      yr[j] = static_cast<T>((xr[j] - mean) * rstd * gain[j] + bias[j]);
    }
    if (mean_out) (*mean_out)[r] = static_cast<T>(mean);
    if (rstd_out) (*rstd_out)[r] = static_cast<T>(rstd);
  }
  return y;
}

/// Rows of `table` [V,C] selected by `ids` -> [ids.size(), C].
template <class T>
BasicTensor<T> embedding_lookup(const BasicTensor<T>& table, std::span<const std::int32_t> ids) {
  if (table.rank() != 2) throw DimensionError("embedding_lookup: table must be rank 2, got " + table.shape().str());
  if (ids.empty()) throw DimensionError("embedding_lookup: empty id list");
  const std::size_t v = table.dim(0), c = table.dim(1);
  BasicTensor<T> out({ids.size(), c});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= v) {
      throw InputError("embedding_lookup: id " + std::to_string(ids[i]) + " outside vocabulary of " +
                       std::to_string(v));
    }
    std::copy_n(table.data() + static_cast<std::size_t>(ids[i]) * c, c, out.data() + i * c);
  }
  return out;
}

/// Mean negative log-likelihood over all rows of `logits` [...,V].
/// If `probs_out` is given it receives the row softmax.
template <class T>
double cross_entropy_mean(const BasicTensor<T>& logits, std::span<const std::int32_t> targets,
                          std::type_identity_t<BasicTensor<T>>* probs_out = nullptr) {
  const std::size_t v = logits.shape().back(), rows = logits.shape().rows();
  if (targets.size() != rows) {
    throw DimensionError("cross_entropy_mean: logits " + logits.shape().str() + " vs " +
                         std::to_string(targets.size()) + " targets");
  }
  if (probs_out) *probs_out = BasicTensor<T>(logits.shape());
  double total = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* row = logits.data() + r * v;
    const auto tgt = targets[r];
    if (tgt < 0 || static_cast<std::size_t>(tgt) >= v) {
      throw InputError("cross_entropy_mean: target " + std::to_string(tgt) + " outside " + std::to_string(v) +
                       " classes");
    }
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max<double>(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    const double lse = mx + std::log(sum);
    total += lse - row[tgt];
    if (probs_out) {
      T* p = probs_out->data() + r * v;
      for (std::size_t j = 0; j < v; ++j) p[j] = static_cast<T>(std::exp(row[j] - lse));
    }
  }
  return total / static_cast<double>(rows);
}

}  // namespace droprate
