#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "vspcn/errors.hpp"

namespace vspcn {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

/// Dense row-major tensor. Most of the library works with rank-2 tensors;
/// vectors are stored as 1 x n rows so every kernel sees a matrix.
///
/// A default-constructed tensor is empty (no shape, no data) and is used as
/// a "not present" marker, e.g. for gradients that were never reached.
template <std::floating_point T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_volume(shape_), fill);
  }

  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != shape_volume(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::initializer_list<T> values) {
    return Tensor({rows, cols}, std::vector<T>(values));
  }

  static Tensor row(std::initializer_list<T> values) {
    return Tensor({1, values.size()}, std::vector<T>(values));
  }

  static Tensor scalar(T v) { return Tensor({1, 1}, std::vector<T>{v}); }

  static Tensor identity(std::size_t n) {
    Tensor t({n, n});
    for (std::size_t i = 0; i < n; ++i) t(i, i) = T(1);
    return t;
  }

  bool empty() const { return data_.empty(); }
  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  // Rank-1 tensors behave as a single row.
  std::size_t rows() const {
    return shape_.size() >= 2 ? shape_volume(Shape(shape_.begin(), shape_.end() - 1))
                              : (shape_.empty() ? 0 : 1);
  }
  std::size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }

  T& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }

  std::span<T> row_span(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row_span(std::size_t r) const {
    return {data_.data() + r * cols(), cols()};
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool v) { requires_grad_ = v; }

  // Reinterpret extents without touching data.
  Tensor reshaped(Shape shape) const {
    Tensor out(std::move(shape), data_);
    out.requires_grad_ = requires_grad_;
    return out;
  }

  template <std::floating_point U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must have at least one extent");
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
  bool requires_grad_ = false;
};

template <std::floating_point T>
void check_finite(const Tensor<T>& t, std::string_view where) {
  for (T v : t.values()) {
    if (!std::isfinite(v)) {
      throw NumericError("non-finite value produced by " + std::string(where));
    }
  }
}

template <std::floating_point T>
void require_matrix(const Tensor<T>& t, std::string_view what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

template <std::floating_point T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, std::string_view what) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(what) + ": shape mismatch " + shape_string(a.shape()) +
                         " vs " + shape_string(b.shape()));
  }
}

namespace kernel {

// C (m x n) (+)= op(A) * op(B), where op(A) is m x k and op(B) is k x n.
// Row-major; the loop order keeps the innermost access contiguous for the
// common non-transposed cases.
template <std::floating_point T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t k, std::size_t n,
          const T* a, const T* b, T* c, bool accumulate) {
  if (!accumulate) std::fill(c, c + m * n, T(0));
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      T* ci = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const T aip = a[i * k + p];
        const T* bp = b + p * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // B stored n x k.
    for (std::size_t i = 0; i < m; ++i) {
      const T* ai = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const T* bj = b + j * k;
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
        c[i * n + j] += s;
      }
    }
  } else if (trans_a && !trans_b) {
    // A stored k x m.
    for (std::size_t p = 0; p < k; ++p) {
      const T* ap = a + p * m;
      const T* bp = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const T api = ap[i];
        T* ci = c + i * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::size_t p = 0; p < k; ++p) s += a[p * m + i] * b[j * k + p];
        c[i * n + j] += s;
      }
    }
  }
}

template <std::floating_point T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool trans_a = false,
                 bool trans_b = false) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = trans_a ? a.cols() : a.rows();
  const std::size_t ka = trans_a ? a.rows() : a.cols();
  const std::size_t kb = trans_b ? b.cols() : b.rows();
  const std::size_t n = trans_b ? b.rows() : b.cols();
  if (ka != kb) {
    throw DimensionError("matmul: inner extents disagree, " + shape_string(a.shape()) +
                         (trans_a ? "^T" : "") + " x " + shape_string(b.shape()) +
                         (trans_b ? "^T" : ""));
  }
  Tensor<T> out({m, n});
  gemm(trans_a, trans_b, m, ka, n, a.data(), b.data(), out.data(), false);
  return out;
}

template <std::floating_point T>
Tensor<T> transpose(const Tensor<T>& x) {
  require_matrix(x, "transpose");
  Tensor<T> out({x.cols(), x.rows()});
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out(j, i) = x(i, j);
  return out;
}

template <std::floating_point T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto o = out.row_span(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = std::exp(in[j] - mx);
      sum += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= sum;
  }
  check_finite(out, "softmax_rows");
  return out;
}

template <std::floating_point T>
Tensor<T> log_softmax_rows(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto o = out.row_span(r);
    const T mx = *std::max_element(in.begin(), in.end());
    T sum = 0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(in[j] - mx);
    const T lse = mx + std::log(sum);
    for (std::size_t j = 0; j < n; ++j) o[j] = in[j] - lse;
  }
  check_finite(out, "log_softmax_rows");
  return out;
}

/// Per-row standardisation without affine parameters. `inv_std` (one entry
/// per row) is filled when non-null so callers can reuse it for backward.
template <std::floating_point T>
Tensor<T> normalize_rows(const Tensor<T>& x, T eps, std::vector<T>* inv_std = nullptr) {
  Tensor<T> out(x.shape());
  const std::size_t n = x.cols();
  if (inv_std) inv_std->assign(x.rows(), T(0));
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row_span(r);
    auto o = out.row_span(r);
    T mean = 0;
    for (T v : in) mean += v;
    mean /= T(n);
    T var = 0;
    for (T v : in) var += (v - mean) * (v - mean);
    var /= T(n);
    const T is = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) o[j] = (in[j] - mean) * is;
    if (inv_std) (*inv_std)[r] = is;
  }
  check_finite(out, "layer_norm");
  return out;
}

}  // namespace kernel
}  // namespace vspcn
