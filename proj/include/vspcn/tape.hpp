#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "vspcn/errors.hpp"
#include "vspcn/tensor.hpp"

namespace vspcn {

template <std::floating_point T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
template <std::floating_point T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<T>& value() const { return tape_->value_of(id_); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  bool requires_grad() const { return tape_->requires_grad_of(id_); }
  bool valid() const { return tape_ != nullptr; }

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Ordered record of primitive operations. Every op appends a node holding
/// its output plus a closure over whatever it saved for the reverse pass;
/// backward() walks the record from the loss down to the first node and
/// accumulates one gradient per reached node.
///
/// Nodes whose inputs are all constants carry no closure, so a tape built
/// from constant leaves is a plain forward evaluator.
template <std::floating_point T>
class Tape {
 public:
  using Backward = std::function<void(const Tensor<T>& grad_out, Tape& tape)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = requires_grad;
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Leaf that refers to caller-owned storage instead of copying it. The
  /// tensor must outlive the tape and must not change while it is alive.
  Var<T> param(const Tensor<T>& external, bool requires_grad = true) {
    Node& n = nodes_.emplace_back();
    n.external = &external;
    n.requires_grad = requires_grad;
    return Var<T>(this, nodes_.size() - 1);
  }

  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> parents, Backward fn) {
    return record(std::move(value), std::span<const Var<T>>(parents.begin(), parents.size()),
                  std::move(fn));
  }

  Var<T> record(Tensor<T> value, std::span<const Var<T>> parents, Backward fn) {
    bool needs = false;
    for (const auto& p : parents) {
      if (p.tape() != this) throw ContractError("operands recorded on different tapes");
      needs = needs || nodes_[p.id()].requires_grad;
    }
    Node& n = nodes_.emplace_back();
    n.owned = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(fn);
    return Var<T>(this, nodes_.size() - 1);
  }

  void accumulate(const Var<T>& v, const Tensor<T>& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void accumulate(const Var<T>& v, Tensor<T>&& g) {
    Node& n = nodes_[v.id()];
    if (!n.requires_grad) return;
    if (n.grad.empty()) {
      n.grad = std::move(g);
      return;
    }
    auto dst = n.grad.values();
    auto src = g.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  }

  void backward(const Var<T>& loss) {
    if (loss.tape() != this) throw ContractError("backward: loss belongs to another tape");
    if (loss.value().size() != 1) {
      throw ContractError("backward: loss must be a scalar, got shape " +
                          shape_string(loss.shape()));
    }
    Node& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value().shape(), T(1));
    for (std::size_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.grad.empty() || !n.backward) continue;
      check_finite(n.grad, "backward pass");
      n.backward(n.grad, *this);
    }
  }

  /// Gradient of a node after backward(); empty when the node was not
  /// reached from the loss.
  const Tensor<T>& grad(const Var<T>& v) const { return nodes_[v.id()].grad; }

  std::size_t size() const { return nodes_.size(); }

  const Tensor<T>& value_of(std::size_t id) const { return nodes_[id].value(); }
  bool requires_grad_of(std::size_t id) const { return nodes_[id].requires_grad; }

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    bool requires_grad = false;
    Backward backward;

    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  std::deque<Node> nodes_;
};

// Differentiable primitives. Each checks its output for NaN/Inf.
namespace ad {

namespace detail {

template <std::floating_point T>
Tape<T>& tape_of(const Var<T>& a) {
  if (!a.valid()) throw ContractError("operation on an unbound Var");
  return *a.tape();
}

template <std::floating_point T>
Var<T> finish(Tape<T>& tape, Tensor<T> out, std::string_view op,
              std::initializer_list<Var<T>> parents, typename Tape<T>::Backward fn) {
  check_finite(out, op);
  return tape.record(std::move(out), parents, std::move(fn));
}

// y = f(x) elementwise with dy/dx = df(x).
template <std::floating_point T, class F, class DF>
Var<T> unary(const Var<T>& x, std::string_view name, F f, DF df) {
  auto& tape = tape_of(x);
  Tensor<T> out(x.shape());
  auto in = x.value().values();
  auto o = out.values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = f(in[i]);
  return finish(tape, std::move(out), name, {x}, [x, df](const Tensor<T>& g, Tape<T>& t) {
    const auto& xv = x.value();
    Tensor<T> gx(xv.shape());
    auto gi = g.values();
    auto xi = xv.values();
    auto go = gx.values();
    for (std::size_t i = 0; i < go.size(); ++i) go[i] = gi[i] * df(xi[i]);
    t.accumulate(x, std::move(gx));
  });
}

}  // namespace detail

template <std::floating_point T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  Tensor<T> out = kernel::matmul(a.value(), b.value());
  return detail::finish(tape, std::move(out), "matmul", {a, b},
                        [a, b](const Tensor<T>& g, Tape<T>& t) {
                          if (a.requires_grad()) t.accumulate(a, kernel::matmul(g, b.value(), false, true));
                          if (b.requires_grad()) t.accumulate(b, kernel::matmul(a.value(), g, true, false));
                        });
}

// a * b^T
template <std::floating_point T>
Var<T> matmul_nt(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  Tensor<T> out = kernel::matmul(a.value(), b.value(), false, true);
  return detail::finish(tape, std::move(out), "matmul_nt", {a, b},
                        [a, b](const Tensor<T>& g, Tape<T>& t) {
                          if (a.requires_grad()) t.accumulate(a, kernel::matmul(g, b.value()));
                          if (b.requires_grad()) t.accumulate(b, kernel::matmul(g, a.value(), true, false));
                        });
}

template <std::floating_point T>
Var<T> transpose(const Var<T>& a) {
  auto& tape = detail::tape_of(a);
  return detail::finish(tape, kernel::transpose(a.value()), "transpose", {a},
                        [a](const Tensor<T>& g, Tape<T>& t) { t.accumulate(a, kernel::transpose(g)); });
}

template <std::floating_point T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  require_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  return detail::finish(tape, std::move(out), "add", {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <std::floating_point T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  require_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return detail::finish(tape, std::move(out), "sub", {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    t.accumulate(a, g);
    if (b.requires_grad()) {
      Tensor<T> nb = g;
      for (auto& v : nb.values()) v = -v;
      t.accumulate(b, std::move(nb));
    }
  });
}

template <std::floating_point T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  require_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return detail::finish(tape, std::move(out), "mul", {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    auto gi = g.values();
    if (a.requires_grad()) {
      Tensor<T> ga(g.shape());
      auto bv = b.value().values();
      for (std::size_t i = 0; i < gi.size(); ++i) ga[i] = gi[i] * bv[i];
      t.accumulate(a, std::move(ga));
    }
    if (b.requires_grad()) {
      Tensor<T> gb(g.shape());
      auto av = a.value().values();
      for (std::size_t i = 0; i < gi.size(); ++i) gb[i] = gi[i] * av[i];
      t.accumulate(b, std::move(gb));
    }
  });
}

template <std::floating_point T>
Var<T> div(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a);
  require_same_shape(a.value(), b.value(), "div");
  Tensor<T> out = a.value();
  auto o = out.values();
  auto bv = b.value().values();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] /= bv[i];
  return detail::finish(tape, std::move(out), "div", {a, b}, [a, b](const Tensor<T>& g, Tape<T>& t) {
    auto gi = g.values();
    auto av = a.value().values();
    auto bv = b.value().values();
    if (a.requires_grad()) {
      Tensor<T> ga(g.shape());
      for (std::size_t i = 0; i < gi.size(); ++i) ga[i] = gi[i] / bv[i];
      t.accumulate(a, std::move(ga));
    }
    if (b.requires_grad()) {
      Tensor<T> gb(g.shape());
      for (std::size_t i = 0; i < gi.size(); ++i) gb[i] = -gi[i] * av[i] / (bv[i] * bv[i]);
      t.accumulate(b, std::move(gb));
    }
  });
}

// a (m x n) + row (1 x n) broadcast over rows.
template <std::floating_point T>
Var<T> add_row(const Var<T>& a, const Var<T>& row) {
  auto& tape = detail::tape_of(a);
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw DimensionError("add_row: " + shape_string(a.shape()) + " + " + shape_string(row.shape()));
  }
  Tensor<T> out = a.value();
  const auto& rv = row.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
  return detail::finish(tape, std::move(out), "add_row", {a, row},
                        [a, row](const Tensor<T>& g, Tape<T>& t) {
                          t.accumulate(a, g);
                          if (row.requires_grad()) {
                            Tensor<T> gr({1, g.cols()});
                            for (std::size_t r = 0; r < g.rows(); ++r)
                              for (std::size_t c = 0; c < g.cols(); ++c) gr[c] += g(r, c);
                            t.accumulate(row, std::move(gr));
                          }
                        });
}

template <std::floating_point T>
Var<T> scale(const Var<T>& a, T s) {
  return detail::unary(a, "scale", [s](T x) { return s * x; }, [s](T) { return s; });
}

template <std::floating_point T>
Var<T> add_scalar(const Var<T>& a, T s) {
  return detail::unary(a, "add_scalar", [s](T x) { return x + s; }, [](T) { return T(1); });
}

template <std::floating_point T>
Var<T> exp(const Var<T>& a) {
  return detail::unary(a, "exp", [](T x) { return std::exp(x); }, [](T x) { return std::exp(x); });
}

template <std::floating_point T>
Var<T> log(const Var<T>& a) {
  for (T v : a.value().values()) {
    if (!(v > T(0))) throw NumericError("log of a non-positive value");
  }
  return detail::unary(a, "log", [](T x) { return std::log(x); }, [](T x) { return T(1) / x; });
}

template <std::floating_point T>
Var<T> square(const Var<T>& a) {
  return detail::unary(a, "square", [](T x) { return x * x; }, [](T x) { return T(2) * x; });
}

// Exact (erf-based) GELU.
template <std::floating_point T>
Var<T> gelu(const Var<T>& a) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return detail::unary(
      a, "gelu", [](T x) { return T(0.5) * x * (T(1) + std::erf(x * inv_sqrt2)); },
      [](T x) {
        const T cdf = T(0.5) * (T(1) + std::erf(x * inv_sqrt2));
        return cdf + x * inv_sqrt2pi * std::exp(T(-0.5) * x * x);
      });
}

// max(x, floor); the gradient passes only where x is above the floor.
template <std::floating_point T>
Var<T> clamp_min(const Var<T>& a, T floor) {
  return detail::unary(
      a, "clamp_min", [floor](T x) { return x > floor ? x : floor; },
      [floor](T x) { return x > floor ? T(1) : T(0); });
}

template <std::floating_point T>
Var<T> sum(const Var<T>& a) {
  auto& tape = detail::tape_of(a);
  T s = 0;
  for (T v : a.value().values()) s += v;
  return detail::finish(tape, Tensor<T>::scalar(s), "sum", {a}, [a](const Tensor<T>& g, Tape<T>& t) {
    t.accumulate(a, Tensor<T>(a.shape(), g[0]));
  });
}

template <std::floating_point T>
Var<T> pick(const Var<T>& a, std::size_t r, std::size_t c) {
  auto& tape = detail::tape_of(a);
  if (r >= a.rows() || c >= a.cols()) {
    throw DimensionError("pick: index (" + std::to_string(r) + "," + std::to_string(c) +
                         ") outside " + shape_string(a.shape()));
  }
  return detail::finish(tape, Tensor<T>::scalar(a.value()(r, c)), "pick", {a},
                        [a, r, c](const Tensor<T>& g, Tape<T>& t) {
                          Tensor<T> ga(a.shape());
                          ga(r, c) = g[0];
                          t.accumulate(a, std::move(ga));
                        });
}

template <std::floating_point T>
Var<T> softmax_rows(const Var<T>& x) {
  auto& tape = detail::tape_of(x);
  Tensor<T> out = kernel::softmax_rows(x.value());
  // The closure reads the softmax output back from the tape through `self`,
  // which is bound after recording.
  auto self = std::make_shared<Var<T>>();
  Var<T> y = tape.record(std::move(out), {x}, [x, self](const Tensor<T>& g, Tape<T>& t) {
    const auto& yv = self->value();
    Tensor<T> gx(yv.shape());
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      T dot = 0;
      for (std::size_t c = 0; c < yv.cols(); ++c) dot += g(r, c) * yv(r, c);
      for (std::size_t c = 0; c < yv.cols(); ++c) gx(r, c) = yv(r, c) * (g(r, c) - dot);
    }
    t.accumulate(x, std::move(gx));
  });
  *self = y;
  return y;
}

template <std::floating_point T>
Var<T> log_softmax_rows(const Var<T>& x) {
  auto& tape = detail::tape_of(x);
  Tensor<T> out = kernel::log_softmax_rows(x.value());
  auto self = std::make_shared<Var<T>>();
  Var<T> y = tape.record(std::move(out), {x}, [x, self](const Tensor<T>& g, Tape<T>& t) {
    const auto& yv = self->value();
    Tensor<T> gx(yv.shape());
    for (std::size_t r = 0; r < yv.rows(); ++r) {
      T gs = 0;
      for (std::size_t c = 0; c < yv.cols(); ++c) gs += g(r, c);
      for (std::size_t c = 0; c < yv.cols(); ++c) gx(r, c) = g(r, c) - std::exp(yv(r, c)) * gs;
    }
    t.accumulate(x, std::move(gx));
  });
  *self = y;
  return y;
}

/// Row-wise layer normalisation with affine scale/shift (both 1 x n).
template <std::floating_point T>
Var<T> layer_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps) {
  auto& tape = detail::tape_of(x);
  const std::size_t n = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.shape() != gamma.shape()) {
    throw DimensionError("layer_norm: affine shape " + shape_string(gamma.shape()) +
                         " does not fit input " + shape_string(x.shape()));
  }
  auto inv_std = std::make_shared<std::vector<T>>();
  auto xhat = std::make_shared<Tensor<T>>(kernel::normalize_rows(x.value(), eps, inv_std.get()));
  Tensor<T> out(x.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < n; ++c) out(r, c) = gv[c] * (*xhat)(r, c) + bv[c];
  return detail::finish(
      tape, std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, xhat, inv_std, n](const Tensor<T>& g, Tape<T>& t) {
        const auto& gv = gamma.value();
        if (gamma.requires_grad() || beta.requires_grad()) {
          Tensor<T> gg({1, n});
          Tensor<T> gb({1, n});
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < n; ++c) {
              gg[c] += g(r, c) * (*xhat)(r, c);
              gb[c] += g(r, c);
            }
          t.accumulate(gamma, std::move(gg));
          t.accumulate(beta, std::move(gb));
        }
        if (!x.requires_grad()) return;
        Tensor<T> gx(x.shape());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          T mean_d = 0;
          T mean_dx = 0;
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g(r, c) * gv[c];
            mean_d += d;
            mean_dx += d * (*xhat)(r, c);
          }
          mean_d /= T(n);
          mean_dx /= T(n);
          for (std::size_t c = 0; c < n; ++c) {
            const T d = g(r, c) * gv[c];
            gx(r, c) = (*inv_std)[r] * (d - mean_d - (*xhat)(r, c) * mean_dx);
          }
        }
        t.accumulate(x, std::move(gx));
      });
}

template <std::floating_point T>
Var<T> gather_rows(const Var<T>& a, std::vector<std::size_t> index) {
  auto& tape = detail::tape_of(a);
  if (index.empty()) throw DimensionError("gather_rows: empty index set");
  const std::size_t n = a.cols();
  Tensor<T> out({index.size(), n});
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.rows()) {
      throw DimensionError("gather_rows: row " + std::to_string(index[i]) + " outside " +
                           shape_string(a.shape()));
    }
    auto src = a.value().row_span(index[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return detail::finish(tape, std::move(out), "gather_rows", {a},
                        [a, index = std::move(index), n](const Tensor<T>& g, Tape<T>& t) {
                          Tensor<T> ga(a.shape());
                          for (std::size_t i = 0; i < index.size(); ++i)
                            for (std::size_t c = 0; c < n; ++c) ga(index[i], c) += g(i, c);
                          t.accumulate(a, std::move(ga));
                        });
}

template <std::floating_point T>
Var<T> slice_rows(const Var<T>& a, std::size_t begin, std::size_t count) {
  if (count == 0 || begin + count > a.rows()) {
    throw DimensionError("slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + shape_string(a.shape()));
  }
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = begin + i;
  return gather_rows(a, std::move(idx));
}

template <std::floating_point T>
Var<T> slice_cols(const Var<T>& a, std::size_t begin, std::size_t count) {
  auto& tape = detail::tape_of(a);
  if (count == 0 || begin + count > a.cols()) {
    throw DimensionError("slice_cols: [" + std::to_string(begin) + ", +" + std::to_string(count) +
                         ") outside " + shape_string(a.shape()));
  }
  Tensor<T> out({a.rows(), count});
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a.value()(r, begin + c);
  return detail::finish(tape, std::move(out), "slice_cols", {a},
                        [a, begin, count](const Tensor<T>& g, Tape<T>& t) {
                          Tensor<T> ga(a.shape());
                          for (std::size_t r = 0; r < g.rows(); ++r)
                            for (std::size_t c = 0; c < count; ++c) ga(r, begin + c) = g(r, c);
                          t.accumulate(a, std::move(ga));
                        });
}

template <std::floating_point T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: nothing to concatenate");
  auto& tape = detail::tape_of(parts.front());
  const std::size_t n = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != n) {
      throw DimensionError("concat_rows: column mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    total += p.rows();
  }
  Tensor<T> out({total, n});
  std::size_t r0 = 0;
  for (const auto& p : parts) {
    auto src = p.value().values();
    std::copy(src.begin(), src.end(), out.data() + r0 * n);
    r0 += p.rows();
  }
  check_finite(out, "concat_rows");
  return tape.record(std::move(out), std::span<const Var<T>>(parts),
                     [parts, n](const Tensor<T>& g, Tape<T>& t) {
                       std::size_t r0 = 0;
                       for (const auto& p : parts) {
                         if (p.requires_grad()) {
                           Tensor<T> gp(p.shape());
                           std::copy(g.data() + r0 * n, g.data() + (r0 + p.rows()) * n, gp.data());
                           t.accumulate(p, std::move(gp));
                         }
                         r0 += p.rows();
                       }
                     });
}

template <std::floating_point T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: nothing to concatenate");
  auto& tape = detail::tape_of(parts.front());
  const std::size_t m = parts.front().rows();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rows() != m) {
      throw DimensionError("concat_cols: row mismatch " + shape_string(parts.front().shape()) +
                           " vs " + shape_string(p.shape()));
    }
    total += p.cols();
  }
  Tensor<T> out({m, total});
  std::size_t c0 = 0;
  for (const auto& p : parts) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < p.cols(); ++c) out(r, c0 + c) = p.value()(r, c);
    c0 += p.cols();
  }
  check_finite(out, "concat_cols");
  return tape.record(std::move(out), std::span<const Var<T>>(parts),
                     [parts, m](const Tensor<T>& g, Tape<T>& t) {
                       std::size_t c0 = 0;
                       for (const auto& p : parts) {
                         if (p.requires_grad()) {
                           Tensor<T> gp(p.shape());
                           for (std::size_t r = 0; r < m; ++r)
                             for (std::size_t c = 0; c < p.cols(); ++c) gp(r, c) = g(r, c0 + c);
                           t.accumulate(p, std::move(gp));
                         }
                         c0 += p.cols();
                       }
                     });
}

template <std::floating_point T>
Var<T> operator+(const Var<T>& a, const Var<T>& b) { return add(a, b); }
template <std::floating_point T>
Var<T> operator-(const Var<T>& a, const Var<T>& b) { return sub(a, b); }
template <std::floating_point T>
Var<T> operator*(T s, const Var<T>& a) { return scale(a, s); }

}  // namespace ad
}  // namespace vspcn
