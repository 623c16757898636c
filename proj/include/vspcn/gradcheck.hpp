#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vspcn/errors.hpp"
#include "vspcn/tensor.hpp"

namespace vspcn {

/// |a - b| / max(|a|, |b|, floor)
template <std::floating_point T>
T relative_error(T a, T b, T floor = T(1e-8)) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Central finite differences of a scalar-valued function of several leaf
/// tensors. The leaves are perturbed in place and restored afterwards; the
/// function is re-evaluated twice per coordinate and never touches a Tape.
template <std::floating_point T>
std::vector<Tensor<T>> fd_gradient(const std::function<Tensor<T>()>& f,
                                   const std::vector<Tensor<T>*>& leaves, T h) {
  if (!(h > T(0))) throw ContractError("fd_gradient: step must be positive");
  auto eval = [&f] {
    Tensor<T> out = f();
    if (out.size() != 1) {
      throw ContractError("fd_gradient: function must return a scalar, got shape " +
                          shape_string(out.shape()));
    }
    return out[0];
  };
  eval();  // validates the output contract even when there is nothing to perturb

  std::vector<Tensor<T>> grads;
  grads.reserve(leaves.size());
  for (Tensor<T>* leaf : leaves) {
    Tensor<T> g(leaf->shape());
    for (std::size_t i = 0; i < leaf->size(); ++i) {
      const T saved = (*leaf)[i];
      (*leaf)[i] = saved + h;
      const T up = eval();
      (*leaf)[i] = saved - h;
      const T down = eval();
      (*leaf)[i] = saved;
      g[i] = (up - down) / (T(2) * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

/// Largest elementwise relative error between two gradient tensors.
template <std::floating_point T>
T max_relative_error(const Tensor<T>& a, const Tensor<T>& b, T floor = T(1e-8)) {
  require_same_shape(a, b, "max_relative_error");
  T worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace vspcn
