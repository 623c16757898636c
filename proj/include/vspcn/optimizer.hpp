#pragma once

#include <cmath>
#include <cstdint>

#include "vspcn/config.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/params.hpp"

namespace vspcn {

/// Moment estimates and step counts, one per parameter slot. Kept in double
/// regardless of the training precision so checkpoints are exact.
struct AdamState {
  ModelSlots<Tensor<double>> m;
  ModelSlots<Tensor<double>> v;
  ModelSlots<std::uint64_t> steps;
};

template <std::floating_point T>
AdamState init_adam_state(const ModelParams<T>& params) {
  AdamState s{like<Tensor<double>>(params), like<Tensor<double>>(params), like<std::uint64_t>(params)};
  visit_slots(
      [](const std::string&, Decay, Tensor<double>& m, Tensor<double>& v, std::uint64_t& step, const Tensor<T>& p) {
        m = Tensor<double>(p.shape());
        v = Tensor<double>(p.shape());
        step = 0;
      },
      s.m, s.v, s.steps, params);
  return s;
}

/// Global L2 norm over all non-empty gradients.
template <std::floating_point T>
double gradient_norm(const ModelSlots<Tensor<T>>& grads) {
  double sq = 0;
  visit_slots(
      [&sq](const std::string&, Decay, const Tensor<T>& g) {
        for (T x : g.values()) sq += double(x) * double(x);
      },
      grads);
  return std::sqrt(sq);
}

/// One AdamW update. Slots whose gradient is empty were not reached by the
/// loss and are left untouched: no moment update, no decay, no step count.
/// Decay is decoupled and applies only to slots marked Decay::kYes.
template <std::floating_point T>
void adamw_step(ModelParams<T>& params, AdamState& state, const ModelSlots<Tensor<T>>& grads,
                const OptimConfig& opt) {
  double clip = 1.0;
  if (opt.grad_clip > 0) {
    const double norm = gradient_norm(grads);
    if (norm > opt.grad_clip) clip = opt.grad_clip / norm;
  }
  visit_slots(
      [&](const std::string& name, Decay decay, Tensor<T>& p, Tensor<double>& m, Tensor<double>& v,
          std::uint64_t& step, const Tensor<T>& g) {
        if (g.empty()) return;
        if (g.shape() != p.shape()) throw DimensionError("adamw_step: gradient shape differs for '" + name + "'");
        ++step;
        const double bc1 = 1.0 - std::pow(opt.beta1, double(step));
        const double bc2 = 1.0 - std::pow(opt.beta2, double(step));
        const double shrink = decay == Decay::kYes ? 1.0 - opt.lr * opt.weight_decay : 1.0;
        auto pv = p.values();
        auto mv = m.values();
        auto vv = v.values();
        auto gv = g.values();
        for (std::size_t i = 0; i < pv.size(); ++i) {
          const double gi = clip * double(gv[i]);
          mv[i] = opt.beta1 * mv[i] + (1 - opt.beta1) * gi;
          vv[i] = opt.beta2 * vv[i] + (1 - opt.beta2) * gi * gi;
          const double mhat = mv[i] / bc1;
          const double vhat = vv[i] / bc2;
          pv[i] = static_cast<T>(double(pv[i]) * shrink - opt.lr * mhat / (std::sqrt(vhat) + opt.adam_eps));
        }
      },
      params, state.m, state.v, state.steps, grads);
}

}  // namespace vspcn
