#pragma once

#include <string>

#include "vspcn/config.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/tape.hpp"

namespace vspcn {

namespace detail {

inline void check_label(std::size_t y, std::size_t n, const char* op) {
  if (y >= n) {
    throw ContractError(std::string(op) + ": label " + std::to_string(y) + " outside [0, " + std::to_string(n) + ")");
  }
}

template <std::floating_point T>
void check_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
}

}  // namespace detail

/// -log softmax(logits)[y] for a 1 x C row of logits.
template <std::floating_point T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t y) {
  if (logits.rows() != 1) throw DimensionError("cross_entropy expects a single row of logits");
  detail::check_label(y, logits.cols(), "cross_entropy");
  return ad::scale(ad::pick(ad::log_softmax_rows(logits), 0, y), T(-1));
}

/// KL(softmax(p) || softmax(q)) for two single-row logit vectors.
template <std::floating_point T>
Var<T> kl_divergence(const Var<T>& p_logits, const Var<T>& q_logits) {
  detail::check_same_shape(p_logits, q_logits, "kl_divergence");
  using namespace ad;
  const Var<T> log_p = log_softmax_rows(p_logits);
  return sum(mul(softmax_rows(p_logits), sub(log_p, log_softmax_rows(q_logits))));
}

/// Classification over the seen classes, scores f_cls . prototype.
template <std::floating_point T>
Var<T> loss_cls(const Var<T>& f_cls, const Var<T>& seen_prototypes, std::size_t y) {
  detail::check_label(y, seen_prototypes.rows(), "loss_cls");
  return cross_entropy(ad::matmul_nt(f_cls, seen_prototypes), y);
}

/// Squared L2 distance between the CLS feature and its class prototype.
template <std::floating_point T>
Var<T> loss_ar(const Var<T>& f_cls, const Var<T>& proto_gt) {
  detail::check_same_shape(f_cls, proto_gt, "loss_ar");
  return ad::sum(ad::square(ad::sub(f_cls, proto_gt)));
}

/// eta1 * CE_vp + eta2 * log((CE_vp + CE_cls) / max(KL, eps) + 1), where
/// the CE terms classify through w_c and the KL compares the softmaxed raw
/// tokens (or the w_c logits, when kl_over_logits is set).
template <std::floating_point T>
Var<T> loss_ced(const Var<T>& f_vp, const Var<T>& f_cls, const Var<T>& w_c, std::size_t y, const LossWeights& w) {
  detail::check_same_shape(f_vp, f_cls, "loss_ced");
  detail::check_label(y, w_c.cols(), "loss_ced");
  using namespace ad;
  const Var<T> logits_vp = matmul(f_vp, w_c);
  const Var<T> logits_cls = matmul(f_cls, w_c);
  const Var<T> ce_vp = cross_entropy(logits_vp, y);
  const Var<T> ce_cls = cross_entropy(logits_cls, y);
  const Var<T> kl = w.kl_over_logits ? kl_divergence(logits_vp, logits_cls) : kl_divergence(f_vp, f_cls);
  const Var<T> ratio = div(add(ce_vp, ce_cls), clamp_min(kl, static_cast<T>(w.eps_kl)));
  const Var<T> l_ed = log(add_scalar(ratio, T(1)));
  return add(scale(ce_vp, static_cast<T>(w.eta1)), scale(l_ed, static_cast<T>(w.eta2)));
}

/// Symmetric KL between the semantic prompt and the class prototype, plus
/// squared distance to the ground-truth prototype.
template <std::floating_point T>
Var<T> loss_skd(const Var<T>& f_sp, const Var<T>& proto_y, const Var<T>& proto_gt) {
  detail::check_same_shape(f_sp, proto_y, "loss_skd");
  detail::check_same_shape(f_sp, proto_gt, "loss_skd");
  using namespace ad;
  const Var<T> sym = scale(add(kl_divergence(f_sp, proto_y), kl_divergence(proto_y, f_sp)), T(0.5));
  return add(sym, sum(square(sub(proto_gt, f_sp))));
}

struct LossBreakdown {
  double cls = 0;
  double ar = 0;
  double ced = 0;
  double skd = 0;
  double total = 0;
};

template <std::floating_point T>
struct LossResult {
  Var<T> total;
  LossBreakdown parts;
};

/// Inputs of the objective for one sample: final CLS / prompt tokens, the
/// embedded seen-class prototypes and the auxiliary classifier.
template <std::floating_point T>
struct LossInputs {
  Var<T> f_cls;
  Var<T> f_vp;
  Var<T> f_sp;
  Var<T> seen_prototypes;  // N_s x D
  Var<T> w_c;              // D x N_s
  std::size_t label = 0;
  bool visual_prompt = true;    // CED is defined only when the visual prompt exists
  bool semantic_prompt = true;  // likewise SKD for the semantic prompt
};

/// CLS + gamma * AR + lambda_ced * CED + lambda_skd * SKD. Every enabled
/// component is reported; components with zero weight are left out of the
/// differentiated total so they cannot leak gradient.
template <std::floating_point T>
LossResult<T> loss_total(const LossInputs<T>& in, const LossWeights& w) {
  using namespace ad;
  vspcn::detail::check_label(in.label, in.seen_prototypes.rows(), "loss_total");
  const Var<T> proto = slice_rows(in.seen_prototypes, in.label, 1);
  LossResult<T> out;
  Var<T> total = loss_cls(in.f_cls, in.seen_prototypes, in.label);
  out.parts.cls = total.value()[0];

  const Var<T> ar = loss_ar(in.f_cls, proto);
  out.parts.ar = ar.value()[0];
  if (w.gamma != 0.0) total = add(total, scale(ar, static_cast<T>(w.gamma)));

  if (in.visual_prompt) {
    const Var<T> ced = loss_ced(in.f_vp, in.f_cls, in.w_c, in.label, w);
    out.parts.ced = ced.value()[0];
    if (w.lambda_ced != 0.0) total = add(total, scale(ced, static_cast<T>(w.lambda_ced)));
  }
  if (in.semantic_prompt) {
    const Var<T> skd = loss_skd(in.f_sp, proto, proto);
    out.parts.skd = skd.value()[0];
    if (w.lambda_skd != 0.0) total = add(total, scale(skd, static_cast<T>(w.lambda_skd)));
  }
  out.parts.total = total.value()[0];
  out.total = total;
  return out;
}

}  // namespace vspcn
