#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "vspcn/backbone.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/params.hpp"
#include "vspcn/tape.hpp"

// Prompt fusion sites. All of them are single-head cross attention with
// q/k/v projections and no biases; queries come from the prompt (or from the
// attribute rows, for the adapter) and keys/values from the other tokens.
namespace vspcn {

template <std::floating_point T>
struct CrossAttention {
  Var<T> weights;  // queries x keys
  Var<T> values;   // keys x D, already projected
  Var<T> output;   // weights * values
};

template <std::floating_point T>
CrossAttention<T> cross_attention(const Var<T>& queries, const Var<T>& kv, const FusionSlots<Var<T>>& p,
                                  const char* site) {
  if (queries.cols() != p.w_q.rows() || kv.cols() != p.w_k.rows()) {
    throw DimensionError(std::string(site) + ": queries " + shape_string(queries.shape()) + " / keys " +
                         shape_string(kv.shape()) + " do not fit projections " + shape_string(p.w_q.shape()));
  }
  using namespace ad;
  const T inv_sqrt = T(1) / std::sqrt(T(p.w_q.cols()));
  const Var<T> q = matmul(queries, p.w_q);
  const Var<T> k = matmul(kv, p.w_k);
  const Var<T> v = matmul(kv, p.w_v);
  const Var<T> w = softmax_rows(scale(matmul_nt(q, k), inv_sqrt));
  return {w, v, matmul(w, v)};
}

template <std::floating_point T>
void require_prompt(const Var<T>& prompt, const char* site) {
  if (prompt.rows() != 1) {
    throw DimensionError(std::string(site) + ": prompt must be a single token, got " + shape_string(prompt.shape()));
  }
}

/// Weak fusion: the prompt is replaced by its attention readout over the
/// keys. No residual.
template <std::floating_point T>
Var<T> weak_visual_fusion(const Var<T>& vp, const Var<T>& patches, const FusionSlots<Var<T>>& p,
                          AttentionLog* log = nullptr) {
  require_prompt(vp, "weak_visual_fusion");
  auto a = cross_attention(vp, patches, p, "weak_visual_fusion");
  record_attention(log, "wvpf", 0, 0, iota_keys(patches.rows()), a.weights);
  return a.output;
}

template <std::floating_point T>
Var<T> weak_semantic_fusion(const Var<T>& sp, const Var<T>& attributes, const FusionSlots<Var<T>>& p,
                            AttentionLog* log = nullptr) {
  require_prompt(sp, "weak_semantic_fusion");
  auto a = cross_attention(sp, attributes, p, "weak_semantic_fusion");
  record_attention(log, "wspf", 0, 0, iota_keys(attributes.rows()), a.weights);
  return a.output;
}

namespace detail {

// [alpha * attention + (1 - alpha) * softmax(bias)] * v + prompt, where the
// bias logit of each key token is a learned linear functional of that token.
template <std::floating_point T>
Var<T> strong_fusion(const Var<T>& prompt, const Var<T>& kv, const FusionSlots<Var<T>>& p, const Var<T>& bias_head,
                     double alpha_in, const char* site, const char* tag, std::size_t layer, AttentionLog* log) {
  require_prompt(prompt, site);
  if (bias_head.rows() != kv.cols() || bias_head.cols() != 1) {
    throw DimensionError(std::string(site) + ": bias head " + shape_string(bias_head.shape()) +
                         " does not fit keys " + shape_string(kv.shape()));
  }
  using namespace ad;
  const T alpha = static_cast<T>(std::clamp(alpha_in, 0.0, 1.0));
  auto a = cross_attention(prompt, kv, p, site);
  const Var<T> bias = softmax_rows(transpose(matmul(kv, bias_head)));
  const Var<T> mix = add(scale(a.weights, alpha), scale(bias, T(1) - alpha));
  if (log) {
    const auto keys = iota_keys(kv.rows());
    const std::string s(tag);
    record_attention(log, s + ".attn", layer, 0, keys, a.weights);
    record_attention(log, s + ".bias", layer, 0, keys, bias);
    record_attention(log, s + ".mix", layer, 0, keys, mix);
  }
  return add(matmul(mix, a.values), prompt);
}

}  // namespace detail

/// Strong visual fusion over the patch tokens of the current layer; the
/// CLS and semantic prompt tokens are not keys.
template <std::floating_point T>
Var<T> strong_visual_fusion(const Var<T>& vp, const Var<T>& patches, const FusionSlots<Var<T>>& p,
                            const Var<T>& bias_head, double alpha, std::size_t layer = 0, AttentionLog* log = nullptr) {
  return detail::strong_fusion(vp, patches, p, bias_head, alpha, "strong_visual_fusion", "svpf", layer, log);
}

template <std::floating_point T>
Var<T> strong_semantic_fusion(const Var<T>& sp, const Var<T>& attributes, const FusionSlots<Var<T>>& p,
                              const Var<T>& bias_head, double alpha, std::size_t layer = 0,
                              AttentionLog* log = nullptr) {
  return detail::strong_fusion(sp, attributes, p, bias_head, alpha, "strong_semantic_fusion", "sspf", layer, log);
}

/// S' = alpha * attend(S -> patches) + (1 - alpha) * S, one query per
/// attribute row.
template <std::floating_point T>
Var<T> adapter_update(const Var<T>& attributes, const Var<T>& patches, const FusionSlots<Var<T>>& p,
                      double alpha_in, std::size_t layer = 0, AttentionLog* log = nullptr) {
  const T alpha = static_cast<T>(std::clamp(alpha_in, 0.0, 1.0));
  if (alpha == T(0)) {
    if (attributes.cols() != patches.cols()) throw DimensionError("adapter_update: attribute and token widths differ");
    return attributes;
  }
  auto a = cross_attention(attributes, patches, p, "adapter_update");
  record_attention(log, "adapter", layer, 0, iota_keys(patches.rows()), a.weights);
  return ad::add(ad::scale(a.output, alpha), ad::scale(attributes, T(1) - alpha));
}

}  // namespace vspcn
