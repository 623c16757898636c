#pragma once

#include "vspcn/backbone.hpp"
#include "vspcn/config.hpp"
#include "vspcn/fusion.hpp"
#include "vspcn/params.hpp"
#include "vspcn/tape.hpp"

namespace vspcn {

template <std::floating_point T>
using BoundParams = ModelSlots<Var<T>>;

/// Registers every parameter on the tape as a leaf that reads the given
/// storage in place. Gradients land on the tape, not in `params`.
template <std::floating_point T>
BoundParams<T> bind_params(Tape<T>& tape, const ModelParams<T>& params, bool requires_grad = true) {
  auto bound = like<Var<T>>(params);
  visit_slots([&](const std::string&, Decay, Var<T>& v, const Tensor<T>& t) { v = tape.param(t, requires_grad); },
              bound, params);
  return bound;
}

template <std::floating_point T>
struct ForwardResult {
  TokenSequence<T> tokens;  // F^M
  Var<T> attributes;        // S after the last adapter update (S^0 when none ran)
};

/// Full network on one image ([N_v, patch_dim]) with attribute matrix S^0
/// ([N_a, D]). Layers before `split_layer` see only the weak-fused input;
/// each later layer first adapts S, then applies strong fusion to the
/// prompts, then runs its encoder block.
template <std::floating_point T>
ForwardResult<T> forward_vspcn(Tape<T>& tape, const Tensor<T>& image, const Tensor<T>& attributes,
                               const BoundParams<T>& p, const ModelConfig& cfg, AttentionLog* log = nullptr) {
  if (p.blocks.size() != cfg.layers) throw DimensionError("forward_vspcn: parameter block count differs from config");
  const Toggles& t = cfg.toggles;
  const Var<T> patches = patchify_embed(tape.constant(image), p.patch_w, p.patch_b, p.pos);
  Var<T> s = tape.constant(attributes);

  // a disabled prompt keeps its slot but is frozen, so it gets no gradient
  Var<T> vp = t.pv ? p.vp : tape.constant(p.vp.value());
  Var<T> sp = t.ps ? p.sp : tape.constant(p.sp.value());
  if (t.pv && t.wvpf) vp = weak_visual_fusion(vp, patches, p.wvpf, log);
  if (t.ps && t.wspf) sp = weak_semantic_fusion(sp, s, p.wspf, log);
  TokenSequence<T> seq = assemble_input(p.cls, vp, sp, patches);

  const KeyMask mask{t.pv, t.ps};
  const T eps = static_cast<T>(cfg.ln_eps);
  for (std::size_t b = 0; b < cfg.layers; ++b) {
    if (b >= cfg.split_layer) {
      const std::size_t layer = seq.layer_index;
      if (t.ps && t.sspf && t.adapter) s = adapter_update(s, seq.patches, p.adapter, cfg.alpha_a, layer, log);
      if (t.pv && t.svpf) seq.vp = strong_visual_fusion(seq.vp, seq.patches, p.svpf, p.bias_v, cfg.alpha_v, layer, log);
      if (t.ps && t.sspf) seq.sp = strong_semantic_fusion(seq.sp, s, p.sspf, p.bias_s, cfg.alpha_s, layer, log);
    }
    seq = block_forward(seq, p.blocks[b], cfg.heads, eps, mask, log);
  }
  return {seq, s};
}

}  // namespace vspcn
