#pragma once

#include <cmath>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "vspcn/config.hpp"
#include "vspcn/tensor.hpp"

namespace vspcn {

/// Whether decoupled weight decay applies. Only weight matrices decay;
/// norms, biases, prompts, CLS and positional embeddings do not.
enum class Decay { kYes, kNo };

template <class S>
struct BlockSlots {
  S ln1_gamma, ln1_beta;
  S w_q, b_q, w_k, w_v, b_v, w_o, b_o;  // no key bias: softmax ignores it
  S ln2_gamma, ln2_beta;
  S w_fc1, b_fc1, w_fc2, b_fc2;
};

// q/k/v projections of one fusion site (no biases).
template <class S>
struct FusionSlots {
  S w_q, w_k, w_v;
};

/// Every learnable of the network, parameterised on what each slot holds:
/// tensors for the parameters themselves, tape handles while a forward pass
/// is recorded, gradient buffers or optimiser state during training.
template <class S>
struct ModelSlots {
  S cls, vp, sp;
  S patch_w, patch_b, pos;
  std::vector<BlockSlots<S>> blocks;
  FusionSlots<S> wvpf, wspf, svpf, sspf, adapter;
  S bias_v, bias_s;  // D x 1 bias heads of strong visual / semantic fusion
  S w_d;             // N_a x D prototype embedding
  S w_c;             // D x N_s auxiliary classifier
};

/// Calls f(name, decay, slot_of_each_model...) for every slot, in a fixed
/// order shared by checkpoints, optimisers and gradient checks. All models
/// must have the same block count.
template <class F, class First, class... Rest>
void visit_slots(F&& f, First& first, Rest&... rest) {
  auto one = [&](const std::string& name, Decay decay, auto get) { f(name, decay, get(first), get(rest)...); };
#define VSPCN_SLOT(expr) [&](auto& m) -> auto& { return m.expr; }
  one("cls", Decay::kNo, VSPCN_SLOT(cls));
  one("vp", Decay::kNo, VSPCN_SLOT(vp));
  one("sp", Decay::kNo, VSPCN_SLOT(sp));
  one("patch_w", Decay::kYes, VSPCN_SLOT(patch_w));
  one("patch_b", Decay::kNo, VSPCN_SLOT(patch_b));
  one("pos", Decay::kNo, VSPCN_SLOT(pos));
  for (std::size_t b = 0; b < first.blocks.size(); ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    one(pre + "ln1_gamma", Decay::kNo, VSPCN_SLOT(blocks[b].ln1_gamma));
    one(pre + "ln1_beta", Decay::kNo, VSPCN_SLOT(blocks[b].ln1_beta));
    one(pre + "w_q", Decay::kYes, VSPCN_SLOT(blocks[b].w_q));
    one(pre + "b_q", Decay::kNo, VSPCN_SLOT(blocks[b].b_q));
    one(pre + "w_k", Decay::kYes, VSPCN_SLOT(blocks[b].w_k));
    one(pre + "w_v", Decay::kYes, VSPCN_SLOT(blocks[b].w_v));
    one(pre + "b_v", Decay::kNo, VSPCN_SLOT(blocks[b].b_v));
    one(pre + "w_o", Decay::kYes, VSPCN_SLOT(blocks[b].w_o));
    one(pre + "b_o", Decay::kNo, VSPCN_SLOT(blocks[b].b_o));
    one(pre + "ln2_gamma", Decay::kNo, VSPCN_SLOT(blocks[b].ln2_gamma));
    one(pre + "ln2_beta", Decay::kNo, VSPCN_SLOT(blocks[b].ln2_beta));
    one(pre + "w_fc1", Decay::kYes, VSPCN_SLOT(blocks[b].w_fc1));
    one(pre + "b_fc1", Decay::kNo, VSPCN_SLOT(blocks[b].b_fc1));
    one(pre + "w_fc2", Decay::kYes, VSPCN_SLOT(blocks[b].w_fc2));
    one(pre + "b_fc2", Decay::kNo, VSPCN_SLOT(blocks[b].b_fc2));
  }
#define VSPCN_SITE(site)                                     \
  one(#site ".w_q", Decay::kYes, VSPCN_SLOT(site.w_q));     \
  one(#site ".w_k", Decay::kYes, VSPCN_SLOT(site.w_k));     \
  one(#site ".w_v", Decay::kYes, VSPCN_SLOT(site.w_v))
  VSPCN_SITE(wvpf);
  VSPCN_SITE(wspf);
  VSPCN_SITE(svpf);
  VSPCN_SITE(sspf);
  VSPCN_SITE(adapter);
#undef VSPCN_SITE
  one("bias_v", Decay::kYes, VSPCN_SLOT(bias_v));
  one("bias_s", Decay::kYes, VSPCN_SLOT(bias_s));
  one("w_d", Decay::kYes, VSPCN_SLOT(w_d));
  one("w_c", Decay::kYes, VSPCN_SLOT(w_c));
#undef VSPCN_SLOT
}

template <std::floating_point T>
using ModelParams = ModelSlots<Tensor<T>>;

/// Same layout with every slot default-constructed (block count preserved).
template <class S, class U>
ModelSlots<S> like(const ModelSlots<U>& other) {
  ModelSlots<S> out;
  out.blocks.resize(other.blocks.size());
  return out;
}

template <std::floating_point To, std::floating_point From>
ModelParams<To> convert_params(const ModelParams<From>& in) {
  auto out = like<Tensor<To>>(in);
  visit_slots([](const std::string&, Decay, Tensor<To>& dst, const Tensor<From>& src) { dst = src.template cast<To>(); },
              out, in);
  return out;
}

/// Fresh parameters. Weight matrices draw N(0, 1/fan_in); biases are zero,
/// norm scales one; prompts, CLS and positional embeddings draw
/// N(0, init_scale^2).
template <std::floating_point T>
ModelParams<T> init_params(const ModelConfig& m, std::size_t n_attr, std::size_t n_seen, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const std::size_t d = m.d_model;
  auto gauss = [&](Shape shape, double stddev) {
    Tensor<T> t(std::move(shape));
    for (auto& v : t.values()) v = static_cast<T>(stddev * normal(rng));
    return t;
  };
  auto fan_in = [&](std::size_t rows, std::size_t cols) { return gauss({rows, cols}, 1.0 / std::sqrt(double(rows))); };
  auto zeros = [](std::size_t rows, std::size_t cols) { return Tensor<T>({rows, cols}); };
  auto ones = [](std::size_t rows, std::size_t cols) { return Tensor<T>({rows, cols}, T(1)); };

  ModelParams<T> p;
  p.cls = gauss({1, d}, m.init_scale);
  p.vp = gauss({1, d}, m.init_scale);
  p.sp = gauss({1, d}, m.init_scale);
  p.patch_w = fan_in(m.patch_dim, d);
  p.patch_b = zeros(1, d);
  p.pos = gauss({m.num_patches(), d}, m.init_scale);
  for (std::size_t b = 0; b < m.layers; ++b) {
    BlockSlots<Tensor<T>> blk;
    blk.ln1_gamma = ones(1, d);
    blk.ln1_beta = zeros(1, d);
    blk.w_q = fan_in(d, d);
    blk.b_q = zeros(1, d);
    blk.w_k = fan_in(d, d);
    blk.w_v = fan_in(d, d);
    blk.b_v = zeros(1, d);
    blk.w_o = fan_in(d, d);
    blk.b_o = zeros(1, d);
    blk.ln2_gamma = ones(1, d);
    blk.ln2_beta = zeros(1, d);
    blk.w_fc1 = fan_in(d, m.mlp_hidden);
    blk.b_fc1 = zeros(1, m.mlp_hidden);
    blk.w_fc2 = fan_in(m.mlp_hidden, d);
    blk.b_fc2 = zeros(1, d);
    p.blocks.push_back(std::move(blk));
  }
  for (auto* site : {&p.wvpf, &p.wspf, &p.svpf, &p.sspf, &p.adapter}) {
    site->w_q = fan_in(d, d);
    site->w_k = fan_in(d, d);
    site->w_v = fan_in(d, d);
  }
  p.bias_v = fan_in(d, 1);
  p.bias_s = fan_in(d, 1);
  p.w_d = gauss({n_attr, d}, 1.0 / std::sqrt(double(d)));
  p.w_c = fan_in(d, n_seen);
  return p;
}

template <std::floating_point T>
std::size_t parameter_count(const ModelParams<T>& p) {
  std::size_t n = 0;
  visit_slots([&n](const std::string&, Decay, const Tensor<T>& t) { n += t.size(); }, p);
  return n;
}

}  // namespace vspcn
