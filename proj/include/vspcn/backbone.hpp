#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "vspcn/errors.hpp"
#include "vspcn/params.hpp"
#include "vspcn/tape.hpp"

namespace vspcn {

/// Attention weights captured during a forward pass, kept for inspection
/// and CSV export. `layer` is the index of the layer whose tokens issued
/// the queries; weak fusion records use layer 0.
struct AttentionRecord {
  std::string site;  // "block", "wvpf", "wspf", "svpf.attn", "svpf.bias", ...
  std::size_t layer = 0;
  std::size_t head = 0;
  std::vector<std::size_t> keys;  // key token indices (sequence positions or attribute rows)
  Tensor<double> weights;         // queries x keys
};

using AttentionLog = std::vector<AttentionRecord>;

template <std::floating_point T>
void record_attention(AttentionLog* log, std::string site, std::size_t layer, std::size_t head,
                      std::vector<std::size_t> keys, const Var<T>& weights) {
  if (!log) return;
  log->push_back({std::move(site), layer, head, std::move(keys), weights.value().template cast<double>()});
}

inline std::vector<std::size_t> iota_keys(std::size_t n, std::size_t first = 0) {
  std::vector<std::size_t> k(n);
  for (std::size_t i = 0; i < n; ++i) k[i] = first + i;
  return k;
}

/// [cls, vp, sp, patches...] at some depth. Positions 0, 1, 2 hold the CLS
/// token and the two prompts; patches follow from position 3.
template <std::floating_point T>
struct TokenSequence {
  Var<T> cls;
  Var<T> vp;
  Var<T> sp;
  Var<T> patches;  // N_v x D
  std::size_t layer_index = 0;

  std::size_t length() const { return patches.rows() + 3; }
  Var<T> stacked() const { return ad::concat_rows<T>({cls, vp, sp, patches}); }
};

/// Inverse of TokenSequence::stacked.
template <std::floating_point T>
TokenSequence<T> split_sequence(const Var<T>& stacked, std::size_t layer_index) {
  if (stacked.rows() < 4) throw DimensionError("token sequence needs at least one patch token");
  return {ad::slice_rows(stacked, 0, 1), ad::slice_rows(stacked, 1, 1), ad::slice_rows(stacked, 2, 1),
          ad::slice_rows(stacked, 3, stacked.rows() - 3), layer_index};
}

/// One D-dim token per patch: image * W_e + b_e + pos.
template <std::floating_point T>
Var<T> patchify_embed(const Var<T>& image, const Var<T>& patch_w, const Var<T>& patch_b, const Var<T>& pos) {
  if (image.cols() != patch_w.rows() || image.rows() != pos.rows()) {
    throw DimensionError("patchify_embed: image " + shape_string(image.shape()) + " does not fit embedding " +
                         shape_string(patch_w.shape()) + " with " + std::to_string(pos.rows()) + " positions");
  }
  return ad::add(ad::add_row(ad::matmul(image, patch_w), patch_b), pos);
}

template <std::floating_point T>
TokenSequence<T> assemble_input(const Var<T>& cls, const Var<T>& vp, const Var<T>& sp, const Var<T>& patches) {
  const std::size_t d = patches.cols();
  for (const Var<T>* piece : {&cls, &vp, &sp}) {
    if (piece->rows() != 1 || piece->cols() != d) {
      throw DimensionError("assemble_input: token " + shape_string(piece->shape()) + " does not match width " +
                           std::to_string(d));
    }
  }
  return {cls, vp, sp, patches, 0};
}

/// Which of the three leading tokens may be attended to. Disabled prompts
/// still occupy their positions (sequence length never changes) but no
/// query can see them.
struct KeyMask {
  bool vp = true;
  bool sp = true;

  std::vector<std::size_t> keys(std::size_t length) const {
    std::vector<std::size_t> k{0};
    if (vp) k.push_back(1);
    if (sp) k.push_back(2);
    for (std::size_t i = 3; i < length; ++i) k.push_back(i);
    return k;
  }
  bool all() const { return vp && sp; }
};

/// Pre-norm encoder block:  x + MHA(LN(x)),  then  + MLP(LN(.)).
template <std::floating_point T>
TokenSequence<T> block_forward(const TokenSequence<T>& seq, const BlockSlots<Var<T>>& p, std::size_t heads,
                               T ln_eps, KeyMask mask = {}, AttentionLog* log = nullptr) {
  using namespace ad;
  const Var<T> x = seq.stacked();
  const std::size_t d = x.cols();
  if (heads == 0 || d % heads != 0) throw DimensionError("block_forward: heads must divide the token width");
  const std::size_t dh = d / heads;

  const Var<T> h = layer_norm(x, p.ln1_gamma, p.ln1_beta, ln_eps);
  const Var<T> q = add_row(matmul(h, p.w_q), p.b_q);
  Var<T> k = matmul(h, p.w_k);  // a key bias would shift every score of a query equally
  Var<T> v = add_row(matmul(h, p.w_v), p.b_v);
  const auto keys = mask.keys(x.rows());
  if (!mask.all()) {
    k = gather_rows(k, keys);
    v = gather_rows(v, keys);
  }
  const T inv_sqrt = T(1) / std::sqrt(T(dh));
  std::vector<Var<T>> outs;
  for (std::size_t hd = 0; hd < heads; ++hd) {
    const Var<T> qh = heads == 1 ? q : slice_cols(q, hd * dh, dh);
    const Var<T> kh = heads == 1 ? k : slice_cols(k, hd * dh, dh);
    const Var<T> vh = heads == 1 ? v : slice_cols(v, hd * dh, dh);
    const Var<T> attn = softmax_rows(scale(matmul_nt(qh, kh), inv_sqrt));
    record_attention(log, "block", seq.layer_index, hd, keys, attn);
    outs.push_back(matmul(attn, vh));
  }
  const Var<T> merged = heads == 1 ? outs.front() : concat_cols(outs);
  const Var<T> x1 = add(x, add_row(matmul(merged, p.w_o), p.b_o));

  const Var<T> h2 = layer_norm(x1, p.ln2_gamma, p.ln2_beta, ln_eps);
  const Var<T> hidden = gelu(add_row(matmul(h2, p.w_fc1), p.b_fc1));
  const Var<T> x2 = add(x1, add_row(matmul(hidden, p.w_fc2), p.b_fc2));
  return split_sequence(x2, seq.layer_index + 1);
}

}  // namespace vspcn
