#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "vspcn/attributes.hpp"
#include "vspcn/checkpoint.hpp"
#include "vspcn/config.hpp"
#include "vspcn/dataset.hpp"
#include "vspcn/eval.hpp"
#include "vspcn/gradcheck.hpp"
#include "vspcn/losses.hpp"
#include "vspcn/model.hpp"
#include "vspcn/optimizer.hpp"

namespace vspcn {

/// Independent seed for one consumer (data, init, shuffling) of a run seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t { kDataStream = 1, kInitStream = 2, kShuffleStream = 3 };

template <std::floating_point T>
struct TrainState {
  ModelParams<T> params;
  AdamState optimizer;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
};

template <std::floating_point T>
TrainState<T> fresh_state(const RunConfig& cfg) {
  TrainState<T> s;
  s.params = init_params<T>(cfg.model, cfg.data.n_attr, cfg.data.n_seen, derive_seed(cfg.seed, kInitStream));
  s.optimizer = init_adam_state(s.params);
  return s;
}

template <std::floating_point T>
Checkpoint to_checkpoint(const TrainState<T>& s, const RunConfig& cfg) {
  return {config_to_text(cfg), s.epoch, s.step, convert_params<double>(s.params), s.optimizer};
}

template <std::floating_point T>
TrainState<T> from_checkpoint(const Checkpoint& ck) {
  return {convert_params<T>(ck.params), ck.optimizer, ck.epoch, ck.step};
}

/// Loss and parameter gradients of one training sample.
template <std::floating_point T>
struct SampleGradients {
  LossBreakdown loss;
  ModelSlots<Tensor<T>> grads;  // empty where the loss does not reach
};

/// Tensors shared by every sample of a dataset, converted once.
template <std::floating_point T>
struct DatasetTensors {
  Tensor<T> attributes;       // S^0
  Tensor<T> seen_attributes;  // class attribute rows of the seen classes
  Tensor<T> all_attributes;

  explicit DatasetTensors(const GzslDataset& ds)
      : attributes(ds.attributes.template cast<T>()),
        seen_attributes(ds.seen_class_attributes().template cast<T>()),
        all_attributes(ds.class_attributes.template cast<T>()) {}
};

/// Records forward and loss on `tape`; returns the loss for further use.
template <std::floating_point T>
LossResult<T> record_sample_loss(Tape<T>& tape, const BoundParams<T>& bound, const DatasetTensors<T>& data,
                                 const Tensor<T>& image, std::size_t label, const RunConfig& cfg) {
  const auto fwd = forward_vspcn(tape, image, data.attributes, bound, cfg.model);
  const Var<T> protos = embed_prototypes(tape.constant(data.seen_attributes), bound.w_d);
  LossInputs<T> in{fwd.tokens.cls, fwd.tokens.vp, fwd.tokens.sp, protos, bound.w_c, label,
                   cfg.model.toggles.pv, cfg.model.toggles.ps};
  return loss_total(in, cfg.loss);
}

template <std::floating_point T>
SampleGradients<T> sample_gradients(const ModelParams<T>& params, const DatasetTensors<T>& data,
                                    const Tensor<T>& image, std::size_t label, const RunConfig& cfg) {
  Tape<T> tape;
  const auto bound = bind_params(tape, params);
  const auto loss = record_sample_loss(tape, bound, data, image, label, cfg);
  if (!std::isfinite(loss.parts.total)) throw NumericError("non-finite training loss");
  tape.backward(loss.total);
  SampleGradients<T> out{loss.parts, like<Tensor<T>>(params)};
  visit_slots([&tape](const std::string&, Decay, Tensor<T>& g, const Var<T>& v) { g = tape.grad(v); }, out.grads,
              bound);
  return out;
}

inline std::string train_log_header() { return "step,L_CLS,L_AR,L_CED,L_SKD,total\n"; }

inline std::string train_log_row(std::uint64_t step, const LossBreakdown& l) {
  return std::to_string(step) + "," + format_double(l.cls) + "," + format_double(l.ar) + "," +
         format_double(l.ced) + "," + format_double(l.skd) + "," + format_double(l.total) + "\n";
}

struct TrainOptions {
  std::ostream* log = nullptr;          // CSV: header on a fresh run, then one row per optimizer step
  std::string failure_checkpoint;       // last-good state is written here on numeric failure
  std::function<void(std::uint64_t epoch, const LossBreakdown& mean)> on_epoch;
};

/// Order in which the training samples of one epoch are visited.
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(derive_seed(seed, kShuffleStream), epoch));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

/// Runs the remaining epochs of cfg.optim.epochs (resuming from state.epoch).
/// Each mini-batch averages per-sample gradients, then takes one AdamW step.
/// A non-finite loss or gradient stops training: the state from before the
/// failing step is saved to options.failure_checkpoint and NumericError is
/// rethrown.
template <std::floating_point T>
void train(TrainState<T>& state, const GzslDataset& ds, const RunConfig& cfg, const TrainOptions& options = {}) {
  validate(cfg);
  check_dataset_fits(ds, cfg);
  if (ds.train.size() == 0) throw ContractError("train: empty training split");
  const DatasetTensors<T> data(ds);
  std::vector<Tensor<T>> images;
  images.reserve(ds.train.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) images.push_back(ds.train.image(i).template cast<T>());

  if (options.log && state.step == 0) *options.log << train_log_header();
  const std::size_t batch = std::max<std::size_t>(1, cfg.optim.batch_size);
  for (; state.epoch < cfg.optim.epochs; ++state.epoch) {
    const auto order = epoch_order(images.size(), cfg.seed, state.epoch);
    LossBreakdown epoch_sum;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(order.size(), start + batch);
      const T inv = T(1) / T(end - start);
      auto grads = like<Tensor<T>>(state.params);
      LossBreakdown mean;
      try {
        for (std::size_t i = start; i < end; ++i) {
          const std::size_t idx = order[i];
          auto sg = sample_gradients(state.params, data, images[idx], ds.train.labels[idx], cfg);
          visit_slots(
              [inv](const std::string&, Decay, Tensor<T>& acc, const Tensor<T>& g) {
                if (g.empty()) return;
                if (acc.empty()) acc = Tensor<T>(g.shape());
                auto a = acc.values();
                auto gv = g.values();
                for (std::size_t k = 0; k < a.size(); ++k) a[k] += inv * gv[k];
              },
              grads, sg.grads);
          mean.cls += sg.loss.cls;
          mean.ar += sg.loss.ar;
          mean.ced += sg.loss.ced;
          mean.skd += sg.loss.skd;
          mean.total += sg.loss.total;
        }
      } catch (const NumericError& e) {
        if (!options.failure_checkpoint.empty()) save_checkpoint(to_checkpoint(state, cfg), options.failure_checkpoint);
        throw NumericError(std::string(e.what()) + " at epoch " + std::to_string(state.epoch) + ", step " +
                           std::to_string(state.step + 1) +
                           (options.failure_checkpoint.empty()
                                ? std::string()
                                : "; last good state saved to " + options.failure_checkpoint));
      }
      const double n = double(end - start);
      for (double* v : {&mean.cls, &mean.ar, &mean.ced, &mean.skd, &mean.total}) *v /= n;
      adamw_step(state.params, state.optimizer, grads, cfg.optim);
      ++state.step;
      if (options.log) *options.log << train_log_row(state.step, mean);
      const double share = n / double(order.size());
      epoch_sum.cls += mean.cls * share;
      epoch_sum.ar += mean.ar * share;
      epoch_sum.ced += mean.ced * share;
      epoch_sum.skd += mean.skd * share;
      epoch_sum.total += mean.total * share;
    }
    if (options.on_epoch) options.on_epoch(state.epoch + 1, epoch_sum);
  }
}

/// Top-1 accuracy (percent) of a split with the label space restricted to
/// the seen classes.
template <std::floating_point T>
double seen_accuracy(const ModelParams<T>& params, const GzslDataset& ds, const Split& split, const ModelConfig& cfg) {
  if (split.size() == 0) throw ContractError("seen_accuracy: empty split");
  const DatasetTensors<T> data(ds);
  const Tensor<T> protos = embed_prototypes(data.seen_attributes, params.w_d);
  std::size_t hits = 0;
  const std::vector<bool> none(ds.n_seen, false);
  for (std::size_t i = 0; i < split.size(); ++i) {
    const Tensor<T> f = cls_feature(params, split.image(i).template cast<T>(), data.attributes, cfg);
    hits += calibrated_predict(f, protos, none, 0.0) == split.labels[i];
  }
  return 100.0 * double(hits) / double(split.size());
}

// ---------------------------------------------------------------------------
// Gradient check of the full objective against central differences.

struct ParamCheck {
  std::string name;
  double max_elementwise = 0;  // max_i |g_i - fd_i| / max(|g_i|, |fd_i|, 1e-8)
  double norm_relative = 0;    // ||g - fd|| / max(||g||, ||fd||, 1e-8)
  double grad_norm = 0;
};

inline double norm_relative_error(const Tensor<double>& a, const Tensor<double>& b) {
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

/// Reverse-mode versus finite-difference gradients of the total loss of one
/// sample, for every learnable the loss reaches. Parameters the loss does
/// not reach must have an all-zero finite difference; they are reported
/// with an empty analytic gradient treated as zero.
inline std::vector<ParamCheck> gradcheck_sample(ModelParams<double>& params, const GzslDataset& ds, std::size_t index,
                                                const RunConfig& cfg, double h = 1e-5) {
  const DatasetTensors<double> data(ds);
  const Tensor<double> image = ds.train.image(index);
  const std::size_t label = ds.train.labels[index];
  const auto analytic = sample_gradients(params, data, image, label, cfg);

  std::vector<Tensor<double>*> leaves;
  std::vector<std::string> names;
  visit_slots(
      [&](const std::string& name, Decay, Tensor<double>& p) {
        leaves.push_back(&p);
        names.push_back(name);
      },
      params);
  const std::function<Tensor<double>()> f = [&] {
    Tape<double> tape;
    const auto bound = bind_params(tape, params, false);
    return record_sample_loss(tape, bound, data, image, label, cfg).total.value();
  };
  const auto numeric = fd_gradient(f, leaves, h);

  std::vector<ParamCheck> out;
  std::size_t i = 0;
  visit_slots(
      [&](const std::string&, Decay, const Tensor<double>& g) {
        const Tensor<double> a = g.empty() ? Tensor<double>(numeric[i].shape()) : g;
        ParamCheck c{names[i], max_relative_error(a, numeric[i]), norm_relative_error(a, numeric[i]), 0};
        for (double x : a.values()) c.grad_norm += x * x;
        c.grad_norm = std::sqrt(c.grad_norm);
        out.push_back(c);
        ++i;
      },
      analytic.grads);
  return out;
}

// ---------------------------------------------------------------------------
// Ablation harness.

struct AblationRow {
  std::string name;
  Toggles toggles;
};

/// The eight component configurations of the ablation table, in order.
inline std::vector<AblationRow> standard_ablation_rows() {
  auto t = [](bool pv, bool ps, bool wv, bool ws, bool sv, bool ss, bool ad) { return Toggles{pv, ps, wv, ws, sv, ss, ad}; };
  return {
      {"baseline", t(0, 0, 0, 0, 0, 0, 0)},
      {"pv_wvpf_svpf", t(1, 0, 1, 0, 1, 0, 0)},
      {"ps_wspf_sspf_adapter", t(0, 1, 0, 1, 0, 1, 1)},
      {"pv_ps", t(1, 1, 0, 0, 0, 0, 0)},
      {"pv_ps_weak", t(1, 1, 1, 1, 0, 0, 0)},
      {"pv_ps_strong_adapter", t(1, 1, 0, 0, 1, 1, 1)},
      {"full_no_adapter", t(1, 1, 1, 1, 1, 1, 0)},
      {"full", t(1, 1, 1, 1, 1, 1, 1)},
  };
}

/// Extra rows, one per line: name,Pv,Ps,WVPF,WSPF,SVPF,SSPF,adapter with
/// 0/1 flags. Blank lines and lines starting with '#' are skipped.
inline std::vector<AblationRow> parse_ablation_rows(std::string_view text, std::string_view origin) {
  std::vector<AblationRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos || line[line.find_first_not_of(" \t")] == '#') continue;
    std::vector<std::string> fields;
    std::istringstream ls(line);
    std::string field;
    while (std::getline(ls, field, ',')) {
      const auto b = field.find_first_not_of(" \t");
      const auto e = field.find_last_not_of(" \t");
      fields.push_back(b == std::string::npos ? "" : field.substr(b, e - b + 1));
    }
    const std::string where = std::string(origin) + ":" + std::to_string(line_no);
    if (fields.size() != 8) throw ParseError(where + ": expected name and 7 toggle flags");
    if (fields[0].empty()) throw ParseError(where + ": empty row name");
    bool flags[7];
    for (int k = 0; k < 7; ++k) {
      if (fields[k + 1] != "0" && fields[k + 1] != "1") throw ParseError(where + ": toggle flags must be 0 or 1");
      flags[k] = fields[k + 1] == "1";
    }
    rows.push_back({fields[0], {flags[0], flags[1], flags[2], flags[3], flags[4], flags[5], flags[6]}});
  }
  return rows;
}

struct AblationResult {
  AblationRow row;
  EvalReport report;  // at the configured calibration, same as train + evaluate
  EvalReport best;    // at the grid calibration with the highest H, chosen on the test splits
};

inline std::string ablation_csv_header() { return "name,Pv,Ps,WVPF,WSPF,SVPF,SSPF,adapter,tau,U,S,H,best_tau,best_H\n"; }

inline std::string ablation_csv_row(const AblationResult& r) {
  const Toggles& t = r.row.toggles;
  std::string s = r.row.name;
  for (bool b : {t.pv, t.ps, t.wvpf, t.wspf, t.svpf, t.sspf, t.adapter}) s += b ? ",1" : ",0";
  return s + "," + format_double(r.report.tau) + "," + format_double(r.report.U) + "," + format_double(r.report.S) +
         "," + format_double(r.report.H) + "," + format_double(r.best.tau) + "," + format_double(r.best.H) + "\n";
}

/// Trains and evaluates one model per row from the same seed and dataset.
template <std::floating_point T>
std::vector<AblationResult> ablate(const RunConfig& base, const GzslDataset& ds, const std::vector<AblationRow>& rows,
                                   const std::function<void(const AblationResult&)>& on_row = {}) {
  std::vector<AblationResult> out;
  for (const auto& row : rows) {
    RunConfig cfg = base;
    cfg.model.toggles = row.toggles;
    try {
      validate(cfg);
    } catch (const ConfigError& e) {
      throw ConfigError("ablation row '" + row.name + "': " + e.what());
    }
    auto state = fresh_state<T>(cfg);
    train(state, ds, cfg);
    const auto table = compute_scores(state.params, ds, cfg.model);
    const auto sweep = sweep_tau(table, tau_grid(cfg.eval), cfg.eval.macro);
    out.push_back({row, report_from_scores(table, cfg.eval.tau, cfg.eval.macro), sweep.best_report()});
    if (on_row) on_row(out.back());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Attention export.

/// Backbone attention averaged over heads: layer,query_token,key_token,weight.
inline std::string backbone_attention_csv(const AttentionLog& log) {
  std::string out = "layer,query_token,key_token,weight\n";
  std::size_t i = 0;
  while (i < log.size()) {
    if (log[i].site != "block") {
      ++i;
      continue;
    }
    const std::size_t layer = log[i].layer;
    Tensor<double> mean = log[i].weights;
    std::size_t heads = 1;
    std::size_t j = i + 1;
    for (; j < log.size() && log[j].site == "block" && log[j].layer == layer; ++j, ++heads) {
      auto dst = mean.values();
      auto src = log[j].weights.values();
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
    }
    for (std::size_t q = 0; q < mean.rows(); ++q) {
      for (std::size_t k = 0; k < mean.cols(); ++k) {
        out += std::to_string(layer) + "," + std::to_string(q) + "," + std::to_string(log[i].keys[k]) + "," +
               format_double(mean(q, k) / double(heads)) + "\n";
      }
    }
    i = j;
  }
  return out;
}

/// Fusion-site attention: site,layer,query_token,key_token,weight. Query
/// and key indices are local to the site (prompt = 0; patch or attribute
/// rows from 0).
inline std::string fusion_attention_csv(const AttentionLog& log) {
  std::string out = "site,layer,query_token,key_token,weight\n";
  for (const auto& r : log) {
    if (r.site == "block") continue;
    for (std::size_t q = 0; q < r.weights.rows(); ++q) {
      for (std::size_t k = 0; k < r.weights.cols(); ++k) {
        out += r.site + "," + std::to_string(r.layer) + "," + std::to_string(q) + "," + std::to_string(r.keys[k]) +
               "," + format_double(r.weights(q, k)) + "\n";
      }
    }
  }
  return out;
}

template <std::floating_point T>
AttentionLog collect_attention(const ModelParams<T>& params, const Tensor<T>& image, const Tensor<T>& attributes,
                               const ModelConfig& cfg) {
  AttentionLog log;
  Tape<T> tape;
  const auto bound = bind_params(tape, params, false);
  forward_vspcn(tape, image, attributes, bound, cfg, &log);
  return log;
}

}  // namespace vspcn
