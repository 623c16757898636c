#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "vspcn/errors.hpp"

namespace vspcn {

/// Component switches mirroring the ablation columns.
struct Toggles {
  bool pv = true;        // visual prompt token present
  bool ps = true;        // semantic prompt token present
  bool wvpf = true;      // weak visual prompt fusion at the input
  bool wspf = true;      // weak semantic prompt fusion at the input
  bool svpf = true;      // strong visual prompt fusion in deep layers
  bool sspf = true;      // strong semantic prompt fusion in deep layers
  bool adapter = true;   // attribute matrix updated per deep layer

  bool operator==(const Toggles&) const = default;

  static Toggles none() { return {false, false, false, false, false, false, false}; }
};

struct ModelConfig {
  std::size_t d_model = 64;
  std::size_t heads = 4;
  std::size_t layers = 8;       // M
  std::size_t split_layer = 4;  // l: layers 1..l weak, l+1..M strong
  std::size_t grid_h = 4;
  std::size_t grid_w = 4;
  std::size_t patch_dim = 16;
  std::size_t mlp_hidden = 256;
  double alpha_v = 0.05;
  double alpha_s = 0.8;
  double alpha_a = 0.5;
  double init_scale = 0.02;  // std of prompt / CLS / positional init
  double ln_eps = 1e-9;
  Toggles toggles;

  std::size_t num_patches() const { return grid_h * grid_w; }
  std::size_t seq_len() const { return num_patches() + 3; }
};

struct DataConfig {
  std::size_t n_seen = 8;
  std::size_t n_unseen = 4;
  std::size_t n_attr = 16;
  std::size_t active_attrs = 0;  // 0 selects max(1, n_attr / 4)
  std::size_t train_per_class = 20;
  std::size_t test_per_class = 10;
  double noise = 0.1;
  std::string attr_file;  // optional word-vector file replacing the synthetic S

  std::size_t n_classes() const { return n_seen + n_unseen; }
  std::size_t active() const {
    return active_attrs ? active_attrs : std::max<std::size_t>(1, n_attr / 4);
  }
};

struct LossWeights {
  double gamma = 1.0;
  double eta1 = 1.0;
  double eta2 = 1.0;
  double lambda_ced = 0.8;
  double lambda_skd = 0.9;
  double eps_kl = 1e-8;
  bool kl_over_logits = false;  // divergence term over classifier logits instead of raw tokens
};

struct OptimConfig {
  double lr = 0.001;
  double weight_decay = 0.0001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  double grad_clip = 0.0;  // global L2 norm clip, 0 disables
};

struct EvalConfig {
  double tau = 0.0;
  double tau_min = -1.0;
  double tau_max = 1.0;
  std::size_t tau_steps = 41;
  bool macro = true;  // per-class averaging; false gives per-sample accuracy
};

struct RunConfig {
  ModelConfig model;
  DataConfig data;
  LossWeights loss;
  OptimConfig optim;
  EvalConfig eval;
  std::uint64_t seed = 7;
  std::string precision = "f64";
};

namespace detail {

inline std::string format_value(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::string format_value(bool v) { return v ? "true" : "false"; }
template <class U>
  requires std::is_unsigned_v<U> && (!std::is_same_v<U, bool>)
inline std::string format_value(U v) {
  return std::to_string(v);
}
inline std::string format_value(const std::string& v) { return v; }

inline void parse_value(std::string_view key, std::string_view text, double& out) {
  // from_chars rejects a leading '+', strtod accepts more than we want.
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': not a number: '" + std::string(text) + "'");
  }
}

template <class U>
  requires std::is_unsigned_v<U> && (!std::is_same_v<U, bool>)
inline void parse_value(std::string_view key, std::string_view text, U& out) {
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), out);
  if (ec != std::errc{} || ptr != text.data() + text.size()) {
    throw ConfigError("config key '" + std::string(key) + "': not a non-negative integer: '" +
                      std::string(text) + "'");
  }
}

inline void parse_value(std::string_view key, std::string_view text, bool& out) {
  if (text == "1" || text == "true" || text == "on" || text == "yes") {
    out = true;
  } else if (text == "0" || text == "false" || text == "off" || text == "no") {
    out = false;
  } else {
    throw ConfigError("config key '" + std::string(key) + "': not a boolean: '" + std::string(text) + "'");
  }
}

inline void parse_value(std::string_view, std::string_view text, std::string& out) { out = std::string(text); }

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// Every recognised key, in the order they are echoed to checkpoints and
/// `--dump-config`. Each one is also accepted as a `--key value` flag.
inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    auto add = [&k](std::string name, std::string help, auto accessor) {
      k.push_back({name, std::move(help),
                   [name, accessor](RunConfig& c, std::string_view text) {
                     detail::parse_value(name, text, accessor(c));
                   },
                   [accessor](const RunConfig& c) {
                     return detail::format_value(accessor(const_cast<RunConfig&>(c)));
                   }});
    };
#define VSPCN_KEY(name, help, expr) add(name, help, [](RunConfig& c) -> auto& { return c.expr; })
    VSPCN_KEY("d_model", "token width D", model.d_model);
    VSPCN_KEY("heads", "attention heads per backbone block", model.heads);
    VSPCN_KEY("layers", "number of backbone blocks M", model.layers);
    VSPCN_KEY("split_layer", "last weak-fusion layer l", model.split_layer);
    VSPCN_KEY("grid_h", "patch grid rows", model.grid_h);
    VSPCN_KEY("grid_w", "patch grid columns", model.grid_w);
    VSPCN_KEY("patch_dim", "raw features per patch", model.patch_dim);
    VSPCN_KEY("mlp_hidden", "backbone MLP hidden width", model.mlp_hidden);
    VSPCN_KEY("alpha_v", "strong visual fusion attention weight", model.alpha_v);
    VSPCN_KEY("alpha_s", "strong semantic fusion attention weight", model.alpha_s);
    VSPCN_KEY("alpha_a", "adapter update weight", model.alpha_a);
    VSPCN_KEY("init_scale", "std of prompt/CLS/positional init", model.init_scale);
    VSPCN_KEY("ln_eps", "layer norm epsilon", model.ln_eps);
    VSPCN_KEY("pv", "visual prompt", model.toggles.pv);
    VSPCN_KEY("ps", "semantic prompt", model.toggles.ps);
    VSPCN_KEY("wvpf", "weak visual prompt fusion", model.toggles.wvpf);
    VSPCN_KEY("wspf", "weak semantic prompt fusion", model.toggles.wspf);
    VSPCN_KEY("svpf", "strong visual prompt fusion", model.toggles.svpf);
    VSPCN_KEY("sspf", "strong semantic prompt fusion", model.toggles.sspf);
    VSPCN_KEY("adapter", "semantic adapter in deep layers", model.toggles.adapter);
    VSPCN_KEY("n_seen", "seen classes", data.n_seen);
    VSPCN_KEY("n_unseen", "unseen classes", data.n_unseen);
    VSPCN_KEY("n_attr", "attributes N_a", data.n_attr);
    VSPCN_KEY("active_attrs", "active attributes per class (0 = N_a/4)", data.active_attrs);
    VSPCN_KEY("train_per_class", "training images per seen class", data.train_per_class);
    VSPCN_KEY("test_per_class", "test images per class", data.test_per_class);
    VSPCN_KEY("noise", "pixel noise std", data.noise);
    VSPCN_KEY("attr_file", "attribute word-vector file", data.attr_file);
    VSPCN_KEY("gamma", "attribute regression weight", loss.gamma);
    VSPCN_KEY("eta1", "CED cross-entropy weight", loss.eta1);
    VSPCN_KEY("eta2", "CED divergence weight", loss.eta2);
    VSPCN_KEY("lambda_ced", "CED loss weight", loss.lambda_ced);
    VSPCN_KEY("lambda_skd", "SKD loss weight", loss.lambda_skd);
    VSPCN_KEY("eps_kl", "KL denominator floor", loss.eps_kl);
    VSPCN_KEY("kl_over_logits", "divergence over classifier logits", loss.kl_over_logits);
    VSPCN_KEY("lr", "learning rate", optim.lr);
    VSPCN_KEY("weight_decay", "decoupled weight decay", optim.weight_decay);
    VSPCN_KEY("beta1", "Adam beta1", optim.beta1);
    VSPCN_KEY("beta2", "Adam beta2", optim.beta2);
    VSPCN_KEY("adam_eps", "Adam epsilon", optim.adam_eps);
    VSPCN_KEY("epochs", "training epochs", optim.epochs);
    VSPCN_KEY("batch_size", "minibatch size", optim.batch_size);
    VSPCN_KEY("grad_clip", "global gradient norm clip (0 = off)", optim.grad_clip);
    VSPCN_KEY("tau", "calibration added to unseen scores", eval.tau);
    VSPCN_KEY("tau_min", "sweep lower bound", eval.tau_min);
    VSPCN_KEY("tau_max", "sweep upper bound", eval.tau_max);
    VSPCN_KEY("tau_steps", "sweep grid points", eval.tau_steps);
    VSPCN_KEY("macro", "per-class accuracy averaging", eval.macro);
    VSPCN_KEY("seed", "random seed", seed);
    VSPCN_KEY("precision", "f64 or f32", precision);
#undef VSPCN_KEY
    return k;
  }();
  return keys;
}

inline const ConfigKey* find_config_key(std::string_view name) {
  for (const auto& k : config_keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

inline void set_config_value(RunConfig& cfg, std::string_view key, std::string_view value) {
  const ConfigKey* k = find_config_key(key);
  if (!k) throw ConfigError("unknown config key '" + std::string(key) + "'");
  k->set(cfg, value);
}

namespace detail {
inline std::string_view trim(std::string_view s) {
  const auto ws = " \t\r\n";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}
}  // namespace detail

/// Applies `key = value` lines. '#' and ';' start comments; `[section]`
/// headers are accepted and ignored so INI-style files work unchanged.
inline void apply_config_text(RunConfig& cfg, std::string_view text, std::string_view origin = "config") {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (const auto c = line.find_first_of("#;"); c != std::string_view::npos) line = line.substr(0, c);
    line = detail::trim(line);
    if (line.empty() || line.front() == '[') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

inline std::string config_to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : config_keys()) out += k.name + " = " + k.get(cfg) + "\n";
  return out;
}

inline void validate(const RunConfig& cfg) {
  const auto& m = cfg.model;
  auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (m.d_model == 0) fail("d_model must be positive");
  if (m.heads == 0 || m.d_model % m.heads != 0) fail("heads must divide d_model");
  if (m.layers == 0) fail("layers must be positive");
  if (m.split_layer > m.layers) fail("split_layer must not exceed layers");
  if (m.num_patches() == 0) fail("patch grid must hold at least one patch");
  if (m.patch_dim == 0 || m.mlp_hidden == 0) fail("patch_dim and mlp_hidden must be positive");
  for (double a : {m.alpha_v, m.alpha_s, m.alpha_a}) {
    if (!(a >= 0.0 && a <= 1.0)) fail("alpha values must lie in [0, 1]");
  }
  if (!(m.ln_eps > 0.0)) fail("ln_eps must be positive");
  const auto& t = m.toggles;
  if (t.wvpf && !t.pv) fail("wvpf requires pv");
  if (t.svpf && !t.pv) fail("svpf requires pv");
  if (t.wspf && !t.ps) fail("wspf requires ps");
  if (t.sspf && !t.ps) fail("sspf requires ps");
  const auto& d = cfg.data;
  if (d.n_seen == 0 || d.n_unseen == 0) fail("n_seen and n_unseen must be positive");
  if (d.n_attr == 0) fail("n_attr must be positive");
  if (d.active() > d.n_attr) fail("active_attrs must not exceed n_attr");
  if (d.train_per_class == 0 || d.test_per_class == 0) fail("images per class must be positive");
  if (!(d.noise >= 0.0)) fail("noise must be non-negative");
  const auto& l = cfg.loss;
  for (double w : {l.gamma, l.eta1, l.eta2, l.lambda_ced, l.lambda_skd}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail("loss weights must be finite and non-negative");
  }
  if (!(l.eps_kl > 0.0)) fail("eps_kl must be positive");
  const auto& o = cfg.optim;
  if (!(o.lr > 0.0)) fail("lr must be positive");
  if (!(o.weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (o.batch_size == 0) fail("batch_size must be positive");
  if (!(o.grad_clip >= 0.0)) fail("grad_clip must be non-negative");
  if (cfg.eval.tau_steps == 0) fail("tau_steps must be positive");
  if (!(cfg.eval.tau_max >= cfg.eval.tau_min)) fail("tau_max must be >= tau_min");
  if (cfg.precision != "f64" && cfg.precision != "f32") fail("precision must be f64 or f32");
}

}  // namespace vspcn
