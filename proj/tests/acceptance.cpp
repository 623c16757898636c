// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Pass criterion numbers as arguments to run a subset.

#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "oracle.hpp"

using namespace vspcn;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// 8 seen / 4 unseen classes, 20 training images each, 200 epochs, seed 7.
RunConfig learning_config() {
  RunConfig cfg;
  cfg.model.d_model = 32;
  cfg.model.heads = 4;
  cfg.model.layers = 4;
  cfg.model.split_layer = 2;
  cfg.model.grid_h = 3;
  cfg.model.grid_w = 3;
  cfg.model.patch_dim = 8;
  cfg.model.mlp_hidden = 64;
  cfg.data.n_seen = 8;
  cfg.data.n_unseen = 4;
  cfg.data.n_attr = 8;
  cfg.data.active_attrs = 2;
  cfg.data.train_per_class = 20;
  cfg.data.test_per_class = 10;
  cfg.optim.epochs = 200;
  cfg.seed = 7;
  validate(cfg);
  return cfg;
}

// D=16, H=2, M=4, l=2, 3x3 patches, 8 attributes, 4 seen classes.
RunConfig gradient_config() {
  RunConfig cfg;
  cfg.model.d_model = 16;
  cfg.model.heads = 2;
  cfg.model.layers = 4;
  cfg.model.split_layer = 2;
  cfg.model.grid_h = 3;
  cfg.model.grid_w = 3;
  cfg.model.patch_dim = 8;
  cfg.model.mlp_hidden = 32;
  cfg.data.n_seen = 4;
  cfg.data.n_unseen = 2;
  cfg.data.n_attr = 8;
  cfg.data.train_per_class = 2;
  cfg.data.test_per_class = 2;
  validate(cfg);
  return cfg;
}

ModelParams<double> noisy_params(const RunConfig& cfg, std::uint64_t seed) {
  auto p = init_params<double>(cfg.model, cfg.data.n_attr, cfg.data.n_seen, seed);
  std::mt19937_64 rng(seed ^ 0x5eed);
  std::normal_distribution<double> n(0, 0.3);
  visit_slots([&](const std::string&, Decay, Tensor<double>& t) {
    for (auto& v : t.values()) v += n(rng);
  }, p);
  return p;
}

struct Trained {
  RunConfig cfg;
  GzslDataset ds;
  TrainState<double> state;
  double seconds = 0;
};

// Shared by the calibration and learning criteria.
const Trained& trained_toy() {
  static std::optional<Trained> t;
  if (!t) {
    const auto cfg = learning_config();
    auto ds = synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
    auto state = fresh_state<double>(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    train(state, ds, cfg);
    t = Trained{cfg, std::move(ds), std::move(state), seconds_since(t0)};
  }
  return *t;
}

Outcome gradient_correctness() {
  const auto cfg = gradient_config();
  const auto ds = synth_gzsl_dataset(cfg, 1);
  // freshly initialised; heavy random perturbations push the loss into the
  // thousands, where central differences at h=1e-5 are roundoff-limited
  auto params = init_params<double>(cfg.model, cfg.data.n_attr, cfg.data.n_seen, derive_seed(cfg.seed, kInitStream));
  const auto t0 = std::chrono::steady_clock::now();
  const auto checks = gradcheck_sample(params, ds, 0, cfg, 1e-5);
  const double secs = seconds_since(t0);
  double worst = 0, worst_elem = 0;
  std::string worst_name;
  for (const auto& c : checks) {
    if (c.norm_relative > worst) {
      worst = c.norm_relative;
      worst_name = c.name;
    }
    worst_elem = std::max(worst_elem, c.max_elementwise);
  }
  return {worst <= 1e-4 && secs < 60,
          fmt("%zu learnables, max relative error %.2e (%s), largest single-entry ratio %.2e, %.1f s", checks.size(),
              worst, worst_name.c_str(), worst_elem, secs)};
}

Outcome metric_arithmetic() {
  auto h_of = [](double u, double s) {
    // through the evaluation path: a score table whose accuracies are U and S
    ScoreTable t;
    t.n_seen = 1;
    t.n_classes = 2;
    for (int i = 0; i < 1000; ++i) {
      t.seen_scores.push_back(i < std::lround(s * 10) ? std::vector<double>{1, 0} : std::vector<double>{0, 1});
      t.seen_labels.push_back(0);
      t.unseen_scores.push_back(i < std::lround(u * 10) ? std::vector<double>{0, 1} : std::vector<double>{1, 0});
      t.unseen_labels.push_back(1);
    }
    return report_from_scores(t, 0.0, false).H;
  };
  const double a = h_of(72.8, 78.9), b = h_of(59.4, 49.1);
  const bool ok = std::abs(a - 75.7) <= 0.05 && std::abs(b - 53.8) <= 0.05 &&
                  std::abs(harmonic_mean(78.9, 72.8) - 75.7) <= 0.05 && std::abs(harmonic_mean(49.1, 59.4) - 53.8) <= 0.05;
  return {ok, fmt("H(72.8, 78.9) = %.4f, H(59.4, 49.1) = %.4f", a, b)};
}

Outcome fusion_boundaries() {
  std::mt19937_64 rng(3);
  const std::size_t d = 12, n = 7;
  double worst = 0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto prompt = random_tensor({1, d}, rng), kv = random_tensor({n, d}, rng);
    const auto head = random_tensor({d, 1}, rng);
    const auto site = testing::random_site(d, rng), other = testing::random_site(d, rng);
    auto run = [&](const testing::Site& s, double alpha) {
      Tape<double> tape;
      const FusionSlots<Var<double>> p{tape.constant(s.w_q), tape.constant(s.w_k), tape.constant(s.w_v)};
      return strong_visual_fusion(tape.constant(prompt), tape.constant(kv), p, tape.constant(head), alpha).value();
    };
    // alpha 1: cross attention plus residual
    auto attend = testing::oracle_attend(prompt, kv, site);
    for (std::size_t k = 0; k < d; ++k) attend[k] += prompt[k];
    worst = std::max(worst, max_abs_diff(run(site, 1.0), attend));
    // alpha 0: bias mixture only, independent of the query/key projections
    auto bias_only = testing::naive_matmul(testing::bias_weights(kv, head), testing::naive_matmul(kv, site.w_v));
    for (std::size_t k = 0; k < d; ++k) bias_only[k] += prompt[k];
    const auto zero_a = run(site, 0.0);
    worst = std::max(worst, max_abs_diff(zero_a, bias_only));
    worst = std::max(worst, max_abs_diff(zero_a, run({other.w_q, other.w_k, site.w_v}, 0.0)));
    // zero value projection: the prompt passes through for any alpha
    for (double alpha : {0.0, 0.3, 1.0})
      worst = std::max(worst, max_abs_diff(run({site.w_q, site.w_k, Tensor<double>({d, d})}, alpha), prompt));
    // alpha_a 0: the adapter leaves S unchanged
    Tape<double> tape;
    const FusionSlots<Var<double>> p{tape.constant(site.w_q), tape.constant(site.w_k), tape.constant(site.w_v)};
    const auto s = random_tensor({5, d}, rng);
    worst = std::max(worst, max_abs_diff(adapter_update(tape.constant(s), tape.constant(kv), p, 0.0).value(), s));
  }
  return {worst <= 1e-9, fmt("largest deviation %.2e over 20 random draws", worst)};
}

Outcome attention_normalisation() {
  auto cfg = gradient_config();
  std::mt19937_64 rng(4);
  double worst = 0;
  std::size_t rows = 0;
  std::set<std::string> sites;
  for (int pass = 0; pass < 100; ++pass) {
    const auto params = noisy_params(cfg, 100 + static_cast<std::uint64_t>(pass));
    const auto image = random_tensor({cfg.model.grid_h * cfg.model.grid_w, cfg.model.patch_dim}, rng);
    const auto attributes = random_tensor({cfg.data.n_attr, cfg.model.d_model}, rng);
    const auto log = collect_attention(params, image, attributes, cfg.model);
    for (const auto& rec : log) {
      sites.insert(rec.site.substr(0, rec.site.find('.')));
      for (std::size_t r = 0; r < rec.weights.rows(); ++r) {
        double sum = 0;
        for (std::size_t c = 0; c < rec.weights.cols(); ++c) sum += rec.weights(r, c);
        worst = std::max(worst, std::abs(sum - 1.0));
        ++rows;
      }
    }
  }
  const std::set<std::string> expected{"block", "wvpf", "wspf", "svpf", "sspf", "adapter"};
  return {worst <= 1e-9 && sites == expected,
          fmt("%zu rows from %zu sites, largest |sum - 1| = %.2e", rows, sites.size(), worst)};
}

Outcome loss_cases() {
  std::mt19937_64 rng(5);
  Tape<double> tape;
  auto c = [&](const Tensor<double>& t) { return tape.constant(t); };
  auto val = [](const Var<double>& v) { return v.value()[0]; };
  double ar = 0, skd = 0, swap = 0, cls = 0;
  for (int i = 0; i < 50; ++i) {
    const auto a = random_tensor({1, 16}, rng, 2.0), b = random_tensor({1, 16}, rng, 2.0);
    ar = std::max(ar, std::abs(val(loss_ar(c(a), c(a)))));
    skd = std::max(skd, std::abs(val(loss_skd(c(a), c(a), c(a)))));
    // distance target equal to the prompt leaves only the symmetric KL
    swap = std::max(swap, std::abs(val(loss_skd(c(a), c(b), c(a))) - val(loss_skd(c(b), c(a), c(b)))));
    const std::size_t n_seen = 2 + static_cast<std::size_t>(i % 9);
    const auto protos = random_tensor({n_seen, 16}, rng);
    const double l = val(loss_cls(c(Tensor<double>({1, 16})), c(protos), static_cast<std::size_t>(i) % n_seen));
    cls = std::max(cls, std::abs(l - std::log(double(n_seen))));
  }
  return {ar == 0 && skd <= 1e-12 && swap <= 1e-12 && cls <= 1e-9,
          fmt("AR at fixed point %.1e, SKD at fixed point %.1e, swap gap %.1e, |CLS - ln N| %.1e", ar, skd, swap, cls)};
}

Outcome calibration_monotonicity() {
  const auto& t = trained_toy();
  const auto table = compute_scores(t.state.params, t.ds, t.cfg.model);
  const auto grid = tau_grid(t.cfg.eval);
  const auto mask = table.unseen_mask();
  std::size_t flips_back = 0, samples = 0;
  for (const auto* split : {&table.seen_scores, &table.unseen_scores}) {
    for (const auto& row : *split) {
      bool prev = false;
      for (double tau : grid) {
        const bool now = mask[predict_from_scores(row, mask, tau)];
        flips_back += prev && !now;
        prev = now;
      }
      ++samples;
    }
  }
  const auto sweep = sweep_tau(table, grid, t.cfg.eval.macro);
  std::size_t u_drops = 0, s_rises = 0;
  for (std::size_t i = 1; i < sweep.reports.size(); ++i) {
    u_drops += sweep.reports[i].U < sweep.reports[i - 1].U;
    s_rises += sweep.reports[i].S > sweep.reports[i - 1].S;
  }
  return {grid.size() == 41 && flips_back == 0 && u_drops == 0 && s_rises == 0,
          fmt("%zu samples x %zu tau values; U %.1f -> %.1f, S %.1f -> %.1f", samples, grid.size(),
              sweep.reports.front().U, sweep.reports.back().U, sweep.reports.front().S, sweep.reports.back().S)};
}

Outcome learning_sanity() {
  const auto& t = trained_toy();
  const double train_acc = seen_accuracy(t.state.params, t.ds, t.ds.train, t.cfg.model);
  const auto r = evaluate(t.state.params, t.ds, t.cfg, 0.0);
  return {train_acc >= 95 && r.acc_czsl >= 50 && t.seconds < 600,
          fmt("seen-train top-1 %.1f%%, unseen CZSL %.1f%% (chance 25%%), training %.0f s", train_acc, r.acc_czsl,
              t.seconds)};
}

Outcome ablation_harness() {
  const auto cfg = learning_config();
  const auto ds = synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
  std::string csv = ablation_csv_header();
  const auto results = ablate<double>(cfg, ds, standard_ablation_rows(), [&](const AblationResult& r) {
    csv += ablation_csv_row(r);
    std::cout << "  ablation " << ablation_csv_row(r) << std::flush;
  });
  std::istringstream in(csv);
  std::string line;
  std::size_t lines = 0;
  bool schema = true;
  while (std::getline(in, line)) {
    ++lines;
    schema = schema && std::count(line.begin(), line.end(), ',') == 13;
  }
  schema = schema && lines == 9 && csv.rfind("name,Pv,Ps,WVPF,WSPF,SVPF,SSPF,adapter,tau,U,S,H,best_tau,best_H\n", 0) == 0;
  const auto& base = results.front();
  const auto& full = results.back();
  return {schema && full.report.H >= base.report.H,
          fmt("%zu rows; at tau %.2f baseline H %.1f, full H %.1f; with tau tuned on the test splits baseline H %.1f, "
              "full H %.1f",
              results.size(), full.report.tau, base.report.H, full.report.H, base.best.H, full.best.H)};
}

Outcome determinism() {
  auto cfg = learning_config();
  cfg.optim.epochs = 5;
  const auto ds = synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
  auto run = [&] {
    auto state = fresh_state<double>(cfg);
    std::ostringstream log;
    TrainOptions opt;
    opt.log = &log;
    train(state, ds, cfg, opt);
    return std::make_pair(log.str(), serialize_checkpoint(to_checkpoint(state, cfg)));
  };
  const auto a = run(), b = run();
  return {a.first == b.first && a.second == b.second && a.first.size() > train_log_header().size(),
          fmt("two runs: %zu log bytes each, logs %s, checkpoints %s", a.first.size(),
              a.first == b.first ? "identical" : "differ", a.second == b.second ? "identical" : "differ")};
}

Outcome persistence() {
  auto cfg = learning_config();
  cfg.optim.epochs = 1;
  auto state = fresh_state<double>(cfg);
  train(state, synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream)), cfg);
  const auto bytes = serialize_checkpoint(to_checkpoint(state, cfg));
  const std::string path = "acceptance_checkpoint.bin";
  save_checkpoint(to_checkpoint(state, cfg), path);
  const bool round_trip = serialize_checkpoint(load_checkpoint(path, cfg)) == bytes;
  std::remove(path.c_str());

  std::map<std::string, std::size_t> kinds;
  std::size_t silent = 0, cases = 0;
  auto probe = [&](const std::vector<std::uint8_t>& b) {
    ++cases;
    try {
      deserialize_checkpoint(b, cfg);
      ++silent;
    } catch (const BadMagicError&) {
      ++kinds["magic"];
    } catch (const VersionError&) {
      ++kinds["version"];
    } catch (const TruncatedError&) {
      ++kinds["truncated"];
    } catch (const ChecksumError&) {
      ++kinds["checksum"];
    } catch (const Error&) {
      ++kinds["other"];
    }
  };
  for (std::size_t keep = 0; keep < bytes.size(); keep += 1 + bytes.size() / 150)
    probe({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)});
  for (std::size_t pos = 0; pos < bytes.size(); pos += pos < 64 ? 1 : 1 + bytes.size() / 300) {
    for (std::uint8_t bit : {0x01, 0x80}) {
      auto b = bytes;
      b[pos] ^= bit;
      probe(b);
    }
  }
  auto grown = bytes;
  grown.push_back(0);
  probe(grown);
  auto wrong = cfg;
  wrong.model.d_model = 16;
  std::string shape_msg;
  try {
    deserialize_checkpoint(bytes, wrong);
  } catch (const ShapeMismatchError& e) {
    shape_msg = e.what();
  }
  const bool named = kinds["magic"] && kinds["version"] && kinds["truncated"] && kinds["checksum"] &&
                     shape_msg.find('\'') != std::string::npos;
  return {round_trip && silent == 0 && named,
          fmt("round trip %s; %zu corrupted files: %zu magic, %zu version, %zu truncated, %zu checksum, %zu other, "
              "%zu loaded silently",
              round_trip ? "bit-exact" : "differs", cases, kinds["magic"], kinds["version"], kinds["truncated"],
              kinds["checksum"], kinds["other"], silent)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"gradient correctness", gradient_correctness},
      {"metric arithmetic", metric_arithmetic},
      {"fusion boundary identities", fusion_boundaries},
      {"attention normalisation", attention_normalisation},
      {"loss zero and symmetry cases", loss_cases},
      {"calibration monotonicity", calibration_monotonicity},
      {"learning sanity", learning_sanity},
      {"ablation harness", ablation_harness},
      {"determinism", determinism},
      {"persistence", persistence},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(std::stoul(argv[i]));
  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.count(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    all = all && o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << i + 1 << " (" << criteria[i].first
              << "): " << o.detail << std::endl;
  }
  return all ? 0 : 1;
}
