// Command line front end: data generation, training, evaluation, the tau
// sweep, ablations, gradient checks and attention export.
//
// Config precedence, lowest first: built-in defaults, the config echoed in
// --checkpoint (for commands that read one), --config file, VSPCN_SEED,
// then --key flags.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>

#include "vspcn/vspcn.hpp"

namespace fs = std::filesystem;
using namespace vspcn;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3 };

struct Cli {
  std::string config_path;
  std::string out_dir = ".";
  std::string data_path;
  std::string checkpoint_path;
  std::string rows_path;
  std::size_t index = 0;
  std::string split = "test_seen";
  double tol = 1e-4;
  bool dump_config = false;
  std::map<std::string, std::string> overrides;  // config key -> flag text
};

RunConfig resolve_config(const Cli& cli, bool from_checkpoint) {
  RunConfig cfg;
  if (from_checkpoint) cfg = checkpoint_config(cli.checkpoint_path);
  if (!cli.config_path.empty()) load_config_file(cfg, cli.config_path);
  if (const char* env = std::getenv("VSPCN_SEED")) {
    try {
      set_config_value(cfg, "seed", env);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("VSPCN_SEED: ") + e.what());
    }
  }
  for (const auto& [key, value] : cli.overrides) {
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("--" + key + ": " + e.what());
    }
  }
  validate(cfg);
  return cfg;
}

fs::path out_file(const Cli& cli, const char* name) {
  fs::create_directories(cli.out_dir);
  return fs::path(cli.out_dir) / name;
}

GzslDataset dataset_for(const Cli& cli, const RunConfig& cfg) {
  if (cli.data_path.empty()) return synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
  auto ds = load_dataset(cli.data_path);
  check_dataset_fits(ds, cfg);
  return ds;
}

std::string checkpoint_in(const Cli& cli) {
  return cli.checkpoint_path.empty() ? (fs::path(cli.out_dir) / "checkpoint.bin").string() : cli.checkpoint_path;
}

int gen_data(const Cli& cli) {
  const auto cfg = resolve_config(cli, false);
  const auto ds = synth_gzsl_dataset(cfg, derive_seed(cfg.seed, kDataStream));
  const auto path = cli.data_path.empty() ? out_file(cli, "dataset.bin").string() : cli.data_path;
  save_dataset(ds, path);
  std::cout << "wrote " << path << ": " << ds.n_seen << " seen / " << ds.n_unseen << " unseen classes, "
            << ds.train.size() << " train, " << ds.test_seen.size() << " + " << ds.test_unseen.size() << " test\n";
  return kOk;
}

template <std::floating_point T>
int train_as(const Cli& cli, const RunConfig& cfg) {
  const auto ds = dataset_for(cli, cfg);
  TrainState<T> state = cli.checkpoint_path.empty() ? fresh_state<T>(cfg)
                                                    : from_checkpoint<T>(load_checkpoint(cli.checkpoint_path, cfg));
  const auto log_path = out_file(cli, "train_log.csv");
  // a resumed run continues the existing log
  std::ofstream log(log_path, state.step == 0 ? std::ios::trunc : std::ios::app);
  if (!log) throw Error("cannot write " + log_path.string());
  TrainOptions opt;
  opt.log = &log;
  opt.failure_checkpoint = out_file(cli, "checkpoint_failed.bin").string();
  opt.on_epoch = [&](std::uint64_t epoch, const LossBreakdown& l) {
    std::cout << "epoch " << epoch << "  L_CLS " << l.cls << "  L_AR " << l.ar << "  L_CED " << l.ced << "  L_SKD "
              << l.skd << "  total " << l.total << "\n";
  };
  train(state, ds, cfg, opt);
  const auto ck = out_file(cli, "checkpoint.bin");
  save_checkpoint(to_checkpoint(state, cfg), ck.string());
  std::cout << "seen-train top-1 " << seen_accuracy(state.params, ds, ds.train, cfg.model) << "%\nwrote "
            << ck.string() << "\n";
  return kOk;
}

int train_cmd(const Cli& cli) {
  const auto cfg = resolve_config(cli, false);
  return cfg.precision == "f32" ? train_as<float>(cli, cfg) : train_as<double>(cli, cfg);
}

struct Loaded {
  RunConfig cfg;
  GzslDataset ds;
  ModelParams<double> params;
};

Loaded load_model(Cli cli) {
  cli.checkpoint_path = checkpoint_in(cli);
  auto cfg = resolve_config(cli, true);
  auto ds = dataset_for(cli, cfg);
  auto params = load_checkpoint(cli.checkpoint_path, cfg).params;
  return {std::move(cfg), std::move(ds), std::move(params)};
}

int eval_cmd(const Cli& cli) {
  const auto m = load_model(cli);
  const auto r = evaluate(m.params, m.ds, m.cfg, m.cfg.eval.tau);
  write_text_file(out_file(cli, "eval_report.csv").string(), report_csv_header() + "\n" + report_csv_row(r) + "\n");
  write_text_file(out_file(cli, "eval_report.txt").string(), report_text(r));
  std::cout << report_text(r);
  return kOk;
}

int sweep_cmd(const Cli& cli) {
  const auto m = load_model(cli);
  const auto sweep =
      sweep_tau(compute_scores(m.params, m.ds, m.cfg.model), tau_grid(m.cfg.eval), m.cfg.eval.macro);
  write_text_file(out_file(cli, "tau_sweep.csv").string(), sweep_csv(sweep));
  write_text_file(out_file(cli, "tau_sweep.svg").string(), sweep_svg(sweep));
  std::cout << "best on the grid:\n" << report_text(sweep.best_report());
  return kOk;
}

int ablate_cmd(const Cli& cli) {
  const auto cfg = resolve_config(cli, false);
  const auto ds = dataset_for(cli, cfg);
  auto rows = standard_ablation_rows();
  if (!cli.rows_path.empty()) {
    std::ifstream in(cli.rows_path);
    if (!in) throw ConfigError("cannot open rows file '" + cli.rows_path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    for (auto& r : parse_ablation_rows(ss.str(), cli.rows_path)) rows.push_back(std::move(r));
  }
  const auto path = out_file(cli, "ablation.csv");
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << ablation_csv_header() << std::flush;
  std::cout << ablation_csv_header();
  ablate<double>(cfg, ds, rows, [&](const AblationResult& r) {
    out << ablation_csv_row(r) << std::flush;
    std::cout << ablation_csv_row(r) << std::flush;
  });
  return kOk;
}

int gradcheck_cmd(const Cli& cli) {
  const bool resume = !cli.checkpoint_path.empty();
  const auto cfg = resolve_config(cli, resume);
  const auto ds = dataset_for(cli, cfg);
  auto params = resume ? load_checkpoint(cli.checkpoint_path, cfg).params
                       : init_params<double>(cfg.model, cfg.data.n_attr, cfg.data.n_seen,
                                             derive_seed(cfg.seed, kInitStream));
  if (cli.index >= ds.train.size()) throw ConfigError("--index is past the training split");
  const auto checks = gradcheck_sample(params, ds, cli.index, cfg);
  std::string csv = "name,relative_error,max_entry_ratio,grad_norm\n";
  double worst = 0;
  for (const auto& c : checks) {
    csv += c.name + "," + format_double(c.norm_relative) + "," + format_double(c.max_elementwise) + "," +
           format_double(c.grad_norm) + "\n";
    worst = std::max(worst, c.norm_relative);
  }
  write_text_file(out_file(cli, "gradcheck.csv").string(), csv);
  std::cout << checks.size() << " learnables, worst relative error " << worst << " (tolerance " << cli.tol << ")\n";
  return worst <= cli.tol ? kOk : kNumeric;
}

int export_attn_cmd(const Cli& cli) {
  const auto m = load_model(cli);
  const Split* split = cli.split == "train" ? &m.ds.train
                           : cli.split == "test_unseen" ? &m.ds.test_unseen
                           : cli.split == "test_seen"   ? &m.ds.test_seen
                                                        : nullptr;
  if (!split) throw ConfigError("--split must be train, test_seen or test_unseen");
  if (cli.index >= split->size()) throw ConfigError("--index is past the " + cli.split + " split");
  const auto log = collect_attention(m.params, split->image(cli.index), m.ds.attributes, m.cfg.model);
  write_text_file(out_file(cli, "attention.csv").string(), backbone_attention_csv(log));
  write_text_file(out_file(cli, "fusion_attention.csv").string(), fusion_attention_csv(log));
  std::cout << "sample " << cli.index << " of " << cli.split << " (class " << split->labels[cli.index] << "), "
            << log.size() << " attention maps\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Visual/semantic prompt transformer for generalized zero-shot learning"};
  app.require_subcommand(1);
  app.fallthrough();
  Cli cli;
  app.add_option("--config", cli.config_path, "key = value config file");
  app.add_option("--out", cli.out_dir, "output directory");
  app.add_option("--data", cli.data_path, "dataset file (generated from the seed when absent)");
  app.add_option("--checkpoint", cli.checkpoint_path, "checkpoint to resume from or evaluate");
  app.add_flag("--dump-config", cli.dump_config, "print the resolved config and exit");
  for (const auto& key : config_keys()) {
    app.add_option_function<std::string>(
           "--" + key.name, [&cli, name = key.name](const std::string& v) { cli.overrides[name] = v; }, key.help)
        ->group("Config keys");
  }

  std::map<std::string, int (*)(const Cli&)> commands{
      {"gen-data", gen_data},   {"train", train_cmd},         {"eval", eval_cmd},
      {"sweep-tau", sweep_cmd}, {"ablate", ablate_cmd},       {"gradcheck", gradcheck_cmd},
      {"export-attn", export_attn_cmd},
  };
  auto* gen = app.add_subcommand("gen-data", "write a synthetic dataset");
  auto* tr = app.add_subcommand("train", "train and write checkpoint.bin and train_log.csv");
  app.add_subcommand("eval", "evaluate a checkpoint at the configured tau");
  app.add_subcommand("sweep-tau", "evaluate over the tau grid, write CSV and SVG");
  auto* ab = app.add_subcommand("ablate", "train and evaluate the standard toggle rows");
  auto* gc = app.add_subcommand("gradcheck", "compare gradients against finite differences");
  auto* ex = app.add_subcommand("export-attn", "write backbone and fusion attention maps of one sample");
  (void)gen;
  (void)tr;
  ab->add_option("--rows", cli.rows_path, "extra rows: name,Pv,Ps,WVPF,WSPF,SVPF,SSPF,adapter");
  gc->add_option("--index", cli.index, "training sample");
  gc->add_option("--tol", cli.tol, "largest accepted relative error");
  ex->add_option("--index", cli.index, "sample within the split");
  ex->add_option("--split", cli.split, "train, test_seen or test_unseen");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (cli.dump_config) {
      const std::string name = app.get_subcommands().front()->get_name();
      const bool reads_checkpoint = name == "eval" || name == "sweep-tau" || name == "export-attn";
      auto c = cli;
      if (reads_checkpoint) c.checkpoint_path = checkpoint_in(cli);
      std::cout << config_to_text(resolve_config(c, reads_checkpoint));
      return kOk;
    }
    return commands.at(app.get_subcommands().front()->get_name())(cli);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const ParseError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
