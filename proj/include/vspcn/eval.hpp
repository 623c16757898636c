#pragma once

#include <cstdio>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "vspcn/attributes.hpp"
#include "vspcn/config.hpp"
#include "vspcn/dataset.hpp"
#include "vspcn/errors.hpp"
#include "vspcn/model.hpp"

namespace vspcn {

/// Accuracies in percent.
struct EvalReport {
  double acc_czsl = 0;
  double U = 0;
  double S = 0;
  double H = 0;
  double tau = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted], GZSL label space
};

inline double harmonic_mean(double s, double u) { return s + u > 0 ? 2 * s * u / (s + u) : 0.0; }

/// argmax over classes of score + tau * unseen; ties go to the lowest index.
inline std::size_t predict_from_scores(std::span<const double> scores, const std::vector<bool>& unseen, double tau) {
  if (scores.empty()) throw ContractError("calibrated_predict: empty class set");
  if (unseen.size() != scores.size()) throw DimensionError("calibrated_predict: unseen mask length differs");
  std::size_t best = 0;
  double best_v = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < scores.size(); ++c) {
    const double v = scores[c] + (unseen[c] ? tau : 0.0);
    if (v > best_v) {
      best_v = v;
      best = c;
    }
  }
  return best;
}

template <std::floating_point T>
std::size_t calibrated_predict(const Tensor<T>& f_cls, const Tensor<T>& prototypes, const std::vector<bool>& unseen,
                               double tau) {
  if (prototypes.empty()) throw ContractError("calibrated_predict: empty class set");
  const Tensor<T> s = kernel::matmul(f_cls, prototypes, false, true);
  const std::vector<double> scores(s.values().begin(), s.values().end());
  return predict_from_scores(scores, unseen, tau);
}

/// Class scores of every test sample, computed once and reused across
/// calibration values.
struct ScoreTable {
  std::size_t n_seen = 0;
  std::size_t n_classes = 0;
  std::vector<std::vector<double>> seen_scores;  // test_seen samples x classes
  std::vector<std::size_t> seen_labels;
  std::vector<std::vector<double>> unseen_scores;
  std::vector<std::size_t> unseen_labels;

  std::vector<bool> unseen_mask() const {
    std::vector<bool> m(n_classes, false);
    for (std::size_t c = n_seen; c < n_classes; ++c) m[c] = true;
    return m;
  }
};

/// Final CLS feature of one image, no gradients recorded.
template <std::floating_point T>
Tensor<T> cls_feature(const ModelParams<T>& params, const Tensor<T>& image, const Tensor<T>& attributes,
                      const ModelConfig& cfg) {
  Tape<T> tape;
  const auto bound = bind_params(tape, params, false);
  return forward_vspcn(tape, image, attributes, bound, cfg).tokens.cls.value();
}

template <std::floating_point T>
ScoreTable compute_scores(const ModelParams<T>& params, const GzslDataset& ds, const ModelConfig& cfg) {
  if (ds.test_seen.size() == 0 || ds.test_unseen.size() == 0) throw ContractError("evaluate: empty test split");
  ScoreTable table;
  table.n_seen = ds.n_seen;
  table.n_classes = ds.n_classes();
  const Tensor<T> s0 = ds.attributes.template cast<T>();
  const Tensor<T> protos = embed_prototypes(ds.class_attributes.template cast<T>(), params.w_d);
  auto run = [&](const Split& split, auto& scores, auto& labels) {
    for (std::size_t i = 0; i < split.size(); ++i) {
      const Tensor<T> f = cls_feature(params, split.image(i).template cast<T>(), s0, cfg);
      const Tensor<T> row = kernel::matmul(f, protos, false, true);
      scores.emplace_back(row.values().begin(), row.values().end());
      labels.push_back(split.labels[i]);
    }
  };
  run(ds.test_seen, table.seen_scores, table.seen_labels);
  run(ds.test_unseen, table.unseen_scores, table.unseen_labels);
  return table;
}

namespace detail {

// Mean of per-class accuracies (macro) or plain hit rate (micro), percent.
inline double accuracy(const std::vector<std::size_t>& labels, const std::vector<std::size_t>& predicted,
                       std::size_t n_classes, bool macro) {
  if (labels.empty()) return 0.0;
  if (!macro) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += labels[i] == predicted[i];
    return 100.0 * double(hits) / double(labels.size());
  }
  std::vector<std::size_t> total(n_classes, 0), hits(n_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++total[labels[i]];
    hits[labels[i]] += labels[i] == predicted[i];
  }
  double sum = 0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    if (total[c] == 0) continue;
    sum += double(hits[c]) / double(total[c]);
    ++present;
  }
  return 100.0 * sum / double(present);
}

}  // namespace detail

/// Predicted class of every sample in one split at calibration tau.
inline std::vector<std::size_t> predict_split(const std::vector<std::vector<double>>& scores,
                                              const std::vector<bool>& unseen, double tau) {
  std::vector<std::size_t> out;
  out.reserve(scores.size());
  for (const auto& row : scores) out.push_back(predict_from_scores(row, unseen, tau));
  return out;
}

inline EvalReport report_from_scores(const ScoreTable& t, double tau, bool macro = true) {
  if (t.seen_scores.empty() || t.unseen_scores.empty()) throw ContractError("evaluate: empty test split");
  const auto unseen = t.unseen_mask();
  EvalReport r;
  r.tau = tau;
  const auto pred_seen = predict_split(t.seen_scores, unseen, tau);
  const auto pred_unseen = predict_split(t.unseen_scores, unseen, tau);
  r.S = detail::accuracy(t.seen_labels, pred_seen, t.n_classes, macro);
  r.U = detail::accuracy(t.unseen_labels, pred_unseen, t.n_classes, macro);
  r.H = harmonic_mean(r.S, r.U);

  // Conventional ZSL: seen classes removed from the label space.
  std::vector<std::vector<double>> restricted;
  restricted.reserve(t.unseen_scores.size());
  for (const auto& row : t.unseen_scores) {
    std::vector<double> only(row.begin() + static_cast<std::ptrdiff_t>(t.n_seen), row.end());
    restricted.push_back(std::move(only));
  }
  auto pred_czsl = predict_split(restricted, std::vector<bool>(t.n_classes - t.n_seen, true), 0.0);
  for (auto& p : pred_czsl) p += t.n_seen;
  r.acc_czsl = detail::accuracy(t.unseen_labels, pred_czsl, t.n_classes, macro);

  r.confusion.assign(t.n_classes, std::vector<std::size_t>(t.n_classes, 0));
  for (std::size_t i = 0; i < pred_seen.size(); ++i) ++r.confusion[t.seen_labels[i]][pred_seen[i]];
  for (std::size_t i = 0; i < pred_unseen.size(); ++i) ++r.confusion[t.unseen_labels[i]][pred_unseen[i]];
  return r;
}

template <std::floating_point T>
EvalReport evaluate(const ModelParams<T>& params, const GzslDataset& ds, const RunConfig& cfg, double tau) {
  return report_from_scores(compute_scores(params, ds, cfg.model), tau, cfg.eval.macro);
}

inline std::vector<double> tau_grid(const EvalConfig& e) {
  if (e.tau_steps == 0) throw ConfigError("tau_steps must be positive");
  if (e.tau_steps == 1) return {e.tau_min};
  std::vector<double> grid(e.tau_steps);
  for (std::size_t i = 0; i < e.tau_steps; ++i) {
    grid[i] = e.tau_min + (e.tau_max - e.tau_min) * double(i) / double(e.tau_steps - 1);
  }
  return grid;
}

struct TauSweep {
  std::vector<EvalReport> reports;
  std::size_t best = 0;  // index of the highest H (first one on ties)

  const EvalReport& best_report() const { return reports.at(best); }
};

inline TauSweep sweep_tau(const ScoreTable& t, const std::vector<double>& grid, bool macro = true) {
  if (grid.empty()) throw ContractError("sweep_tau: empty grid");
  TauSweep out;
  for (double tau : grid) {
    if (!std::isfinite(tau)) throw ContractError("sweep_tau: non-finite calibration value");
    out.reports.push_back(report_from_scores(t, tau, macro));
    if (out.reports.back().H > out.reports[out.best].H) out.best = out.reports.size() - 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string report_csv_header() { return "tau,acc_czsl,U,S,H"; }

inline std::string report_csv_row(const EvalReport& r) {
  return format_double(r.tau) + "," + format_double(r.acc_czsl) + "," + format_double(r.U) + "," +
         format_double(r.S) + "," + format_double(r.H);
}

inline std::string report_text(const EvalReport& r) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "tau      %.4f\nCZSL acc %.2f%%\nU        %.2f%%\nS        %.2f%%\nH        %.2f%%\n",
                r.tau, r.acc_czsl, r.U, r.S, r.H);
  out << line << "confusion (rows: true class, columns: predicted)\n";
  for (const auto& row : r.confusion) {
    for (std::size_t c = 0; c < row.size(); ++c) out << (c ? " " : "") << row[c];
    out << '\n';
  }
  return out.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw Error("failed writing '" + path + "'");
}

inline std::string sweep_csv(const TauSweep& s) {
  std::string out = "tau,H\n";
  for (const auto& r : s.reports) out += format_double(r.tau) + "," + format_double(r.H) + "\n";
  return out;
}

/// H against tau as a standalone SVG line plot.
inline std::string sweep_svg(const TauSweep& s) {
  const double w = 480, h = 320, left = 50, right = 20, top = 20, bottom = 40;
  double lo = s.reports.front().tau, hi = s.reports.back().tau;
  if (hi <= lo) hi = lo + 1;
  auto px = [&](double tau) { return left + (tau - lo) / (hi - lo) * (w - left - right); };
  auto py = [&](double H) { return top + (1.0 - H / 100.0) * (h - top - bottom); };
  std::ostringstream out;
  char buf[128];
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\">\n";
  out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", left, h - bottom,
                w - right, h - bottom);
  out << buf;
  std::snprintf(buf, sizeof buf, "<line x1=\"%g\" y1=\"%g\" x2=\"%g\" y2=\"%g\" stroke=\"black\"/>\n", left, top, left,
                h - bottom);
  out << buf;
  for (double H : {0.0, 50.0, 100.0}) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"end\">%g</text>\n",
                  left - 6, py(H) + 4, H);
    out << buf;
  }
  for (double tau : {lo, (lo + hi) / 2, hi}) {
    std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"11\" text-anchor=\"middle\">%g</text>\n",
                  px(tau), h - bottom + 16, tau);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "<text x=\"%g\" y=\"%g\" font-size=\"12\" text-anchor=\"middle\">tau</text>\n",
                (left + w - right) / 2, h - 6);
  out << buf;
  std::snprintf(buf, sizeof buf, "<text x=\"14\" y=\"%g\" font-size=\"12\">H</text>\n", (top + h - bottom) / 2);
  out << buf;
  out << "<polyline fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\" points=\"";
  for (std::size_t i = 0; i < s.reports.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.2f,%.2f", i ? " " : "", px(s.reports[i].tau), py(s.reports[i].H));
    out << buf;
  }
  out << "\"/>\n</svg>\n";
  return out.str();
}

}  // namespace vspcn
