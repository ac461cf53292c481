// SPDX-License-Identifier: Apache-2.0
//
// Evaluation: top-k beam accuracy, effective achievable rate for the
// genie / exhaustive-search / learned methods, and CSV + SVG reporting.

#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamdapt/beam_metrics.hpp"
#include "beamdapt/dataset.hpp"
#include "beamdapt/nn.hpp"
#include "beamdapt/training.hpp"

namespace beamdapt {

// Indices of the k largest entries, ties broken by lowest index.
inline std::vector<int> topk_indices(const VectorXd& v, int k) {
  std::vector<int> idx(static_cast<std::size_t>(v.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return v(a) > v(b); });
  idx.resize(static_cast<std::size_t>(std::min<long>(k, v.size())));
  return idx;
}

inline int argmax_lowest(const VectorXd& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

// Fraction of samples whose true best beam is among the k highest
// predicted rates.
inline double topk_accuracy(Model& model, const Dataset& test, int k) {
  if (k < 1) throw std::invalid_argument("topk_accuracy: k >= 1");
  if (test.samples.empty())
    throw std::invalid_argument("topk_accuracy: empty dataset");
  std::size_t hits = 0;
  for (const auto& s : test.samples) {
    const auto [pred, feat] = model.forward(sample_input(s));
    const int truth = argmax_lowest(sample_target(s).col(0));
    const auto top = topk_indices(pred, k);
    if (std::find(top.begin(), top.end(), truth) != top.end()) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(test.samples.size());
}

enum class EvalMethod { kGenie, kExhaustive, kLearned };

inline const char* eval_method_name(EvalMethod m) {
  switch (m) {
    case EvalMethod::kGenie: return "genie";
    case EvalMethod::kExhaustive: return "exhaustive";
    case EvalMethod::kLearned: return "learned";
  }
  return "?";
}

// Effective achievable rate averaged over the test users. Genie uses the
// true per-BS optimal beams at overhead factor 1; exhaustive uses the true
// optimal beams at factor (1 - D*T_p/T_B); learned uses each model's
// predicted-argmax beam at factor (1 - 2*T_p/T_B). Learned-mode features
// are normalized with the supplied training constants.
inline double eval_effective_rate(std::vector<Model*> models,
                                  const PathTable& paths,
                                  const ScenarioConfig& cfg,
                                  const std::vector<Codebook>& codebooks,
                                  const std::vector<NormalizationConstants>& norms,
                                  const OverheadModel& oh, EvalMethod method,
                                  int k_dl, Rng& rng) {
  cfg.validate();
  oh.validate();
  const std::size_t num_bs = cfg.bs_list.size();
  if (codebooks.size() != num_bs)
    throw std::invalid_argument("eval_effective_rate: codebook count mismatch");
  if (method == EvalMethod::kLearned &&
      (models.size() != num_bs || norms.size() != num_bs))
    throw std::invalid_argument(
        "eval_effective_rate: learned mode needs one model and one "
        "normalization per BS");

  OverheadModel adjusted = oh;
  OverheadMode mode = OverheadMode::kLearned;
  switch (method) {
    case EvalMethod::kGenie:
      adjusted.t_pilot = 0.0;  // perfect knowledge, factor 1
      break;
    case EvalMethod::kExhaustive:
      adjusted.t_train =
          static_cast<double>(codebooks.front().num_beams()) * oh.t_pilot;
      mode = OverheadMode::kExhaustive;
      break;
    case EvalMethod::kLearned:
      break;
  }
  adjusted.validate();

  double acc = 0.0;
  for (std::size_t u = 0; u < paths.size(); ++u) {
    std::vector<ChannelRealization> hs;
    std::vector<int> beams;
    for (std::size_t b = 0; b < num_bs; ++b) {
      const ChannelRealization H =
          channel_matrix(paths[u][b], cfg.bs_list[b].geometry,
                         cfg.num_subcarriers, cfg.time_s);
      int beam;
      if (method == EvalMethod::kLearned) {
        Rng sample_rng = rng.split(u * 8192 + b);
        BeamSample s =
            build_sample(H, codebooks[b], cfg.noise_power, k_dl, sample_rng);
        for (float& v : s.features)
          v = static_cast<float>(v / norms[b].feature_scale);
        const auto [pred, feat] = models[b]->forward(sample_input(s));
        beam = argmax_lowest(pred);
      } else {
        beam = optimal_beam(H, codebooks[b], cfg.noise_power).first;
      }
      hs.push_back(H);
      beams.push_back(beam);
    }
    acc += effective_rate(hs, beams, codebooks.front(), cfg.noise_power,
                          adjusted, mode);
  }
  return acc / static_cast<double>(paths.size());
}

// ---- reporting -----------------------------------------------------------

struct EvalRow {
  std::string method;
  int bs_id = 0;
  int train_size = 0;
  std::uint64_t seed = 0;
  double eff_rate_bps_hz = 0.0;
  double top1 = 0.0;
  double top3 = 0.0;
  long trainable_params = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
};

inline nlohmann::json eval_row_to_json(const EvalRow& r) {
  return nlohmann::json{{"method", r.method},
                        {"bs_id", r.bs_id},
                        {"train_size", r.train_size},
                        {"seed", r.seed},
                        {"eff_rate_bps_hz", r.eff_rate_bps_hz},
                        {"top1", r.top1},
                        {"top3", r.top3},
                        {"trainable_params", r.trainable_params}};
}

inline EvalRow eval_row_from_json(const nlohmann::json& j) {
  EvalRow r;
  r.method = j.at("method").get<std::string>();
  r.bs_id = j.at("bs_id").get<int>();
  r.train_size = j.at("train_size").get<int>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.eff_rate_bps_hz = j.at("eff_rate_bps_hz").get<double>();
  r.top1 = j.at("top1").get<double>();
  r.top3 = j.at("top3").get<double>();
  r.trainable_params = j.at("trainable_params").get<long>();
  return r;
}

inline void sort_rows(std::vector<EvalRow>& rows) {
  std::sort(rows.begin(), rows.end(), [](const EvalRow& a, const EvalRow& b) {
    return std::tie(a.method, a.bs_id, a.train_size, a.seed) <
           std::tie(b.method, b.bs_id, b.train_size, b.seed);
  });
}

inline void write_report_csv(std::vector<EvalRow> rows,
                             const std::string& path) {
  sort_rows(rows);
  std::ofstream os(path);
  if (!os) throw std::runtime_error("write_report_csv: cannot open " + path);
  os << "method,bs_id,train_size,seed,eff_rate_bps_hz,top1,top3,"
        "trainable_params\n";
  os.precision(17);
  for (const auto& r : rows)
    os << r.method << ',' << r.bs_id << ',' << r.train_size << ',' << r.seed
       << ',' << r.eff_rate_bps_hz << ',' << r.top1 << ',' << r.top3 << ','
       << r.trainable_params << "\n";
}

inline std::vector<EvalRow> read_eval_rows(const std::string& run_dir) {
  const std::string path = run_dir + "/eval.json";
  std::ifstream is(path);
  if (!is) throw std::runtime_error("report: missing " + path);
  nlohmann::json j;
  is >> j;
  std::vector<EvalRow> rows;
  for (const auto& rj : j) rows.push_back(eval_row_from_json(rj));
  return rows;
}

inline void write_eval_rows(const std::vector<EvalRow>& rows,
                            const std::string& run_dir) {
  std::filesystem::create_directories(run_dir);
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) j.push_back(eval_row_to_json(r));
  std::ofstream os(run_dir + "/eval.json");
  if (!os) throw std::runtime_error("cannot write " + run_dir + "/eval.json");
  os << j.dump(2) << "\n";
}

namespace detail {

// Mean of `get` over rows matching (method, train_size), any bs/seed.
template <typename Get>
double mean_over(const std::vector<EvalRow>& rows, const std::string& method,
                 int train_size, Get get) {
  double acc = 0.0;
  int n = 0;
  for (const auto& r : rows)
    if (r.method == method && r.train_size == train_size) {
      acc += get(r);
      ++n;
    }
  return n > 0 ? acc / n : 0.0;
}

inline std::string svg_header(int w, int h) {
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w
     << "\" height=\"" << h << "\" viewBox=\"0 0 " << w << ' ' << h << "\">\n"
     << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  return os.str();
}

}  // namespace detail

// Line chart of mean effective rate vs target training-set size, one
// polyline per method.
inline void plot_rate_vs_size(const std::vector<EvalRow>& rows,
                              const std::string& path) {
  std::vector<std::string> methods;
  std::vector<int> sizes;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(sizes.begin(), sizes.end(), r.train_size) == sizes.end())
      sizes.push_back(r.train_size);
  }
  std::sort(methods.begin(), methods.end());
  std::sort(sizes.begin(), sizes.end());

  double ymax = 0.0;
  for (const auto& r : rows) ymax = std::max(ymax, r.eff_rate_bps_hz);
  if (ymax <= 0.0) ymax = 1.0;

  const int w = 640, h = 420, ml = 60, mb = 50, mt = 20, mr = 20;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e"};
  std::ostringstream os;
  os << detail::svg_header(w, h);
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  auto xpos = [&](std::size_t i) {
    return ml + (w - ml - mr) * (static_cast<double>(i) + 0.5) /
                    static_cast<double>(sizes.size());
  };
  auto ypos = [&](double v) { return h - mb - (h - mb - mt) * v / ymax; };
  for (std::size_t i = 0; i < sizes.size(); ++i)
    os << "<text x=\"" << xpos(i) << "\" y=\"" << h - mb + 18
       << "\" font-size=\"12\" text-anchor=\"middle\">" << sizes[i]
       << "</text>\n";
  os << "<text x=\"" << (w / 2) << "\" y=\"" << h - 8
     << "\" font-size=\"13\" text-anchor=\"middle\">target training-set "
        "size</text>\n";
  os << "<text x=\"14\" y=\"" << (h / 2)
     << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 14 "
     << (h / 2) << ")\">effective rate (bits/s/Hz)</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    os << "<polyline fill=\"none\" stroke=\"" << colors[m % 5]
       << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const double v = detail::mean_over(rows, methods[m], sizes[i],
                                         [](const EvalRow& r) {
                                           return r.eff_rate_bps_hz;
                                         });
      os << xpos(i) << ',' << ypos(v) << ' ';
    }
    os << "\"/>\n";
    os << "<text x=\"" << w - mr - 150 << "\" y=\"" << mt + 16 * (m + 1)
       << "\" font-size=\"12\" fill=\"" << colors[m % 5] << "\">" << methods[m]
       << "</text>\n";
  }
  os << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << os.str();
}

// Grouped bars of mean top-k accuracy per (method, size).
inline void plot_accuracy_bars(const std::vector<EvalRow>& rows, int k,
                               const std::string& path) {
  std::vector<std::string> methods;
  std::vector<int> sizes;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end())
      methods.push_back(r.method);
    if (std::find(sizes.begin(), sizes.end(), r.train_size) == sizes.end())
      sizes.push_back(r.train_size);
  }
  std::sort(methods.begin(), methods.end());
  std::sort(sizes.begin(), sizes.end());

  const int w = 640, h = 420, ml = 60, mb = 50, mt = 20, mr = 20;
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd",
                          "#ff7f0e"};
  std::ostringstream os;
  os << detail::svg_header(w, h);
  const double group_w =
      static_cast<double>(w - ml - mr) / static_cast<double>(sizes.size());
  const double bar_w = group_w / (static_cast<double>(methods.size()) + 1.0);
  for (std::size_t i = 0; i < sizes.size(); ++i) {
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto get = [k](const EvalRow& r) { return k == 1 ? r.top1 : r.top3; };
      const double v = detail::mean_over(rows, methods[m], sizes[i], get);
      const double x = ml + group_w * static_cast<double>(i) +
                       bar_w * (static_cast<double>(m) + 0.5);
      const double bh = (h - mb - mt) * v;
      os << "<rect x=\"" << x << "\" y=\"" << h - mb - bh << "\" width=\""
         << bar_w * 0.9 << "\" height=\"" << bh << "\" fill=\""
         << colors[m % 5] << "\"/>\n";
    }
    os << "<text x=\"" << ml + group_w * (static_cast<double>(i) + 0.5)
       << "\" y=\"" << h - mb + 18
       << "\" font-size=\"12\" text-anchor=\"middle\">" << sizes[i]
       << "</text>\n";
  }
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (w / 2) << "\" y=\"" << h - 8
     << "\" font-size=\"13\" text-anchor=\"middle\">top-" << k
     << " accuracy by target training-set size</text>\n";
  for (std::size_t m = 0; m < methods.size(); ++m)
    os << "<text x=\"" << w - mr - 150 << "\" y=\"" << mt + 16 * (m + 1)
       << "\" font-size=\"12\" fill=\"" << colors[m % 5] << "\">" << methods[m]
       << "</text>\n";
  os << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << os.str();
}

// Bars of trainable parameter counts per method.
inline void plot_param_bars(const std::vector<EvalRow>& rows,
                            const std::string& path) {
  std::vector<std::string> methods;
  std::vector<long> counts;
  for (const auto& r : rows) {
    if (r.trainable_params <= 0) continue;
    auto it = std::find(methods.begin(), methods.end(), r.method);
    if (it == methods.end()) {
      methods.push_back(r.method);
      counts.push_back(r.trainable_params);
    }
  }
  long cmax = 1;
  for (long c : counts) cmax = std::max(cmax, c);

  const int w = 520, h = 400, ml = 80, mb = 60, mt = 20, mr = 20;
  std::ostringstream os;
  os << detail::svg_header(w, h);
  const double bar_w =
      static_cast<double>(w - ml - mr) / (2.0 * methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const double x =
        ml + (2.0 * static_cast<double>(m) + 0.5) * bar_w;
    const double bh = (h - mb - mt) * static_cast<double>(counts[m]) /
                      static_cast<double>(cmax);
    os << "<rect x=\"" << x << "\" y=\"" << h - mb - bh << "\" width=\""
       << bar_w << "\" height=\"" << bh << "\" fill=\"#1f77b4\"/>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << h - mb + 18
       << "\" font-size=\"12\" text-anchor=\"middle\">" << methods[m]
       << "</text>\n";
    os << "<text x=\"" << x + bar_w / 2 << "\" y=\"" << h - mb - bh - 6
       << "\" font-size=\"11\" text-anchor=\"middle\">" << counts[m]
       << "</text>\n";
  }
  os << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr
     << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
  os << "<text x=\"" << (w / 2) << "\" y=\"" << h - 8
     << "\" font-size=\"13\" text-anchor=\"middle\">trainable "
        "parameters</text>\n";
  os << "</svg>\n";
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << os.str();
}

// Aggregate per-run eval.json files into report.csv and the three plots.
inline EvalReport report(const std::vector<std::string>& run_dirs,
                         const std::string& out_dir) {
  if (run_dirs.empty())
    throw std::invalid_argument("report: no run directories given");
  std::vector<std::string> missing;
  EvalReport rep;
  for (const auto& dir : run_dirs) {
    if (!std::filesystem::exists(dir + "/eval.json")) {
      missing.push_back(dir + "/eval.json");
      continue;
    }
    const auto rows = read_eval_rows(dir);
    rep.rows.insert(rep.rows.end(), rows.begin(), rows.end());
  }
  if (!missing.empty()) {
    std::string msg = "report: missing run artifacts:";
    for (const auto& m : missing) msg += " " + m;
    throw std::runtime_error(msg);
  }
  std::filesystem::create_directories(out_dir);
  sort_rows(rep.rows);
  write_report_csv(rep.rows, out_dir + "/report.csv");
  plot_rate_vs_size(rep.rows, out_dir + "/rate_vs_size.svg");
  plot_accuracy_bars(rep.rows, 1, out_dir + "/top1_accuracy.svg");
  plot_accuracy_bars(rep.rows, 3, out_dir + "/top3_accuracy.svg");
  plot_param_bars(rep.rows, out_dir + "/trainable_params.svg");
  return rep;
}

}  // namespace beamdapt
