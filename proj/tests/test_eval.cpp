// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <beamdapt/eval.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace beamdapt;

namespace {

ArchSpec tiny_arch(int input_len, int num_beams) {
  ArchSpec a;
  a.input_len = input_len;
  a.num_beams = num_beams;
  a.conv_channels = {3, 4, 4, 4};
  a.kernel = 3;
  a.dense_hidden = 8;
  a.domain_hidden = 5;
  return a;
}

ScenarioConfig small_scenario(std::uint64_t seed, int users = 6) {
  ScenarioConfig cfg;
  cfg.num_subcarriers = 16;
  cfg.carrier_freq_hz = 60e9;
  cfg.bandwidth_hz = 0.05e9;
  cfg.noise_power = 1e-4;
  cfg.paths_per_link = 3;
  cfg.rng_seed = seed;
  cfg.bs_list = {{{10.0, 5.0, 8.0}, {2, 2, 0.5}},
                 {{40.0, -5.0, 8.0}, {2, 2, 0.5}}};
  for (int u = 0; u < users; ++u)
    cfg.user_track.push_back({{2.0 * u + 1.0, 0.0, 1.5}, 8.3333, 0.0});
  return cfg;
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("beamdapt_eval_" + std::to_string(::getpid()) + "_" +
            std::to_string(counter()++));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
  static int& counter() {
    static int c = 0;
    return c;
  }
};

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream os;
  os << is.rdbuf();
  return os.str();
}

std::vector<EvalRow> sample_rows() {
  std::vector<EvalRow> rows;
  for (const char* method : {"transfer_da", "finetune_pure", "scratch"})
    for (int size : {50, 100})
      for (std::uint64_t seed : {1ULL, 2ULL}) {
        EvalRow r;
        r.method = method;
        r.bs_id = 0;
        r.train_size = size;
        r.seed = seed;
        r.eff_rate_bps_hz = 2.0 + 0.01 * size + 0.1 * static_cast<double>(seed);
        r.top1 = 0.5;
        r.top3 = 0.8;
        r.trainable_params = std::string(method) == "scratch" ? 5000 : 800;
        rows.push_back(r);
      }
  return rows;
}

}  // namespace

TEST_CASE("topk_indices sorts descending with lowest-index ties") {
  VectorXd v(6);
  v << 1.0, 5.0, 5.0, 0.0, 5.0, 2.0;
  const auto top3 = topk_indices(v, 3);
  CHECK(top3 == std::vector<int>{1, 2, 4});
  const auto top1 = topk_indices(v, 1);
  CHECK(top1 == std::vector<int>{1});
  // k beyond the vector length clamps.
  CHECK(topk_indices(v, 99).size() == 6);
  CHECK(argmax_lowest(v) == 1);
}

TEST_CASE("topk_accuracy is exact against the model's own outputs") {
  const auto arch = tiny_arch(16, 4);
  Model m(arch, 3, 1.0);
  Rng rng(5);
  Dataset ds;
  for (int i = 0; i < 24; ++i) {
    BeamSample s;
    s.features.resize(static_cast<std::size_t>(2 * arch.input_len));
    for (auto& f : s.features) f = static_cast<float>(rng.uniform(-1.0, 1.0));
    // Labels copied from the model's own prediction: top-1 must be perfect.
    const auto [pred, feat] = m.forward(sample_input(s));
    s.labels.resize(static_cast<std::size_t>(arch.num_beams));
    for (int d = 0; d < arch.num_beams; ++d)
      s.labels[static_cast<std::size_t>(d)] = static_cast<float>(pred(d));
    ds.samples.push_back(std::move(s));
  }
  CHECK(topk_accuracy(m, ds, 1) == 1.0);
  CHECK(topk_accuracy(m, ds, 3) == 1.0);
  // k = D always hits.
  CHECK(topk_accuracy(m, ds, arch.num_beams) == 1.0);

  // Now rotate every label vector so the true best beam moves away from
  // the prediction argmax: top-1 must drop to zero.
  Dataset rotated = ds;
  for (auto& s : rotated.samples) {
    const auto [pred, feat] = m.forward(sample_input(s));
    const int best = argmax_lowest(pred);
    std::vector<float> lab(s.labels.size(), 0.0f);
    lab[static_cast<std::size_t>((best + 1) % arch.num_beams)] = 1.0f;
    s.labels = lab;
  }
  CHECK(topk_accuracy(m, rotated, 1) == 0.0);
  CHECK(topk_accuracy(m, rotated, arch.num_beams) == 1.0);
  CHECK_THROWS_AS(topk_accuracy(m, ds, 0), std::invalid_argument);
  Dataset empty;
  CHECK_THROWS_AS(topk_accuracy(m, empty, 1), std::invalid_argument);
}

TEST_CASE("genie and exhaustive rates differ by exactly the overhead factor") {
  const auto cfg = small_scenario(7);
  const PathTable paths = synth_scenario(cfg, DomainTag::kSource);
  const std::vector<Codebook> cbs(cfg.bs_list.size(),
                                  dft_codebook({2, 2, 0.5}));
  OverheadModel oh;
  oh.t_pilot = 10e-6;
  oh.t_beam_coherence = 10e-3;

  Rng rng(11);
  const double genie =
      eval_effective_rate({}, paths, cfg, cbs, {}, oh, EvalMethod::kGenie, 8,
                          rng);
  const double exhaustive =
      eval_effective_rate({}, paths, cfg, cbs, {}, oh, EvalMethod::kExhaustive,
                          8, rng);
  CHECK(genie > 0.0);
  const double d = static_cast<double>(cbs.front().num_beams());
  const double factor = 1.0 - d * oh.t_pilot / oh.t_beam_coherence;
  CHECK(exhaustive == doctest::Approx(genie * factor).epsilon(1e-12));
}

TEST_CASE("learned mode is deterministic and bounded by the genie") {
  const auto cfg = small_scenario(7);
  const PathTable paths = synth_scenario(cfg, DomainTag::kSource);
  const std::vector<Codebook> cbs(cfg.bs_list.size(),
                                  dft_codebook({2, 2, 0.5}));
  OverheadModel oh;

  const auto arch = tiny_arch(16, static_cast<int>(cbs.front().num_beams()));
  Model m0(arch, 1, 1.0), m1(arch, 2, 1.0);
  std::vector<NormalizationConstants> norms(cfg.bs_list.size());
  for (auto& n : norms) n.feature_scale = 1.0;

  Rng rng(11);
  const double r1 = eval_effective_rate({&m0, &m1}, paths, cfg, cbs, norms, oh,
                                        EvalMethod::kLearned,
                                        cfg.num_subcarriers, rng);
  Rng rng2(11);
  const double r2 = eval_effective_rate({&m0, &m1}, paths, cfg, cbs, norms, oh,
                                        EvalMethod::kLearned,
                                        cfg.num_subcarriers, rng2);
  CHECK(r1 == r2);
  CHECK(r1 > 0.0);

  Rng rng3(11);
  const double genie = eval_effective_rate(
      {}, paths, cfg, cbs, {}, oh, EvalMethod::kGenie, cfg.num_subcarriers,
      rng3);
  CHECK(r1 <= genie);

  // Learned mode validates its per-BS inputs.
  Rng rng4(11);
  CHECK_THROWS_AS(eval_effective_rate({&m0}, paths, cfg, cbs, norms, oh,
                                      EvalMethod::kLearned,
                                      cfg.num_subcarriers, rng4),
                  std::invalid_argument);
}

TEST_CASE("eval rows round-trip through JSON") {
  EvalRow r;
  r.method = "transfer_da";
  r.bs_id = 1;
  r.train_size = 200;
  r.seed = 42;
  r.eff_rate_bps_hz = 3.14159;
  r.top1 = 0.625;
  r.top3 = 0.875;
  r.trainable_params = 12345;
  const EvalRow back = eval_row_from_json(eval_row_to_json(r));
  CHECK(back.method == r.method);
  CHECK(back.bs_id == r.bs_id);
  CHECK(back.train_size == r.train_size);
  CHECK(back.seed == r.seed);
  CHECK(back.eff_rate_bps_hz == r.eff_rate_bps_hz);
  CHECK(back.top1 == r.top1);
  CHECK(back.top3 == r.top3);
  CHECK(back.trainable_params == r.trainable_params);
}

TEST_CASE("report.csv has the documented header and deterministic bytes") {
  TempDir tmp;
  const auto rows = sample_rows();
  const auto p1 = tmp.path / "a.csv";
  const auto p2 = tmp.path / "b.csv";
  write_report_csv(rows, p1.string());
  // Shuffled input must serialize identically after sorting.
  auto shuffled = rows;
  std::reverse(shuffled.begin(), shuffled.end());
  write_report_csv(shuffled, p2.string());
  const std::string a = slurp(p1);
  CHECK(a == slurp(p2));
  std::istringstream is(a);
  std::string header;
  std::getline(is, header);
  CHECK(header ==
        "method,bs_id,train_size,seed,eff_rate_bps_hz,top1,top3,"
        "trainable_params");
  std::size_t n = 0;
  for (std::string line; std::getline(is, line);)
    if (!line.empty()) ++n;
  CHECK(n == rows.size());
}

TEST_CASE("report aggregates run directories and emits plots") {
  TempDir tmp;
  const auto rows = sample_rows();
  const std::vector<EvalRow> first(rows.begin(), rows.begin() + 4);
  const std::vector<EvalRow> second(rows.begin() + 4, rows.end());
  const auto run1 = (tmp.path / "run1").string();
  const auto run2 = (tmp.path / "run2").string();
  write_eval_rows(first, run1);
  write_eval_rows(second, run2);

  const auto out = (tmp.path / "out").string();
  const EvalReport rep = report({run1, run2}, out);
  CHECK(rep.rows.size() == rows.size());
  for (const char* name :
       {"report.csv", "rate_vs_size.svg", "top1_accuracy.svg",
        "top3_accuracy.svg", "trainable_params.svg"}) {
    const auto p = std::filesystem::path(out) / name;
    INFO("expected artifact ", p.string());
    CHECK(std::filesystem::exists(p));
    CHECK(std::filesystem::file_size(p) > 0);
  }
  CHECK(slurp(std::filesystem::path(out) / "rate_vs_size.svg").substr(0, 4) ==
        "<svg");

  // A missing run directory is reported by name.
  const auto ghost = (tmp.path / "ghost").string();
  try {
    report({run1, ghost}, out);
    FAIL("expected report to throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("ghost") != std::string::npos);
  }
  CHECK_THROWS_AS(report({}, out), std::invalid_argument);
}

TEST_CASE("eval rows survive the run-directory round trip") {
  TempDir tmp;
  const auto rows = sample_rows();
  const auto dir = (tmp.path / "run").string();
  write_eval_rows(rows, dir);
  const auto back = read_eval_rows(dir);
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].method == rows[i].method);
    CHECK(back[i].eff_rate_bps_hz == rows[i].eff_rate_bps_hz);
    CHECK(back[i].seed == rows[i].seed);
  }
}
