// SPDX-License-Identifier: Apache-2.0
//
// Command-line driver. Subcommands:
//   generate   scenario -> path table + per-BS beam datasets
//   pretrain   source dataset -> trained run directory
//   transfer   pretrained checkpoint + target/source datasets -> run dir
//   finetune   pretrained checkpoint + target dataset -> run dir
//   scratch    target dataset -> run dir
//   evaluate   checkpoints + test data -> eval.json
//   report     run directories -> report.csv + plots
//   selfcheck  gradient and oracle sanity suite
//
// Exit codes: 0 success, 1 validation/config error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <beamdapt/experiment.hpp>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace beamdapt;

namespace {

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  std::ifstream is(path);
  if (!is) throw std::invalid_argument("cannot open config file: " + path);
  json j;
  is >> j;
  return j;
}

json scenario_to_json(const ScenarioConfig& cfg) {
  json bs = json::array();
  for (const auto& b : cfg.bs_list)
    bs.push_back({{"x", b.position[0]},
                  {"y", b.position[1]},
                  {"z", b.position[2]},
                  {"m_h", b.geometry.m_h},
                  {"m_v", b.geometry.m_v},
                  {"spacing_wavelengths", b.geometry.spacing_wavelengths}});
  json users = json::array();
  for (const auto& u : cfg.user_track)
    users.push_back({{"x", u.position[0]},
                     {"y", u.position[1]},
                     {"z", u.position[2]},
                     {"speed_mps", u.speed_mps},
                     {"heading_rad", u.heading_rad}});
  return json{{"num_subcarriers", cfg.num_subcarriers},
              {"carrier_freq_hz", cfg.carrier_freq_hz},
              {"bandwidth_hz", cfg.bandwidth_hz},
              {"noise_power", cfg.noise_power},
              {"paths_per_link", cfg.paths_per_link},
              {"rng_seed", cfg.rng_seed},
              {"time_s", cfg.time_s},
              {"bs_list", bs},
              {"user_track", users}};
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig cfg;
  cfg.num_subcarriers = j.at("num_subcarriers").get<int>();
  cfg.carrier_freq_hz = j.at("carrier_freq_hz").get<double>();
  cfg.bandwidth_hz = j.at("bandwidth_hz").get<double>();
  cfg.noise_power = j.at("noise_power").get<double>();
  cfg.paths_per_link = j.at("paths_per_link").get<int>();
  cfg.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  cfg.time_s = j.at("time_s").get<double>();
  for (const auto& b : j.at("bs_list")) {
    BsSite s;
    s.position = {b.at("x").get<double>(), b.at("y").get<double>(),
                  b.at("z").get<double>()};
    s.geometry = {b.at("m_h").get<int>(), b.at("m_v").get<int>(),
                  b.at("spacing_wavelengths").get<double>()};
    cfg.bs_list.push_back(s);
  }
  for (const auto& u : j.at("user_track")) {
    UserState s;
    s.position = {u.at("x").get<double>(), u.at("y").get<double>(),
                  u.at("z").get<double>()};
    s.speed_mps = u.at("speed_mps").get<double>();
    s.heading_rad = u.at("heading_rad").get<double>();
    cfg.user_track.push_back(s);
  }
  return cfg;
}

TrainConfig train_config_from_json(const json& j, std::uint64_t seed) {
  TrainConfig c;
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.lambda = j.value("lambda", c.lambda);
  c.freeze_count = j.value("freeze_count", c.freeze_count);
  c.patience = j.value("patience", c.patience);
  c.mse_on_source = j.value("mse_on_source", c.mse_on_source);
  c.val_fraction = j.value("val_fraction", c.val_fraction);
  c.seed = j.value("seed", seed);
  c.validate();
  return c;
}

ArchSpec arch_from_manifest(const DatasetManifest& m, const json& j) {
  ArchSpec a;
  a.input_len = m.feature_subcarriers;
  a.num_beams = m.num_beams;
  if (j.contains("arch")) {
    const json& aj = j.at("arch");
    a.conv_channels = aj.value("conv_channels", a.conv_channels);
    a.kernel = aj.value("kernel", a.kernel);
    a.dense_hidden = aj.value("dense_hidden", a.dense_hidden);
    a.domain_hidden = aj.value("domain_hidden", a.domain_hidden);
  }
  return a;
}

std::string checkpoint_dir(const std::string& path) {
  // Accept either a run directory or a checkpoint directory.
  if (fs::exists(path + "/checkpoint/model.json")) return path + "/checkpoint";
  return path;
}

int cmd_generate(const json& cfg, std::uint64_t seed, const std::string& out) {
  ExperimentSpec spec;
  spec.num_subcarriers = cfg.value("num_subcarriers", spec.num_subcarriers);
  spec.feature_subcarriers =
      cfg.value("feature_subcarriers", spec.feature_subcarriers);
  spec.geometry.m_h = cfg.value("m_h", spec.geometry.m_h);
  spec.geometry.m_v = cfg.value("m_v", spec.geometry.m_v);
  spec.paths_per_link = cfg.value("paths_per_link", spec.paths_per_link);
  spec.carrier_freq_hz = cfg.value("carrier_freq_hz", spec.carrier_freq_hz);
  spec.bandwidth_hz = cfg.value("bandwidth_hz", spec.bandwidth_hz);
  spec.noise_power = cfg.value("noise_power", spec.noise_power);
  spec.user_speed_mps = cfg.value("user_speed_mps", spec.user_speed_mps);

  const std::string domain = cfg.value("domain", std::string("source"));
  if (domain != "source" && domain != "target")
    throw std::invalid_argument("generate: domain must be source or target");
  const DomainTag tag =
      domain == "source" ? DomainTag::kSource : DomainTag::kTarget;
  const int users = cfg.value("users", 100);
  if (users < 1) throw std::invalid_argument("generate: users must be >= 1");

  const ScenarioConfig sc = make_scenario(spec, tag, users, seed);
  const PathTable paths = synth_scenario(sc, tag);
  std::vector<Codebook> cbs(sc.bs_list.size(), dft_codebook(spec.geometry));
  Rng rng(seed, 0xda7aULL + (tag == DomainTag::kSource ? 0 : 1));
  std::vector<Dataset> per_bs = build_domain_dataset(
      paths, sc, cbs, spec.feature_subcarriers, tag, rng);

  // Source runs define normalization; target runs reuse the constants of a
  // previously generated source directory via "norms_from".
  if (cfg.contains("norms_from")) {
    const std::string src = cfg.at("norms_from").get<std::string>();
    for (std::size_t b = 0; b < per_bs.size(); ++b) {
      const Dataset ref =
          load_dataset(src + "/bs_" + std::to_string(b));
      NormalizationConstants n;
      n.feature_scale = ref.manifest.feature_scale;
      n.label_scale = ref.manifest.label_scale;
      apply_normalization(per_bs[b], n);
    }
  } else {
    for (auto& ds : per_bs) normalize(ds);
  }

  fs::create_directories(out);
  save_paths(paths, out + "/paths.csv");
  {
    std::ofstream os(out + "/scenario.json");
    if (!os) throw std::runtime_error("cannot write " + out + "/scenario.json");
    os << scenario_to_json(sc).dump(2) << "\n";
  }
  for (std::size_t b = 0; b < per_bs.size(); ++b)
    save_dataset(per_bs[b], out + "/bs_" + std::to_string(b));
  std::printf("generate: %zu users, %zu base stations -> %s\n", paths.size(),
              per_bs.size(), out.c_str());
  return 0;
}

int cmd_pretrain(const json& cfg, std::uint64_t seed, const std::string& out) {
  const Dataset src = load_dataset(cfg.at("dataset").get<std::string>());
  const TrainConfig tc = train_config_from_json(cfg, seed);
  TrainResult r = pretrain(src, tc, arch_from_manifest(src.manifest, cfg));
  save_run(out, tc, Regime::kPretrain, r);
  std::printf("pretrain: final val_mse %.6g -> %s\n",
              r.history.empty() ? 0.0 : r.history.back().val_mse, out.c_str());
  return 0;
}

int cmd_transfer(const json& cfg, std::uint64_t seed, const std::string& out) {
  Model pre = load_checkpoint(
      checkpoint_dir(cfg.at("pretrained").get<std::string>()));
  const Dataset tgt = load_dataset(cfg.at("target").get<std::string>());
  const Dataset src = load_dataset(cfg.at("source").get<std::string>());
  const TrainConfig tc = train_config_from_json(cfg, seed);
  TrainResult r = transfer_da(pre, tgt, src, tc);
  save_run(out, tc, Regime::kTransferDa, r);
  std::printf("transfer: final val_mse %.6g -> %s\n",
              r.history.empty() ? 0.0 : r.history.back().val_mse, out.c_str());
  return 0;
}

int cmd_finetune(const json& cfg, std::uint64_t seed, const std::string& out) {
  Model pre = load_checkpoint(
      checkpoint_dir(cfg.at("pretrained").get<std::string>()));
  const Dataset tgt = load_dataset(cfg.at("target").get<std::string>());
  const TrainConfig tc = train_config_from_json(cfg, seed);
  TrainResult r = finetune_pure(pre, tgt, tc);
  save_run(out, tc, Regime::kFinetunePure, r);
  std::printf("finetune: final val_mse %.6g -> %s\n",
              r.history.empty() ? 0.0 : r.history.back().val_mse, out.c_str());
  return 0;
}

int cmd_scratch(const json& cfg, std::uint64_t seed, const std::string& out) {
  const Dataset tgt = load_dataset(cfg.at("target").get<std::string>());
  const TrainConfig tc = train_config_from_json(cfg, seed);
  TrainResult r = train_scratch(tgt, tc, arch_from_manifest(tgt.manifest, cfg));
  save_run(out, tc, Regime::kScratch, r);
  std::printf("scratch: final val_mse %.6g -> %s\n",
              r.history.empty() ? 0.0 : r.history.back().val_mse, out.c_str());
  return 0;
}

int cmd_evaluate(const json& cfg, std::uint64_t seed, const std::string& out) {
  const std::string method = cfg.at("method").get<std::string>();
  const std::string scen_dir = cfg.at("scenario").get<std::string>();
  std::ifstream ss(scen_dir + "/scenario.json");
  if (!ss)
    throw std::invalid_argument("evaluate: missing " + scen_dir +
                                "/scenario.json");
  json sj;
  ss >> sj;
  const ScenarioConfig sc = scenario_from_json(sj);
  const PathTable paths = load_paths(scen_dir + "/paths.csv");
  std::vector<Codebook> cbs;
  for (const auto& b : sc.bs_list) cbs.push_back(dft_codebook(b.geometry));

  OverheadModel oh;
  oh.t_pilot = cfg.value("t_pilot", oh.t_pilot);
  oh.t_beam_coherence = cfg.value("t_beam_coherence", oh.t_beam_coherence);

  const int train_size = cfg.value("train_size", 0);
  Rng rng(seed, 0xe4a1ULL);
  std::vector<EvalRow> rows;

  if (method == "genie" || method == "exhaustive") {
    const EvalMethod m =
        method == "genie" ? EvalMethod::kGenie : EvalMethod::kExhaustive;
    EvalRow row;
    row.method = method;
    row.bs_id = -1;
    row.train_size = train_size;
    row.seed = seed;
    row.eff_rate_bps_hz = eval_effective_rate(
        {}, paths, sc, cbs, {}, oh, m, cfg.value("feature_subcarriers", 32),
        rng);
    row.top1 = 1.0;
    row.top3 = 1.0;
    rows.push_back(row);
  } else {
    // Learned method: one checkpoint and one test dataset per BS.
    const auto ckpt_dirs =
        cfg.at("checkpoints").get<std::vector<std::string>>();
    const auto ds_dirs = cfg.at("datasets").get<std::vector<std::string>>();
    if (ckpt_dirs.size() != sc.bs_list.size() ||
        ds_dirs.size() != sc.bs_list.size())
      throw std::invalid_argument(
          "evaluate: need one checkpoint and one dataset per BS");
    std::vector<Model> models;
    std::vector<Dataset> tests;
    std::vector<NormalizationConstants> norms;
    int k_dl = 0;
    for (std::size_t b = 0; b < ckpt_dirs.size(); ++b) {
      models.push_back(load_checkpoint(checkpoint_dir(ckpt_dirs[b])));
      tests.push_back(load_dataset(ds_dirs[b]));
      norms.push_back({tests.back().manifest.feature_scale,
                       tests.back().manifest.label_scale});
      k_dl = tests.back().manifest.feature_subcarriers;
    }
    std::vector<Model*> ptrs;
    for (auto& m : models) ptrs.push_back(&m);
    const double rate = eval_effective_rate(ptrs, paths, sc, cbs, norms, oh,
                                            EvalMethod::kLearned, k_dl, rng);
    for (std::size_t b = 0; b < models.size(); ++b) {
      EvalRow row;
      row.method = method;
      row.bs_id = static_cast<int>(b);
      row.train_size = train_size;
      row.seed = seed;
      row.eff_rate_bps_hz = rate;
      row.top1 = topk_accuracy(models[b], tests[b], 1);
      row.top3 = topk_accuracy(models[b], tests[b], 3);
      row.trainable_params = models[b].trainable_param_count();
      rows.push_back(row);
    }
  }
  write_eval_rows(rows, out);
  std::printf("evaluate: %zu rows -> %s/eval.json\n", rows.size(),
              out.c_str());
  return 0;
}

int cmd_report(const json& cfg, const std::string& out,
               std::vector<std::string> runs) {
  if (runs.empty() && cfg.contains("runs"))
    runs = cfg.at("runs").get<std::vector<std::string>>();
  const EvalReport rep = report(runs, out);
  std::printf("report: %zu rows -> %s/report.csv\n", rep.rows.size(),
              out.c_str());
  return 0;
}

int cmd_selfcheck() {
  int failures = 0;
  auto check = [&](const char* name, bool ok) {
    std::printf("%-40s %s\n", name, ok ? "ok" : "FAIL");
    if (!ok) ++failures;
  };

  {
    const Codebook cb = dft_codebook({32, 8, 0.5});
    const MatrixXcd g =
        cb.beams.adjoint() * cb.beams -
        MatrixXcd::Identity(cb.beams.cols(), cb.beams.cols());
    check("codebook unitarity (32x8)", g.cwiseAbs().maxCoeff() < 1e-9);
  }
  {
    ArchSpec a;
    a.input_len = 16;
    a.num_beams = 4;
    a.conv_channels = {3, 4, 4, 4};
    a.kernel = 3;
    a.dense_hidden = 8;
    a.domain_hidden = 5;
    Model m(a, 21, 1.0);
    Rng noise(99);
    for (auto* l : m.all_layers())
      for (auto* p : l->params())
        for (long j = 0; j < p->cols(); ++j)
          for (long i = 0; i < p->rows(); ++i)
            (*p)(i, j) += noise.uniform(-0.05, 0.05);
    MiniBatch b;
    Rng rng(17);
    for (int i = 0; i < 3; ++i) {
      MatrixXd x(2, a.input_len);
      for (long j = 0; j < x.size(); ++j)
        x(j / a.input_len, j % a.input_len) = rng.uniform(-1.0, 1.0);
      MatrixXd t(a.num_beams, 1);
      for (long j = 0; j < t.rows(); ++j) t(j, 0) = rng.uniform(0.0, 1.0);
      b.inputs.push_back(x);
      b.targets.push_back(t);
      b.domain_labels.push_back(i % 2);
      b.use_mse.push_back(true);
      b.use_domain.push_back(true);
    }
    const auto rep = finite_diff_check(m, b, 1e-4);
    check("finite-difference gradients", rep.passed);
  }
  {
    nn::GradientReversal grl(0.75);
    Batch g{MatrixXd::Random(6, 1)};
    Batch x{MatrixXd::Random(6, 1)};
    grl.forward(x, true);
    const Batch back = grl.backward(g);
    check("gradient reversal is -lambda*g", back[0] == (-0.75 * g[0]).eval());
  }
  {
    // 1666.67 is the reference value quoted to two decimals; allow the
    // rounding slack that implies.
    check("doppler oracle 30 km/h at 60 GHz",
          std::abs(doppler_shift(8.3333, 60e9, 0.0) - 1666.67) < 0.0101);
  }
  return failures == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mmWave beam prediction with adversarial domain transfer"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "JSON config file")
      ->configurable(false);
  app.add_option("--seed", seed, "RNG seed");
  app.add_option("--out", out_dir, "output directory");

  std::vector<std::string> run_dirs;
  auto* c_generate = app.add_subcommand("generate", "synthesize a scenario");
  auto* c_pretrain = app.add_subcommand("pretrain", "source-domain training");
  auto* c_transfer =
      app.add_subcommand("transfer", "adversarial domain transfer");
  auto* c_finetune = app.add_subcommand("finetune", "pure fine-tuning");
  auto* c_scratch = app.add_subcommand("scratch", "target-only training");
  auto* c_evaluate = app.add_subcommand("evaluate", "rate and accuracy");
  auto* c_report = app.add_subcommand("report", "aggregate run directories");
  c_report->add_option("runs", run_dirs, "run directories");
  auto* c_selfcheck =
      app.add_subcommand("selfcheck", "gradient and oracle sanity suite");
  // Let --config/--seed/--out appear after the subcommand name.
  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    const json cfg = load_config(config_path);
    if (c_generate->parsed()) return cmd_generate(cfg, seed, out_dir);
    if (c_pretrain->parsed()) return cmd_pretrain(cfg, seed, out_dir);
    if (c_transfer->parsed()) return cmd_transfer(cfg, seed, out_dir);
    if (c_finetune->parsed()) return cmd_finetune(cfg, seed, out_dir);
    if (c_scratch->parsed()) return cmd_scratch(cfg, seed, out_dir);
    if (c_evaluate->parsed()) return cmd_evaluate(cfg, seed, out_dir);
    if (c_report->parsed()) return cmd_report(cfg, out_dir, run_dirs);
    if (c_selfcheck->parsed()) return cmd_selfcheck();
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "runtime error: %s\n", e.what());
    return 2;
  }
  return 1;
}
