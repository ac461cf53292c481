// SPDX-License-Identifier: Apache-2.0
//
// Supervised beam-prediction samples: uplink f_0 reception features,
// per-beam downlink rate labels, domain tags, normalization, persistence.

#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamdapt/beam_metrics.hpp"
#include "beamdapt/channel.hpp"
#include "beamdapt/tensor_file.hpp"

namespace beamdapt {

struct BeamSample {
  // Row-major 2 x K_DL: row 0 real parts, row 1 imaginary parts.
  std::vector<float> features;
  // Length D, per-beam achievable rates.
  std::vector<float> labels;
  std::int32_t domain_label = 1;  // 1 = source, 0 = target
  std::int32_t bs_id = 0;
  std::int32_t user_id = 0;

  bool operator==(const BeamSample&) const = default;
};

struct DatasetManifest {
  std::uint64_t scenario_digest = 0;
  int num_subcarriers = 0;    // K
  int feature_subcarriers = 0;  // K_DL
  int num_beams = 0;          // D
  std::uint64_t sample_count = 0;
  double feature_scale = 1.0;
  double label_scale = 1.0;
  bool normalized = false;
  std::uint64_t rng_seed = 0;
  std::string domain;  // "source" | "target"
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<BeamSample> samples;
};

inline BeamSample build_sample(const ChannelRealization& H, const Codebook& cb,
                               double noise_power, int k_dl, Rng& rng) {
  const int K = H.num_subcarriers();
  if (k_dl < 1 || k_dl > K)
    throw std::invalid_argument("build_sample: need 1 <= K_DL <= K");
  const VectorXcd r =
      receive_symbol(H, beam_column(cb, 0), unit_pilot(K), noise_power, rng);
  const VectorXd rates = rate_per_beam(H, cb, noise_power);

  BeamSample s;
  s.features.resize(static_cast<std::size_t>(2 * k_dl));
  for (int k = 0; k < k_dl; ++k) {
    s.features[static_cast<std::size_t>(k)] = static_cast<float>(r(k).real());
    s.features[static_cast<std::size_t>(k_dl + k)] =
        static_cast<float>(r(k).imag());
  }
  s.labels.resize(static_cast<std::size_t>(rates.size()));
  for (int d = 0; d < rates.size(); ++d)
    s.labels[static_cast<std::size_t>(d)] = static_cast<float>(rates(d));
  return s;
}

// One dataset per BS; a dedicated model is trained per BS.
inline std::vector<Dataset> build_domain_dataset(
    const PathTable& paths, const ScenarioConfig& cfg,
    const std::vector<Codebook>& codebooks, int k_dl, DomainTag tag,
    Rng& rng) {
  cfg.validate();
  if (paths.empty())
    throw std::invalid_argument("build_domain_dataset: empty scenario");
  if (codebooks.size() != cfg.bs_list.size())
    throw std::invalid_argument(
        "build_domain_dataset: one codebook per BS required");

  const int num_bs = static_cast<int>(cfg.bs_list.size());
  std::vector<Dataset> out(static_cast<std::size_t>(num_bs));
  for (int b = 0; b < num_bs; ++b) {
    auto& ds = out[static_cast<std::size_t>(b)];
    ds.manifest.num_subcarriers = cfg.num_subcarriers;
    ds.manifest.feature_subcarriers = k_dl;
    ds.manifest.num_beams = codebooks[static_cast<std::size_t>(b)].num_beams();
    ds.manifest.rng_seed = cfg.rng_seed;
    ds.manifest.domain = tag == DomainTag::kSource ? "source" : "target";
  }

  for (std::size_t u = 0; u < paths.size(); ++u) {
    if (paths[u].size() != static_cast<std::size_t>(num_bs))
      throw std::invalid_argument(
          "build_domain_dataset: path table BS count mismatch");
    for (int b = 0; b < num_bs; ++b) {
      const auto& geom = cfg.bs_list[static_cast<std::size_t>(b)].geometry;
      const ChannelRealization H = channel_matrix(
          paths[u][static_cast<std::size_t>(b)], geom, cfg.num_subcarriers,
          cfg.time_s);
      Rng sample_rng = rng.split(u * 8192 + static_cast<std::size_t>(b));
      BeamSample s =
          build_sample(H, codebooks[static_cast<std::size_t>(b)],
                       cfg.noise_power, k_dl, sample_rng);
      s.bs_id = b;
      s.user_id = static_cast<std::int32_t>(u);
      s.domain_label = tag == DomainTag::kSource ? 1 : 0;
      out[static_cast<std::size_t>(b)].samples.push_back(std::move(s));
    }
  }
  for (auto& ds : out) ds.manifest.sample_count = ds.samples.size();
  return out;
}

struct NormalizationConstants {
  double feature_scale = 1.0;
  double label_scale = 1.0;
};

inline NormalizationConstants compute_normalization(const Dataset& ds) {
  if (ds.samples.empty())
    throw std::invalid_argument("compute_normalization: empty dataset");
  double fmax = 0.0, lmax = 0.0;
  for (const auto& s : ds.samples) {
    for (float v : s.features) fmax = std::max(fmax, std::abs(double(v)));
    for (float v : s.labels) lmax = std::max(lmax, double(v));
  }
  if (fmax == 0.0)
    throw std::domain_error("compute_normalization: all-zero features");
  if (lmax == 0.0)
    throw std::domain_error("compute_normalization: all-zero labels");
  return {fmax, lmax};
}

inline void apply_normalization(Dataset& ds,
                                const NormalizationConstants& c) {
  if (ds.manifest.normalized)
    throw std::logic_error("apply_normalization: dataset already normalized");
  for (auto& s : ds.samples) {
    for (float& v : s.features) v = static_cast<float>(v / c.feature_scale);
    for (float& v : s.labels) v = static_cast<float>(v / c.label_scale);
  }
  ds.manifest.feature_scale = c.feature_scale;
  ds.manifest.label_scale = c.label_scale;
  ds.manifest.normalized = true;
}

// Normalize in place using this dataset's own max-abs constants.
inline NormalizationConstants normalize(Dataset& ds) {
  const NormalizationConstants c = compute_normalization(ds);
  apply_normalization(ds, c);
  return c;
}

inline nlohmann::json manifest_to_json(const DatasetManifest& m) {
  return nlohmann::json{{"scenario_digest", m.scenario_digest},
                        {"K", m.num_subcarriers},
                        {"K_DL", m.feature_subcarriers},
                        {"D", m.num_beams},
                        {"N", m.sample_count},
                        {"feature_scale", m.feature_scale},
                        {"label_scale", m.label_scale},
                        {"normalized", m.normalized},
                        {"rng_seed", m.rng_seed},
                        {"domain", m.domain}};
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.scenario_digest = j.at("scenario_digest").get<std::uint64_t>();
  m.num_subcarriers = j.at("K").get<int>();
  m.feature_subcarriers = j.at("K_DL").get<int>();
  m.num_beams = j.at("D").get<int>();
  m.sample_count = j.at("N").get<std::uint64_t>();
  m.feature_scale = j.at("feature_scale").get<double>();
  m.label_scale = j.at("label_scale").get<double>();
  m.normalized = j.at("normalized").get<bool>();
  m.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  m.domain = j.at("domain").get<std::string>();
  return m;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  const std::uint64_t n = ds.samples.size();
  const auto k_dl = static_cast<std::uint64_t>(ds.manifest.feature_subcarriers);
  const auto d = static_cast<std::uint64_t>(ds.manifest.num_beams);

  std::vector<float> features, labels;
  std::vector<std::int32_t> meta;
  features.reserve(n * 2 * k_dl);
  labels.reserve(n * d);
  meta.reserve(n * 3);
  for (const auto& s : ds.samples) {
    if (s.features.size() != 2 * k_dl || s.labels.size() != d)
      throw std::invalid_argument("save_dataset: sample shape mismatch");
    features.insert(features.end(), s.features.begin(), s.features.end());
    labels.insert(labels.end(), s.labels.begin(), s.labels.end());
    meta.push_back(s.bs_id);
    meta.push_back(s.user_id);
    meta.push_back(s.domain_label);
  }
  save_tensor_file(dir + "/features.bin", {n, 2, k_dl}, features);
  save_tensor_file(dir + "/labels.bin", {n, d}, labels);
  save_tensor_file(dir + "/meta.bin", {n, 3}, meta);

  nlohmann::json j = manifest_to_json(ds.manifest);
  j["digests"] = {{"features.bin", file_digest(dir + "/features.bin")},
                  {"labels.bin", file_digest(dir + "/labels.bin")},
                  {"meta.bin", file_digest(dir + "/meta.bin")}};
  std::ofstream os(dir + "/manifest.json");
  if (!os) throw IntegrityError("save_dataset: cannot write manifest");
  os << j.dump(2) << "\n";
}

inline Dataset load_dataset(const std::string& dir) {
  std::ifstream is(dir + "/manifest.json");
  if (!is) throw IntegrityError("load_dataset: missing manifest in " + dir);
  nlohmann::json j;
  is >> j;

  for (const auto& [file, digest] : j.at("digests").items())
    if (file_digest(dir + "/" + file) != digest.get<std::uint64_t>())
      throw IntegrityError("load_dataset: digest mismatch for " + file);

  Dataset ds;
  ds.manifest = manifest_from_json(j);

  std::vector<std::uint64_t> fdims, ldims, mdims;
  std::vector<float> features, labels;
  std::vector<std::int32_t> meta;
  load_tensor_file(dir + "/features.bin", fdims, features);
  load_tensor_file(dir + "/labels.bin", ldims, labels);
  load_tensor_file(dir + "/meta.bin", mdims, meta);

  const std::uint64_t n = ds.manifest.sample_count;
  const auto k_dl = static_cast<std::uint64_t>(ds.manifest.feature_subcarriers);
  const auto d = static_cast<std::uint64_t>(ds.manifest.num_beams);
  if (fdims != std::vector<std::uint64_t>{n, 2, k_dl} ||
      ldims != std::vector<std::uint64_t>{n, d} ||
      mdims != std::vector<std::uint64_t>{n, 3})
    throw IntegrityError("load_dataset: tensor shape mismatch vs manifest");

  ds.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.features.assign(features.begin() + static_cast<long>(i * 2 * k_dl),
                      features.begin() + static_cast<long>((i + 1) * 2 * k_dl));
    s.labels.assign(labels.begin() + static_cast<long>(i * d),
                    labels.begin() + static_cast<long>((i + 1) * d));
    s.bs_id = meta[i * 3];
    s.user_id = meta[i * 3 + 1];
    s.domain_label = meta[i * 3 + 2];
  }
  return ds;
}

}  // namespace beamdapt
