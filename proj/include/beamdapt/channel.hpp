// SPDX-License-Identifier: Apache-2.0
//
// Geometric multipath OFDM channel: per-(user, BS) path lists, channel
// vectors/matrices, a synthetic street-geometry scenario generator and a
// line-oriented path-table file format for externally produced paths.

#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "beamdapt/array_codebook.hpp"
#include "beamdapt/rng.hpp"

namespace beamdapt {

inline constexpr double kSpeedOfLight = 3.0e8;  // m/s

struct PathComponent {
  std::complex<double> gain;  // alpha_l, linear
  double azimuth = 0.0;       // phi_l, radians
  double elevation = 0.0;     // theta_l, radians
  double delay_samples = 0.0; // tau_l, in samples of the K-point symbol
  double doppler_hz = 0.0;    // f_{d,l}
};

struct BsSite {
  std::array<double, 3> position{};  // meters
  UpaGeometry geometry;
};

struct UserState {
  std::array<double, 3> position{};  // meters
  double speed_mps = 0.0;
  double heading_rad = 0.0;
};

struct ScenarioConfig {
  int num_subcarriers = 512;       // K
  double carrier_freq_hz = 60e9;   // f_c
  double bandwidth_hz = 0.5e9;
  double noise_power = 1e-3;       // sigma^2, linear
  std::vector<BsSite> bs_list;
  std::vector<UserState> user_track;
  int paths_per_link = 4;          // L
  std::uint64_t rng_seed = 0;
  double time_s = 0.0;             // sampling instant t

  void validate() const {
    if (num_subcarriers < 1)
      throw std::invalid_argument("ScenarioConfig: K must be >= 1");
    if (!(noise_power > 0.0))
      throw std::invalid_argument("ScenarioConfig: noise power must be > 0");
    if (paths_per_link < 1)
      throw std::invalid_argument("ScenarioConfig: paths_per_link must be >= 1");
    if (bs_list.empty())
      throw std::invalid_argument("ScenarioConfig: no base stations");
    for (const auto& bs : bs_list) bs.geometry.validate();
  }
};

struct ChannelRealization {
  // K x M, row k is h_{k,n}^T for one BS.
  MatrixXcd h;

  int num_subcarriers() const { return static_cast<int>(h.rows()); }
  int num_antennas() const { return static_cast<int>(h.cols()); }
};

// Doppler shift v * f_c * cos(theta) / c.
inline double doppler_shift(double speed_mps, double carrier_freq_hz,
                            double path_elevation) {
  if (speed_mps < 0.0)
    throw std::domain_error("doppler_shift: negative speed");
  if (!(carrier_freq_hz > 0.0))
    throw std::domain_error("doppler_shift: carrier frequency must be > 0");
  return speed_mps * carrier_freq_hz * std::cos(path_elevation) /
         kSpeedOfLight;
}

// h_k = sqrt(M/L) * sum_l alpha_l * a(phi_l, theta_l)
//       * exp(-j*2*pi*tau_l*k/K) * exp(j*2*pi*f_{d,l}*t), 0-based k.
inline VectorXcd channel_vector(const std::vector<PathComponent>& paths,
                                const UpaGeometry& geom, int k, int K,
                                double t) {
  if (paths.empty())
    throw std::domain_error("channel_vector: empty path list");
  if (k < 0 || k >= K)
    throw std::out_of_range("channel_vector: subcarrier index out of range");
  const int M = geom.elements();
  VectorXcd h = VectorXcd::Zero(M);
  for (const auto& p : paths) {
    const double phase = -2.0 * M_PI * p.delay_samples * k / K +
                         2.0 * M_PI * p.doppler_hz * t;
    const std::complex<double> rot(std::cos(phase), std::sin(phase));
    h += p.gain * rot * upa_array_response(geom, p.azimuth, p.elevation);
  }
  const double scale =
      std::sqrt(static_cast<double>(M) / static_cast<double>(paths.size()));
  return scale * h;
}

inline ChannelRealization channel_matrix(const std::vector<PathComponent>& paths,
                                         const UpaGeometry& geom, int K,
                                         double t) {
  ChannelRealization cr;
  cr.h.resize(K, geom.elements());
  for (int k = 0; k < K; ++k)
    cr.h.row(k) = channel_vector(paths, geom, k, K, t).transpose();
  return cr;
}

// Path lists for one scenario, indexed [user][bs].
using PathTable = std::vector<std::vector<std::vector<PathComponent>>>;

enum class DomainTag { kSource, kTarget };

// Synthetic stand-in for a ray-traced street scenario. Per (user, BS):
// one LoS path from geometry (1/d^2 power law, delay = distance/c in
// samples) plus L-1 Rayleigh NLoS paths 10 dB down on average, delays
// uniform in [LoS, LoS + spread]. Deterministic in rng_seed.
inline PathTable synth_scenario(const ScenarioConfig& cfg, DomainTag tag) {
  cfg.validate();
  if (cfg.user_track.empty())
    throw std::invalid_argument("synth_scenario: empty user track");
  const double sample_rate = cfg.bandwidth_hz;
  const int K = cfg.num_subcarriers;
  const std::uint64_t domain_key = tag == DomainTag::kSource ? 1 : 2;
  Rng root(cfg.rng_seed, domain_key);

  PathTable table(cfg.user_track.size());
  for (std::size_t u = 0; u < cfg.user_track.size(); ++u) {
    const auto& user = cfg.user_track[u];
    table[u].resize(cfg.bs_list.size());
    for (std::size_t b = 0; b < cfg.bs_list.size(); ++b) {
      const auto& bs = cfg.bs_list[b];
      Rng rng = root.split(u * 8192 + b);

      const double dx = user.position[0] - bs.position[0];
      const double dy = user.position[1] - bs.position[1];
      const double dz = user.position[2] - bs.position[2];
      const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
      if (!(dist > 0.0))
        throw std::invalid_argument("synth_scenario: user collocated with BS");

      // Direction from BS to user in the array frame (array in y-z plane).
      const double elevation = std::acos(dz / dist);
      const double azimuth = std::atan2(dy, dx);
      const double los_delay = dist / kSpeedOfLight * sample_rate;
      if (los_delay >= K)
        throw std::invalid_argument(
            "synth_scenario: LoS delay exceeds symbol length; shrink the "
            "geometry or bandwidth");

      std::vector<PathComponent> paths;
      paths.reserve(static_cast<std::size_t>(cfg.paths_per_link));

      PathComponent los;
      los.gain = {1.0 / dist, 0.0};  // amplitude ~ 1/d, power ~ 1/d^2
      los.azimuth = azimuth;
      los.elevation = elevation;
      los.delay_samples = los_delay;
      los.doppler_hz =
          doppler_shift(user.speed_mps, cfg.carrier_freq_hz, elevation);
      paths.push_back(los);

      const double spread = std::min(0.1 * K, (K - 1) - los_delay);
      const double nlos_power = std::norm(los.gain) / 10.0;  // 10 dB deficit
      for (int l = 1; l < cfg.paths_per_link; ++l) {
        PathComponent p;
        p.gain = rng.complex_normal(nlos_power);  // Rayleigh amplitude
        p.azimuth = rng.uniform(-M_PI, M_PI);
        p.elevation = rng.uniform(0.0, M_PI);
        p.delay_samples = rng.uniform(los_delay, los_delay + spread);
        p.doppler_hz =
            doppler_shift(user.speed_mps, cfg.carrier_freq_hz, p.elevation);
        paths.push_back(p);
      }
      table[u][b] = std::move(paths);
    }
  }
  return table;
}

inline constexpr const char* kPathTableHeader =
    "user_id,bs_id,gain_re,gain_im,azimuth_rad,elevation_rad,delay_samples,"
    "doppler_hz";

inline void save_paths(const PathTable& table, std::ostream& os) {
  os << kPathTableHeader << "\n";
  os.precision(17);
  for (std::size_t u = 0; u < table.size(); ++u)
    for (std::size_t b = 0; b < table[u].size(); ++b)
      for (const auto& p : table[u][b])
        os << u << ',' << b << ',' << p.gain.real() << ',' << p.gain.imag()
           << ',' << p.azimuth << ',' << p.elevation << ',' << p.delay_samples
           << ',' << p.doppler_hz << "\n";
}

inline void save_paths(const PathTable& table, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("save_paths: cannot open " + path);
  save_paths(table, os);
}

inline PathTable load_paths(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kPathTableHeader)
    throw std::runtime_error("load_paths: line 1: bad or missing header");
  PathTable table;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() != 8)
      throw std::runtime_error("load_paths: line " + std::to_string(lineno) +
                               ": expected 8 fields, got " +
                               std::to_string(fields.size()));
    auto parse = [&](int idx, const char* name) {
      try {
        std::size_t pos = 0;
        double v = std::stod(fields[static_cast<std::size_t>(idx)], &pos);
        if (pos != fields[static_cast<std::size_t>(idx)].size())
          throw std::invalid_argument("trailing characters");
        return v;
      } catch (const std::exception&) {
        throw std::runtime_error("load_paths: line " + std::to_string(lineno) +
                                 ": bad field '" + std::string(name) + "'");
      }
    };
    const auto user = static_cast<std::size_t>(parse(0, "user_id"));
    const auto bs = static_cast<std::size_t>(parse(1, "bs_id"));
    PathComponent p;
    p.gain = {parse(2, "gain_re"), parse(3, "gain_im")};
    p.azimuth = parse(4, "azimuth_rad");
    p.elevation = parse(5, "elevation_rad");
    p.delay_samples = parse(6, "delay_samples");
    p.doppler_hz = parse(7, "doppler_hz");
    if (table.size() <= user) table.resize(user + 1);
    if (table[user].size() <= bs) table[user].resize(bs + 1);
    table[user][bs].push_back(p);
  }
  return table;
}

inline PathTable load_paths(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("load_paths: cannot open " + path);
  return load_paths(is);
}

}  // namespace beamdapt
