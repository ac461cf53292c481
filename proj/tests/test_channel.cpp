// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <beamdapt/channel.hpp>

#include <sstream>

using namespace beamdapt;

namespace {

ScenarioConfig small_scenario(std::uint64_t seed) {
  ScenarioConfig cfg;
  cfg.num_subcarriers = 32;
  cfg.carrier_freq_hz = 60e9;
  cfg.bandwidth_hz = 0.1e9;
  cfg.noise_power = 1e-4;
  cfg.paths_per_link = 3;
  cfg.rng_seed = seed;
  cfg.bs_list = {{{10.0, 5.0, 8.0}, {4, 2, 0.5}},
                 {{40.0, -5.0, 8.0}, {4, 2, 0.5}}};
  for (int u = 0; u < 4; ++u)
    cfg.user_track.push_back({{8.0 * u + 1.0, 0.0, 1.5}, 8.3333, 0.0});
  return cfg;
}

}  // namespace

TEST_CASE("doppler shift") {
  CHECK(doppler_shift(0.0, 60e9, 1.234) == 0.0);
  CHECK(doppler_shift(8.3333, 60e9, 0.0) ==
        doctest::Approx(1666.67).epsilon(1e-5));
  CHECK(std::abs(doppler_shift(8.3333, 60e9, M_PI / 2)) < 1e-9);
  CHECK_THROWS_AS(doppler_shift(-1.0, 60e9, 0.0), std::domain_error);
}

TEST_CASE("channel vector: single trivial path") {
  const UpaGeometry g{1, 1, 0.5};
  std::vector<PathComponent> paths{{{1.0, 0.0}, 0.0, M_PI / 2, 0.0, 0.0}};
  const auto h = channel_vector(paths, g, 0, 8, 0.0);
  CHECK(h(0).real() == doctest::Approx(1.0));
  CHECK(std::abs(h(0).imag()) < 1e-15);
}

TEST_CASE("channel vector: half-symbol delay at k=1 flips sign") {
  const UpaGeometry g{1, 1, 0.5};
  const int K = 8;
  std::vector<PathComponent> paths{{{1.0, 0.0}, 0.0, M_PI / 2, K / 2.0, 0.0}};
  const auto h = channel_vector(paths, g, 1, K, 0.0);
  CHECK(h(0).real() == doctest::Approx(-1.0));
  CHECK(std::abs(h(0).imag()) < 1e-12);
}

TEST_CASE("channel vector: opposite gains cancel") {
  const UpaGeometry g{2, 2, 0.5};
  PathComponent a{{0.7, -0.2}, 0.3, 1.1, 2.0, 50.0};
  PathComponent b = a;
  b.gain = -a.gain;
  const auto h = channel_vector({a, b}, g, 3, 16, 1e-3);
  CHECK(h.norm() < 1e-15);
}

TEST_CASE("channel vector: errors") {
  const UpaGeometry g{2, 1, 0.5};
  CHECK_THROWS_AS(channel_vector({}, g, 0, 8, 0.0), std::domain_error);
  std::vector<PathComponent> paths{{{1.0, 0.0}, 0.0, 0.0, 0.0, 0.0}};
  CHECK_THROWS_AS(channel_vector(paths, g, 8, 8, 0.0), std::out_of_range);
}

TEST_CASE("channel matrix rows match channel_vector bitwise") {
  const UpaGeometry g{3, 2, 0.5};
  std::vector<PathComponent> paths{{{0.5, 0.3}, 0.4, 1.0, 1.0, 120.0},
                                   {{-0.1, 0.2}, -0.8, 2.0, 2.5, -40.0}};
  const int K = 4;
  const auto H = channel_matrix(paths, g, K, 2e-3);
  for (int k = 0; k < K; ++k) {
    const auto h = channel_vector(paths, g, k, K, 2e-3);
    for (int m = 0; m < g.elements(); ++m) CHECK(H.h(k, m) == h(m));
  }
}

TEST_CASE("channel matrix: single path delay 1 phases over K=4") {
  const UpaGeometry g{1, 1, 0.5};
  std::vector<PathComponent> paths{{{1.0, 0.0}, 0.0, M_PI / 2, 1.0, 0.0}};
  const auto H = channel_matrix(paths, g, 4, 0.0);
  for (int k = 0; k < 4; ++k) {
    const double phase = -2.0 * M_PI * k / 4.0;
    CHECK(H.h(k, 0).real() == doctest::Approx(std::cos(phase)));
    CHECK(H.h(k, 0).imag() == doctest::Approx(std::sin(phase)));
  }
}

TEST_CASE("linearity over path-list concatenation (scale removed)") {
  const UpaGeometry g{2, 2, 0.5};
  std::vector<PathComponent> a{{{0.4, 0.1}, 0.2, 1.2, 1.0, 30.0}};
  std::vector<PathComponent> b{{{-0.3, 0.6}, -1.0, 0.7, 3.0, -80.0},
                               {{0.2, 0.2}, 0.5, 1.9, 0.5, 10.0}};
  std::vector<PathComponent> both = a;
  both.insert(both.end(), b.begin(), b.end());
  const int K = 8;
  const double t = 1e-3;
  const int M = g.elements();
  // Remove the sqrt(M/L) factor before comparing.
  auto unscaled = [&](const std::vector<PathComponent>& p, int k) {
    return (channel_vector(p, g, k, K, t) *
            std::sqrt(double(p.size()) / M)).eval();
  };
  for (int k = 0; k < K; ++k) {
    const VectorXcd sum = unscaled(a, k) + unscaled(b, k);
    const VectorXcd joint = unscaled(both, k);
    CHECK((sum - joint).norm() < 1e-14);
  }
}

TEST_CASE("doppler phase rotation over a time step") {
  const UpaGeometry g{2, 1, 0.5};
  std::vector<PathComponent> paths{{{0.9, -0.4}, 0.7, 0.9, 2.0, 250.0}};
  const double t = 1e-3, dt = 3e-4;
  const auto h0 = channel_vector(paths, g, 2, 8, t);
  const auto h1 = channel_vector(paths, g, 2, 8, t + dt);
  const double phase = 2.0 * M_PI * paths[0].doppler_hz * dt;
  const std::complex<double> rot(std::cos(phase), std::sin(phase));
  CHECK((h1 - rot * h0).norm() < 1e-12);
}

TEST_CASE("zero-delay channel is flat across subcarriers") {
  const UpaGeometry g{2, 2, 0.5};
  std::vector<PathComponent> paths{{{0.5, 0.5}, 0.3, 1.0, 0.0, 100.0},
                                   {{-0.2, 0.1}, 1.3, 2.0, 0.0, -30.0}};
  const auto H = channel_matrix(paths, g, 6, 1e-3);
  for (int k = 1; k < 6; ++k)
    CHECK((H.h.row(k) - H.h.row(0)).norm() < 1e-14);
}

TEST_CASE("synth_scenario: deterministic in seed") {
  const auto cfg = small_scenario(7);
  const auto t1 = synth_scenario(cfg, DomainTag::kSource);
  const auto t2 = synth_scenario(cfg, DomainTag::kSource);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t u = 0; u < t1.size(); ++u)
    for (std::size_t b = 0; b < t1[u].size(); ++b)
      for (std::size_t l = 0; l < t1[u][b].size(); ++l) {
        CHECK(t1[u][b][l].gain == t2[u][b][l].gain);
        CHECK(t1[u][b][l].delay_samples == t2[u][b][l].delay_samples);
      }
  // Different domain tag gives a different draw.
  const auto t3 = synth_scenario(cfg, DomainTag::kTarget);
  CHECK(t3[0][0][1].gain != t1[0][0][1].gain);
}

TEST_CASE("synth_scenario: symmetric user has equal LoS delays") {
  ScenarioConfig cfg = small_scenario(3);
  cfg.bs_list = {{{-20.0, 0.0, 8.0}, {2, 2, 0.5}},
                 {{20.0, 0.0, 8.0}, {2, 2, 0.5}}};
  cfg.user_track = {{{0.0, 0.0, 1.5}, 8.3333, 0.0}};
  const auto t = synth_scenario(cfg, DomainTag::kSource);
  CHECK(t[0][0][0].delay_samples ==
        doctest::Approx(t[0][1][0].delay_samples).epsilon(1e-12));
}

TEST_CASE("synth_scenario: LoS gain follows 1/d^2 power law") {
  ScenarioConfig cfg = small_scenario(3);
  cfg.bs_list = {{{0.0, 0.0, 0.0}, {2, 2, 0.5}}};
  cfg.user_track = {{{10.0, 0.0, 0.0}, 0.0, 0.0},
                    {{20.0, 0.0, 0.0}, 0.0, 0.0}};
  const auto t = synth_scenario(cfg, DomainTag::kSource);
  const double p1 = std::norm(t[0][0][0].gain);
  const double p2 = std::norm(t[1][0][0].gain);
  CHECK(10.0 * std::log10(p1 / p2) == doctest::Approx(6.02).epsilon(1e-3));
}

TEST_CASE("synth_scenario: invalid config rejected") {
  ScenarioConfig cfg = small_scenario(1);
  cfg.noise_power = 0.0;
  CHECK_THROWS_AS(synth_scenario(cfg, DomainTag::kSource),
                  std::invalid_argument);
}

TEST_CASE("path table: write-then-load round trip") {
  const auto cfg = small_scenario(11);
  const auto table = synth_scenario(cfg, DomainTag::kSource);
  std::stringstream ss;
  save_paths(table, ss);
  const auto loaded = load_paths(ss);
  REQUIRE(loaded.size() == table.size());
  for (std::size_t u = 0; u < table.size(); ++u)
    for (std::size_t b = 0; b < table[u].size(); ++b) {
      REQUIRE(loaded[u][b].size() == table[u][b].size());
      for (std::size_t l = 0; l < table[u][b].size(); ++l) {
        CHECK(loaded[u][b][l].gain == table[u][b][l].gain);
        CHECK(loaded[u][b][l].azimuth == table[u][b][l].azimuth);
        CHECK(loaded[u][b][l].elevation == table[u][b][l].elevation);
        CHECK(loaded[u][b][l].delay_samples == table[u][b][l].delay_samples);
        CHECK(loaded[u][b][l].doppler_hz == table[u][b][l].doppler_hz);
      }
    }
  // And the second write is content-identical.
  std::stringstream ss2;
  save_paths(loaded, ss2);
  std::stringstream ss3;
  save_paths(table, ss3);
  CHECK(ss2.str() == ss3.str());
}

TEST_CASE("path table: single row echo") {
  std::stringstream ss;
  ss << kPathTableHeader << "\n";
  ss << "0,0,1,0,0.1,1.2,3.5,100\n";
  const auto t = load_paths(ss);
  REQUIRE(t.size() == 1);
  REQUIRE(t[0][0].size() == 1);
  CHECK(t[0][0][0].gain == std::complex<double>(1.0, 0.0));
  CHECK(t[0][0][0].azimuth == 0.1);
  CHECK(t[0][0][0].elevation == 1.2);
  CHECK(t[0][0][0].delay_samples == 3.5);
  CHECK(t[0][0][0].doppler_hz == 100.0);
}

TEST_CASE("path table: empty user set") {
  std::stringstream ss;
  ss << kPathTableHeader << "\n";
  CHECK(load_paths(ss).empty());
}

TEST_CASE("path table: malformed input names line and field") {
  {
    std::stringstream ss;
    ss << "wrong,header\n";
    CHECK_THROWS_WITH_AS(load_paths(ss),
                         doctest::Contains("line 1"), std::runtime_error);
  }
  {
    std::stringstream ss;
    ss << kPathTableHeader << "\n0,0,oops,0,0,0,0,0\n";
    CHECK_THROWS_WITH_AS(load_paths(ss), doctest::Contains("gain_re"),
                         std::runtime_error);
  }
  {
    std::stringstream ss;
    ss << kPathTableHeader << "\n0,0,1,0\n";
    CHECK_THROWS_WITH_AS(load_paths(ss), doctest::Contains("line 2"),
                         std::runtime_error);
  }
}
