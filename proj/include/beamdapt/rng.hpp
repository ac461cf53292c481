// SPDX-License-Identifier: Apache-2.0
//
// Counter-based splittable RNG. Every stream is derived by mixing a root
// seed with a stream key, so per-user / per-sample generation can run in
// parallel and still match sequential output exactly.

#pragma once

#include <cmath>
#include <complex>
#include <cstdint>

namespace beamdapt {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0)
      : state_(splitmix64(seed ^ splitmix64(stream + 0x632be59bd9b4e019ULL))) {}

  // Independent child stream; deterministic in (this stream, key).
  Rng split(std::uint64_t key) const { return Rng(state_, key); }

  std::uint64_t next_u64() {
    state_ = splitmix64(state_);
    return state_;
  }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal, Box-Muller.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Circularly-symmetric complex Gaussian with total variance `power`.
  std::complex<double> complex_normal(double power) {
    const double s = std::sqrt(power / 2.0);
    return {s * normal(), s * normal()};
  }

 private:
  std::uint64_t state_;
};

}  // namespace beamdapt
