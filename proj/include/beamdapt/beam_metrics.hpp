// SPDX-License-Identifier: Apache-2.0
//
// Pilot reception, per-beam achievable rates, optimal-beam selection and
// effective-rate accounting with training-time overhead.

#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "beamdapt/array_codebook.hpp"
#include "beamdapt/channel.hpp"
#include "beamdapt/rng.hpp"

namespace beamdapt {

using Eigen::VectorXd;

struct OverheadModel {
  double t_pilot = 10e-6;          // T_p, seconds
  double t_train = 0.0;            // T_tr, seconds
  double t_beam_coherence = 10e-3; // T_B, seconds

  void validate() const {
    if (!(t_beam_coherence > 0.0))
      throw std::invalid_argument("OverheadModel: T_B must be > 0");
    if (t_train < 0.0 || t_train > t_beam_coherence)
      throw std::invalid_argument("OverheadModel: need 0 <= T_tr <= T_B");
    if (t_pilot < 0.0 || 2.0 * t_pilot > t_beam_coherence)
      throw std::invalid_argument("OverheadModel: need 0 <= 2*T_p <= T_B");
  }

  double exhaustive_factor() const { return 1.0 - t_train / t_beam_coherence; }
  double learned_factor() const {
    return 1.0 - 2.0 * t_pilot / t_beam_coherence;
  }
};

// r_k = f^T h_k * pilot_k + f^T n_k with n_k ~ CN(0, sigma^2 I).
inline VectorXcd receive_symbol(const ChannelRealization& H,
                                const VectorXcd& f, const VectorXcd& pilot,
                                double noise_power, Rng& rng) {
  const int K = H.num_subcarriers();
  const int M = H.num_antennas();
  if (f.size() != M)
    throw std::invalid_argument("receive_symbol: beam length != antennas");
  if (pilot.size() != K)
    throw std::invalid_argument("receive_symbol: pilot length != subcarriers");
  if (noise_power < 0.0)
    throw std::invalid_argument("receive_symbol: negative noise power");
  const VectorXcd hf = H.h * f;  // h_k^T f, no conjugation
  VectorXcd r(K);
  for (int k = 0; k < K; ++k) {
    std::complex<double> noise_proj = 0.0;
    if (noise_power > 0.0)
      for (int m = 0; m < M; ++m)
        noise_proj += f(m) * rng.complex_normal(noise_power);
    r(k) = hf(k) * pilot(k) + noise_proj;
  }
  return r;
}

// Constant all-ones pilot sequence.
inline VectorXcd unit_pilot(int K) { return VectorXcd::Ones(K); }

// rates[d] = (1/K) * sum_k log2(1 + |h_k^T f_d|^2 / sigma^2).
inline VectorXd rate_per_beam(const ChannelRealization& H, const Codebook& cb,
                              double noise_power) {
  if (!(noise_power > 0.0))
    throw std::domain_error("rate_per_beam: noise power must be > 0");
  if (H.num_antennas() != cb.num_antennas())
    throw std::invalid_argument("rate_per_beam: antenna count mismatch");
  const int K = H.num_subcarriers();
  const int D = cb.num_beams();
  // h_k^T f_d for all (k, d) in one product.
  const MatrixXcd proj = H.h * cb.beams;
  VectorXd rates = VectorXd::Zero(D);
  for (int d = 0; d < D; ++d) {
    double acc = 0.0;
    for (int k = 0; k < K; ++k)
      acc += std::log2(1.0 + std::norm(proj(k, d)) / noise_power);
    rates(d) = acc / K;
  }
  return rates;
}

// argmax_d rates[d]; ties broken by lowest index.
inline std::pair<int, double> optimal_beam(const ChannelRealization& H,
                                           const Codebook& cb,
                                           double noise_power) {
  const VectorXd rates = rate_per_beam(H, cb, noise_power);
  int best = 0;
  for (int d = 1; d < rates.size(); ++d)
    if (rates(d) > rates(best)) best = d;
  return {best, rates(best)};
}

enum class OverheadMode { kExhaustive, kLearned };

// Effective rate with coherent interference-free joint transmission:
// factor * (1/K) * sum_k log2(1 + |sum_n h_{k,n}^T f_n|^2 / sigma^2).
inline double effective_rate(const std::vector<ChannelRealization>& Hs,
                             const std::vector<int>& beams, const Codebook& cb,
                             double noise_power, const OverheadModel& oh,
                             OverheadMode mode) {
  oh.validate();
  if (Hs.size() != beams.size())
    throw std::invalid_argument("effective_rate: list size mismatch");
  if (Hs.empty())
    throw std::invalid_argument("effective_rate: no base stations");
  if (!(noise_power > 0.0))
    throw std::domain_error("effective_rate: noise power must be > 0");
  const int K = Hs.front().num_subcarriers();
  VectorXcd combined = VectorXcd::Zero(K);
  for (std::size_t n = 0; n < Hs.size(); ++n) {
    if (Hs[n].num_subcarriers() != K)
      throw std::invalid_argument("effective_rate: subcarrier count mismatch");
    combined += Hs[n].h * beam_column(cb, beams[n]);
  }
  double payload = 0.0;
  for (int k = 0; k < K; ++k)
    payload += std::log2(1.0 + std::norm(combined(k)) / noise_power);
  payload /= K;
  const double factor = mode == OverheadMode::kExhaustive
                            ? oh.exhaustive_factor()
                            : oh.learned_factor();
  return factor * payload;
}

}  // namespace beamdapt
