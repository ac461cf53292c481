// SPDX-License-Identifier: Apache-2.0
//
// Uniform planar array geometry, array response vectors and the
// Kronecker DFT beamforming codebook.

#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <complex>
#include <stdexcept>

namespace beamdapt {

using Eigen::MatrixXcd;
using Eigen::VectorXcd;

struct UpaGeometry {
  int m_h = 1;                       // horizontal element count
  int m_v = 1;                       // vertical element count
  double spacing_wavelengths = 0.5;  // element spacing in carrier wavelengths

  int elements() const { return m_h * m_v; }

  void validate() const {
    if (m_h < 1 || m_v < 1)
      throw std::invalid_argument("UpaGeometry: element counts must be >= 1");
    if (!(spacing_wavelengths > 0.0))
      throw std::invalid_argument("UpaGeometry: spacing must be positive");
  }
};

struct Codebook {
  // M x D, column d is beamforming vector f_d, unit norm.
  MatrixXcd beams;

  int num_beams() const { return static_cast<int>(beams.cols()); }
  int num_antennas() const { return static_cast<int>(beams.rows()); }
};

// Array response of the UPA in the y-z plane. Element (p, q) with
// p in [0, m_h) and q in [0, m_v) has phase
//   2*pi*spacing*(p*sin(elevation)*sin(azimuth) + q*cos(elevation)),
// flattened vertical-major (index p*m_v + q) to match F = F_h kron F_v.
// Scaled by 1/sqrt(M) so the output has unit norm.
inline VectorXcd upa_array_response(const UpaGeometry& geom, double azimuth,
                                    double elevation) {
  geom.validate();
  if (!std::isfinite(azimuth) || !std::isfinite(elevation))
    throw std::domain_error("upa_array_response: non-finite angle");
  const int M = geom.elements();
  const double kd = 2.0 * M_PI * geom.spacing_wavelengths;
  const double horiz = std::sin(elevation) * std::sin(azimuth);
  const double vert = std::cos(elevation);
  VectorXcd a(M);
  const double scale = 1.0 / std::sqrt(static_cast<double>(M));
  for (int p = 0; p < geom.m_h; ++p)
    for (int q = 0; q < geom.m_v; ++q) {
      const double phase = kd * (p * horiz + q * vert);
      a(p * geom.m_v + q) =
          scale * std::complex<double>(std::cos(phase), std::sin(phase));
    }
  return a;
}

// m-point unitary DFT matrix, entry (p, d) = exp(-j*2*pi*p*d/m)/sqrt(m).
inline MatrixXcd unitary_dft(int m) {
  MatrixXcd F(m, m);
  const double scale = 1.0 / std::sqrt(static_cast<double>(m));
  for (int p = 0; p < m; ++p)
    for (int d = 0; d < m; ++d) {
      const double phase = -2.0 * M_PI * p * d / m;
      F(p, d) = scale * std::complex<double>(std::cos(phase), std::sin(phase));
    }
  return F;
}

// Full DFT codebook F = F_h kron F_v, D = m_h * m_v unit-norm columns.
inline Codebook dft_codebook(const UpaGeometry& geom) {
  geom.validate();
  const MatrixXcd Fh = unitary_dft(geom.m_h);
  const MatrixXcd Fv = unitary_dft(geom.m_v);
  Codebook cb;
  cb.beams.resize(geom.elements(), geom.elements());
  for (int dh = 0; dh < geom.m_h; ++dh)
    for (int dv = 0; dv < geom.m_v; ++dv)
      for (int p = 0; p < geom.m_h; ++p)
        cb.beams.block(p * geom.m_v, dh * geom.m_v + dv, geom.m_v, 1) =
            Fh(p, dh) * Fv.col(dv);
  return cb;
}

// Column d of the codebook; d = 0 is the fixed uplink sounding beam f_0.
inline VectorXcd beam_column(const Codebook& cb, int d) {
  if (d < 0 || d >= cb.num_beams())
    throw std::out_of_range("beam_column: index out of range");
  return cb.beams.col(d);
}

}  // namespace beamdapt
