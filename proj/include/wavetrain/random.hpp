// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "wavetrain/core.hpp"

#include <Eigen/QR>

#include <cstdint>
#include <random>

namespace wavetrain {

struct RngSeed {
  std::uint64_t value = 0;
};

/// Seeded random stream. All randomness in a run flows from one of these, so
/// equal seeds give bit-identical runs on a given build.
class Rng {
 public:
  explicit Rng(RngSeed seed) : engine_(seed.value) {}

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform_(engine_); }

  /// Real and imaginary parts are independent standard normal draws.
  Complex complex_normal() {
    const double re = normal();
    const double im = normal();
    return {re, im};
  }

  ComplexVector complex_vector(Eigen::Index n) {
    require(n >= 1, "random vector length must be >= 1");
    ComplexVector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v[i] = complex_normal();
    return v;
  }

  ComplexMatrix complex_matrix(Eigen::Index rows, Eigen::Index cols) {
    require(rows >= 1 && cols >= 1, "random matrix must be non-empty");
    ComplexMatrix m(rows, cols);
    // column-major fill, matching Eigen storage
    for (Eigen::Index c = 0; c < cols; ++c)
      for (Eigen::Index r = 0; r < rows; ++r) m(r, c) = complex_normal();
    return m;
  }

  /// Haar-distributed unitary: QR of a complex Gaussian matrix with the phases
  /// of R's diagonal folded back into Q.
  ComplexMatrix unitary(Eigen::Index n) {
    const ComplexMatrix g = complex_matrix(n, n);
    Eigen::HouseholderQR<ComplexMatrix> qr(g);
    ComplexMatrix q = qr.householderQ() * ComplexMatrix::Identity(n, n);
    const ComplexMatrix& r = qr.matrixQR();
    for (Eigen::Index c = 0; c < n; ++c) {
      const Complex d = r(c, c);
      const double mag = std::abs(d);
      if (mag > 0.0) q.col(c) *= d / mag;
    }
    return q;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

inline ComplexVector random_complex_vector(Eigen::Index n, RngSeed seed) {
  Rng rng(seed);
  return rng.complex_vector(n);
}

}  // namespace wavetrain
