// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "wavetrain/core.hpp"

#include <string>
#include <vector>

namespace wavetrain {

enum class TransducerRole { emitter, receiver };

/// Point-like transducers with a normalized Gaussian footprint
///   beta_i(r) = exp(-|r - r_i|^2 / (2 sigma^2)) / (2 pi sigma^2).
struct TransducerArray {
  std::vector<Position> centers;
  double sigma = 0.5;
  TransducerRole role = TransducerRole::emitter;

  [[nodiscard]] Eigen::Index count() const { return Eigen::Index(centers.size()); }

  void validate() const {
    require(sigma > 0.0 && std::isfinite(sigma), "transducer sigma must be positive");
    for (const auto& c : centers)
      require(std::isfinite(c.x) && std::isfinite(c.y), "transducer center must be finite");
  }

  /// Same geometry with emitter and receiver roles exchanged.
  [[nodiscard]] TransducerArray with_role(TransducerRole r) const {
    TransducerArray out = *this;
    out.role = r;
    return out;
  }
};

/// Value of the normalized Gaussian at squared distance d2.
inline double gaussian_value(double d2, double sigma) {
  return std::exp(-d2 / (2.0 * sigma * sigma)) / (2.0 * kPi * sigma * sigma);
}

/// Discretized Gaussian of transducer `index`, sampled at cell centers.
/// The Riemann sum of the result times h^2 approximates 1.
inline RealVector gaussian_profile(const TransducerArray& array, Eigen::Index index,
                                   const GridGeometry& grid) {
  array.validate();
  grid.validate();
  if (index < 0 || index >= array.count())
    throw InvalidArgument("transducer index " + std::to_string(index) + " out of range");
  const Position c = array.centers[std::size_t(index)];
  const double eps = 1e-12 * grid.h;
  if (c.x < -eps || c.y < -eps || c.x > grid.width() + eps || c.y > grid.height() + eps)
    throw InvalidArgument("transducer center outside grid");

  RealVector out(grid.size());
  for (int j = 0; j < grid.ny; ++j) {
    for (int i = 0; i < grid.nx; ++i) {
      const Position p = grid.position(i, j);
      const double dx = p.x - c.x;
      const double dy = p.y - c.y;
      out[grid.index(i, j)] = gaussian_value(dx * dx + dy * dy, array.sigma);
    }
  }
  return out;
}

/// All profiles of an array on one grid, one column per transducer.
class TransducerProfiles {
 public:
  TransducerProfiles() = default;
  TransducerProfiles(const TransducerArray& array, const GridGeometry& grid)
      : array_(array), grid_(grid), profiles_(grid.size(), array.count()) {
    for (Eigen::Index t = 0; t < array.count(); ++t) profiles_.col(t) = gaussian_profile(array, t, grid);
  }

  [[nodiscard]] const TransducerArray& array() const { return array_; }
  [[nodiscard]] const GridGeometry& geometry() const { return grid_; }
  [[nodiscard]] const Eigen::MatrixXd& matrix() const { return profiles_; }
  [[nodiscard]] Eigen::Index count() const { return profiles_.cols(); }

  /// Sum_i w_i * profile_i, the source radiated by the array.
  [[nodiscard]] ComplexVector emit(const ComplexVector& weights) const {
    require_same_size(weights.size(), count(), "transducer weights");
    return profiles_.cast<Complex>() * weights;
  }

  /// o_i = sum_cells field * profile_i * h^2.
  [[nodiscard]] ComplexVector receive(const ComplexVector& field) const {
    require_same_size(field.size(), grid_.size(), "received field");
    return (profiles_.transpose().cast<Complex>() * field) * grid_.cell_area();
  }

 private:
  TransducerArray array_;
  GridGeometry grid_;
  Eigen::MatrixXd profiles_;
};

}  // namespace wavetrain
