// SPDX-License-Identifier: Apache-2.0
//
// Value types shared by the Helmholtz medium simulator and the photonic chip
// simulator: complex vectors/matrices, uniform 2D grids, errors, seeding.
//
// Conventions used throughout the library:
//   * lengths are in units of the nominal free-space wavelength (lambda = 1),
//     so the reference wavenumber is k0 = 2*pi;
//   * fields carry spatial phase exp(+j k x) for a wave travelling towards +x,
//     so a positive imaginary wavenumber attenuates outgoing waves.

#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>

namespace wavetrain {

using Complex = std::complex<double>;
using ComplexVector = Eigen::VectorXcd;
using ComplexMatrix = Eigen::MatrixXcd;
using RealVector = Eigen::VectorXd;

inline constexpr double kPi = std::numbers::pi;
/// Reference wavenumber for lambda = 1.
inline constexpr double kK0 = 2.0 * kPi;
inline constexpr Complex kJ{0.0, 1.0};

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad sizes, out-of-range indices, invalid parameters.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

/// A computation left the domain where it is meaningful (non-convergence,
/// runaway wavenumbers, ...). Maps to the CLI "numerical failure" exit code.
class NumericalError : public Error {
 public:
  using Error::Error;
};

inline void require(bool condition, const std::string& message) {
  if (!condition) throw InvalidArgument(message);
}

inline void require_same_size(Eigen::Index a, Eigen::Index b, const char* what) {
  if (a != b) {
    throw InvalidArgument(std::string(what) + ": size mismatch (" + std::to_string(a) + " vs " +
                          std::to_string(b) + ")");
  }
}

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const auto v = m.derived().data()[i];
    if constexpr (std::is_same_v<std::decay_t<decltype(v)>, Complex>) {
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    } else {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Grid geometry
// ---------------------------------------------------------------------------

struct Position {
  double x = 0.0;
  double y = 0.0;
};

/// Uniform 2D grid. Cell (i, j) sits at r = (i*h, j*h); cells are stored with
/// x fastest: linear index = j*nx + i. The outermost ring of cells is the
/// Dirichlet boundary.
struct GridGeometry {
  int nx = 0;
  int ny = 0;
  double h = 0.0;

  GridGeometry() = default;
  GridGeometry(int nx_, int ny_, double h_) : nx(nx_), ny(ny_), h(h_) { validate(); }

  void validate() const {
    require(nx >= 3 && ny >= 3, "grid needs at least 3x3 cells");
    require(h > 0.0 && std::isfinite(h), "grid spacing must be positive");
  }

  [[nodiscard]] Eigen::Index size() const { return Eigen::Index(nx) * ny; }
  [[nodiscard]] Eigen::Index index(int i, int j) const { return Eigen::Index(j) * nx + i; }
  [[nodiscard]] int i_of(Eigen::Index idx) const { return int(idx % nx); }
  [[nodiscard]] int j_of(Eigen::Index idx) const { return int(idx / nx); }
  [[nodiscard]] Position position(int i, int j) const { return {i * h, j * h}; }
  [[nodiscard]] double width() const { return (nx - 1) * h; }
  [[nodiscard]] double height() const { return (ny - 1) * h; }
  [[nodiscard]] double cell_area() const { return h * h; }

  [[nodiscard]] bool on_boundary(int i, int j) const {
    return i == 0 || j == 0 || i == nx - 1 || j == ny - 1;
  }
  /// Distance in cells to the outer boundary ring (0 on the ring itself).
  [[nodiscard]] int depth(int i, int j) const {
    return std::min(std::min(i, j), std::min(nx - 1 - i, ny - 1 - j));
  }
  /// Cell whose center is closest to p; throws when p lies outside the grid.
  [[nodiscard]] std::pair<int, int> nearest_cell(Position p) const {
    const int i = int(std::lround(p.x / h));
    const int j = int(std::lround(p.y / h));
    require(i >= 0 && j >= 0 && i < nx && j < ny, "position outside grid");
    return {i, j};
  }

  friend bool operator==(const GridGeometry&, const GridGeometry&) = default;
};

/// Complex scalar field sampled on a grid.
class FieldGrid {
 public:
  FieldGrid() = default;
  explicit FieldGrid(GridGeometry g) : geometry_(g), values_(ComplexVector::Zero(g.size())) {
    g.validate();
  }
  FieldGrid(GridGeometry g, ComplexVector values) : geometry_(g), values_(std::move(values)) {
    g.validate();
    require_same_size(values_.size(), g.size(), "FieldGrid");
  }

  [[nodiscard]] const GridGeometry& geometry() const { return geometry_; }
  [[nodiscard]] const ComplexVector& values() const { return values_; }
  ComplexVector& values() { return values_; }

  [[nodiscard]] Complex operator()(int i, int j) const { return values_[geometry_.index(i, j)]; }
  Complex& operator()(int i, int j) { return values_[geometry_.index(i, j)]; }

 private:
  GridGeometry geometry_;
  ComplexVector values_;
};

inline void require_same_geometry(const GridGeometry& a, const GridGeometry& b, const char* what) {
  if (!(a == b)) throw InvalidArgument(std::string(what) + ": grid geometry mismatch");
}

}  // namespace wavetrain
