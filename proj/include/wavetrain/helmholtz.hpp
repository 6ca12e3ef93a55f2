// SPDX-License-Identifier: Apache-2.0
//
// Discretized inhomogeneous Helmholtz equation
//
//   lap(phi) + k(r)^2 phi = s(r)   inside,   phi = 0 on the outer ring,
//
// on a uniform grid with the 5-point Laplacian. k = k_real + j k_imag, where
// k_imag is a quadratic ramp in a band next to the boundary that absorbs
// outgoing waves.

#pragma once

#include "wavetrain/bicgstab.hpp"
#include "wavetrain/core.hpp"
#include "wavetrain/transducers.hpp"

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include <iomanip>
#include <ostream>
#include <vector>

namespace wavetrain {

/// Complex wavenumber map plus the mask of cells that training may modify.
class MediumMap {
 public:
  MediumMap() = default;

  /// Uniform lossless medium, everything off the boundary ring trainable.
  static MediumMap uniform(const GridGeometry& grid, double k) {
    grid.validate();
    require(k > 0.0 && std::isfinite(k), "wavenumber must be positive");
    MediumMap m;
    m.grid_ = grid;
    m.k_real_ = RealVector::Constant(grid.size(), k);
    m.k_imag_ = RealVector::Zero(grid.size());
    m.mask_.assign(std::size_t(grid.size()), 1);
    for (int j = 0; j < grid.ny; ++j)
      for (int i = 0; i < grid.nx; ++i)
        if (grid.on_boundary(i, j)) m.mask_[std::size_t(grid.index(i, j))] = 0;
    return m;
  }

  [[nodiscard]] const GridGeometry& geometry() const { return grid_; }
  [[nodiscard]] const RealVector& k_real() const { return k_real_; }
  [[nodiscard]] const RealVector& k_imag() const { return k_imag_; }
  [[nodiscard]] int band_cells() const { return band_cells_; }
  [[nodiscard]] bool trainable(Eigen::Index idx) const { return mask_[std::size_t(idx)] != 0; }
  [[nodiscard]] Eigen::Index trainable_count() const {
    Eigen::Index n = 0;
    for (char c : mask_) n += c != 0;
    return n;
  }
  [[nodiscard]] std::vector<Eigen::Index> trainable_cells() const {
    std::vector<Eigen::Index> out;
    for (Eigen::Index i = 0; i < grid_.size(); ++i)
      if (trainable(i)) out.push_back(i);
    return out;
  }
  [[nodiscard]] Complex k(Eigen::Index idx) const { return {k_real_[idx], k_imag_[idx]}; }

  void set_k_real(Eigen::Index idx, double value) { k_real_[idx] = value; }
  RealVector& k_real_mut() { return k_real_; }

  /// Restrict training to cells with x0 <= x <= x1, y0 <= y <= y1.
  void restrict_mask_to_rectangle(double x0, double y0, double x1, double y1) {
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const Position p = grid_.position(i, j);
        const double eps = 1e-9 * grid_.h;
        if (p.x < x0 - eps || p.x > x1 + eps || p.y < y0 - eps || p.y > y1 + eps)
          mask_[std::size_t(grid_.index(i, j))] = 0;
      }
  }

  /// The cell nearest each transducer center is never trainable.
  void clear_mask_at(const TransducerArray& array) {
    for (const auto& c : array.centers) {
      const auto [i, j] = grid_.nearest_cell(c);
      mask_[std::size_t(grid_.index(i, j))] = 0;
    }
  }

  void set_absorbing(int band_cells, RealVector k_imag) {
    band_cells_ = band_cells;
    k_imag_ = std::move(k_imag);
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i)
        if (grid_.depth(i, j) <= band_cells_) mask_[std::size_t(grid_.index(i, j))] = 0;
  }

  /// Checks the documented invariants; throws InvalidArgument on violation.
  void validate() const {
    grid_.validate();
    require_same_size(k_real_.size(), grid_.size(), "k_real");
    require_same_size(k_imag_.size(), grid_.size(), "k_imag");
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i) {
        const auto idx = grid_.index(i, j);
        require(std::isfinite(k_real_[idx]) && k_real_[idx] > 0.0, "k_real must be positive and finite");
        require(std::isfinite(k_imag_[idx]) && k_imag_[idx] >= 0.0, "k_imag must be >= 0");
        if (grid_.depth(i, j) > band_cells_)
          require(k_imag_[idx] == 0.0, "k_imag must vanish outside the absorbing band");
        if (grid_.depth(i, j) <= band_cells_) require(!trainable(idx), "absorbing band cells are not trainable");
      }
  }

  /// Largest |k_real - k_ref| / k_ref over trainable cells.
  [[nodiscard]] double max_relative_deviation(double k_ref) const {
    double out = 0.0;
    for (Eigen::Index i = 0; i < grid_.size(); ++i)
      if (trainable(i)) out = std::max(out, std::abs(k_real_[i] - k_ref) / k_ref);
    return out;
  }

  friend bool operator==(const MediumMap&, const MediumMap&) = default;

 private:
  GridGeometry grid_;
  RealVector k_real_;
  RealVector k_imag_;
  std::vector<char> mask_;
  int band_cells_ = 0;
};

inline void require_positions_inside(const MediumMap& medium, const TransducerArray& array) {
  const auto& g = medium.geometry();
  for (const auto& c : array.centers) {
    const auto [i, j] = g.nearest_cell(c);
    require(g.depth(i, j) > medium.band_cells(), "transducer center must lie outside the absorbing band");
  }
}

/// Adds the absorbing ramp: depth d = 1 (outermost band cell, next to the
/// Dirichlet ring) gets max_imag, depth = band_cells gets 0, quadratic in
/// between. Band cells are removed from the trainable mask.
inline MediumMap apply_absorbing_profile(const MediumMap& medium, int band_cells, double max_imag) {
  const auto& g = medium.geometry();
  require(band_cells >= 0, "band_cells must be >= 0");
  require(max_imag >= 0.0 && std::isfinite(max_imag), "max_imag must be >= 0");
  if (2 * (band_cells + 1) > std::min(g.nx, g.ny))
    throw InvalidArgument("absorbing band wider than half the grid");
  if (band_cells == 0) return medium;

  RealVector k_imag = RealVector::Zero(g.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const int d = g.depth(i, j);
      if (d < 1 || d > band_cells) continue;
      const double t = band_cells == 1 ? 1.0 : double(band_cells - d) / double(band_cells - 1);
      k_imag[g.index(i, j)] = max_imag * t * t;
    }
  MediumMap out = medium;
  out.set_absorbing(band_cells, std::move(k_imag));
  return out;
}

// ---------------------------------------------------------------------------
// Operator
// ---------------------------------------------------------------------------

/// Matrix-free action v -> L v. Interior rows: 5-point Laplacian + k^2;
/// boundary-ring rows: identity.
class HelmholtzOperator {
 public:
  explicit HelmholtzOperator(const MediumMap& medium) : grid_(medium.geometry()) {
    medium.validate();
    const double inv_h2 = 1.0 / (grid_.h * grid_.h);
    off_ = Complex{inv_h2, 0.0};
    diag_.resize(grid_.size());
    for (Eigen::Index idx = 0; idx < grid_.size(); ++idx) {
      const Complex k = medium.k(idx);
      diag_[idx] = Complex{-4.0 * inv_h2, 0.0} + k * k;
    }
  }

  [[nodiscard]] Eigen::Index rows() const { return grid_.size(); }
  [[nodiscard]] const GridGeometry& geometry() const { return grid_; }

  void apply(const ComplexVector& v, ComplexVector& out) const {
    require_same_size(v.size(), rows(), "operator input");
    out.resize(rows());
    const Eigen::Index nx = grid_.nx;
    const Eigen::Index ny = grid_.ny;
    // interleaved (re, im) views; std::complex guarantees this layout
    const double* pv = reinterpret_cast<const double*>(v.data());
    const double* pd = reinterpret_cast<const double*>(diag_.data());
    double* po = reinterpret_cast<double*>(out.data());
    const double c = off_.real();

    for (Eigen::Index i = 0; i < nx; ++i) {
      out[i] = v[i];
      out[(ny - 1) * nx + i] = v[(ny - 1) * nx + i];
    }
    for (Eigen::Index j = 1; j < ny - 1; ++j) {
      const Eigen::Index row = j * nx;
      out[row] = v[row];
      out[row + nx - 1] = v[row + nx - 1];
      for (Eigen::Index idx = row + 1; idx < row + nx - 1; ++idx) {
        // same summation order as the row-major stored matrix
        const Eigen::Index s = 2 * idx, n = 2 * nx;
        const double dr = pd[s], di = pd[s + 1];
        double re = 0.0, im = 0.0;
        re += c * pv[s - n];
        im += c * pv[s - n + 1];
        re += c * pv[s - 2];
        im += c * pv[s - 1];
        re += dr * pv[s] - di * pv[s + 1];
        im += dr * pv[s + 1] + di * pv[s];
        re += c * pv[s + 2];
        im += c * pv[s + 3];
        re += c * pv[s + n];
        im += c * pv[s + n + 1];
        po[s] = re;
        po[s + 1] = im;
      }
    }
  }

  /// Diagonal of L (1 on the boundary ring), used by the Jacobi preconditioner.
  [[nodiscard]] ComplexVector diagonal() const {
    ComplexVector d = diag_;
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i)
        if (grid_.on_boundary(i, j)) d[grid_.index(i, j)] = Complex{1.0, 0.0};
    return d;
  }

  using RowMajorMatrix = Eigen::SparseMatrix<Complex, Eigen::RowMajor>;

  /// Same operator as an explicit sparse matrix.
  [[nodiscard]] RowMajorMatrix assemble() const {
    std::vector<Eigen::Triplet<Complex>> trip;
    trip.reserve(std::size_t(rows()) * 5);
    const int nx = grid_.nx;
    for (int j = 0; j < grid_.ny; ++j) {
      for (int i = 0; i < nx; ++i) {
        const Eigen::Index idx = grid_.index(i, j);
        if (grid_.on_boundary(i, j)) {
          trip.emplace_back(idx, idx, Complex{1.0, 0.0});
          continue;
        }
        trip.emplace_back(idx, idx - nx, off_);
        trip.emplace_back(idx, idx - 1, off_);
        trip.emplace_back(idx, idx, diag_[idx]);
        trip.emplace_back(idx, idx + 1, off_);
        trip.emplace_back(idx, idx + nx, off_);
      }
    }
    RowMajorMatrix m(rows(), rows());
    m.setFromTriplets(trip.begin(), trip.end());
    m.makeCompressed();
    return m;
  }

 private:
  GridGeometry grid_;
  Complex off_;
  ComplexVector diag_;
};

/// Stored-matrix counterpart of HelmholtzOperator with the same interface.
class StoredHelmholtzOperator {
 public:
  explicit StoredHelmholtzOperator(const MediumMap& medium)
      : matrix_(HelmholtzOperator(medium).assemble()) {}

  [[nodiscard]] Eigen::Index rows() const { return matrix_.rows(); }
  void apply(const ComplexVector& v, ComplexVector& out) const {
    require_same_size(v.size(), rows(), "operator input");
    out.noalias() = matrix_ * v;
  }
  [[nodiscard]] const HelmholtzOperator::RowMajorMatrix& matrix() const { return matrix_; }

 private:
  HelmholtzOperator::RowMajorMatrix matrix_;
};

static_assert(LinearOperator<HelmholtzOperator>);
static_assert(LinearOperator<StoredHelmholtzOperator>);

// ---------------------------------------------------------------------------
// Solves
// ---------------------------------------------------------------------------

struct FieldSolution {
  FieldGrid field;
  SolveStats stats;
};

inline void require_valid_source(const GridGeometry& g, const ComplexVector& source) {
  require_same_size(source.size(), g.size(), "source");
  require(all_finite(source), "source must be finite");
}

/// BiCGSTAB solve of L phi = s. Throws SolverError when the relative residual
/// target is not met within the iteration cap.
inline FieldSolution solve(const MediumMap& medium, const ComplexVector& source,
                           const SolverOptions& opts = {}) {
  const HelmholtzOperator op(medium);
  const auto& g = medium.geometry();
  require_valid_source(g, source);
  // boundary rows are identity; forcing phi = 0 there means s = 0 there
  ComplexVector rhs = source;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.on_boundary(i, j)) rhs[g.index(i, j)] = 0.0;

  ComplexVector x = ComplexVector::Zero(g.size());
  ComplexVector inv_diag;
  if (opts.preconditioner == Preconditioner::jacobi) inv_diag = op.diagonal().cwiseInverse();
  const SolveStats stats = bicgstab(op, rhs, x, opts, inv_diag.size() ? &inv_diag : nullptr);
  if (!stats.converged) {
    throw SolverError("BiCGSTAB did not converge: relative residual " + std::to_string(stats.relative_residual) +
                          " after " + std::to_string(stats.iterations) + " iterations",
                      stats);
  }
  return {FieldGrid(g, std::move(x)), stats};
}

/// Sparse LU factorization of L, for oracles and finite-difference checks
/// that need fields far below the iterative tolerance.
class DirectSolver {
 public:
  explicit DirectSolver(const MediumMap& medium) : grid_(medium.geometry()) {
    a_ = HelmholtzOperator(medium).assemble();
    lu_.analyzePattern(a_);
    lu_.factorize(a_);
    if (lu_.info() != Eigen::Success) throw NumericalError("sparse LU factorization failed");
  }

  /// LU solve followed by `refinement_steps` rounds of residual correction.
  [[nodiscard]] FieldGrid solve(const ComplexVector& source, int refinement_steps = 2) const {
    require_valid_source(grid_, source);
    ComplexVector rhs = source;
    for (int j = 0; j < grid_.ny; ++j)
      for (int i = 0; i < grid_.nx; ++i)
        if (grid_.on_boundary(i, j)) rhs[grid_.index(i, j)] = 0.0;
    ComplexVector x = lu_.solve(rhs);
    for (int r = 0; r < refinement_steps; ++r) {
      const ComplexVector residual = rhs - a_ * x;
      x += lu_.solve(residual);
    }
    return FieldGrid(grid_, std::move(x));
  }

 private:
  GridGeometry grid_;
  Eigen::SparseMatrix<Complex, Eigen::RowMajor> a_;
  Eigen::SparseLU<Eigen::SparseMatrix<Complex>, Eigen::COLAMDOrdering<int>> lu_;
};

inline FieldGrid solve_direct(const MediumMap& medium, const ComplexVector& source) {
  return DirectSolver(medium).solve(source);
}

/// Relative residual |L phi - s| / |s| with s zeroed on the boundary ring.
inline double relative_residual(const MediumMap& medium, const FieldGrid& phi, const ComplexVector& source) {
  const HelmholtzOperator op(medium);
  const auto& g = medium.geometry();
  ComplexVector rhs = source;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.on_boundary(i, j)) rhs[g.index(i, j)] = 0.0;
  ComplexVector lphi;
  op.apply(phi.values(), lphi);
  const double norm = rhs.norm();
  return norm > 0.0 ? (lphi - rhs).norm() / norm : lphi.norm();
}

/// Debug dump: header "i,j,re,im", one row per cell.
inline void write_field_csv(std::ostream& os, const FieldGrid& field) {
  const auto& g = field.geometry();
  os << "i,j,re,im\n";
  os << std::setprecision(17);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const Complex v = field(i, j);
      os << i << ',' << j << ',' << v.real() << ',' << v.imag() << '\n';
    }
}

}  // namespace wavetrain
