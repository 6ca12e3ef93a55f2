// SPDX-License-Identifier: Apache-2.0
//
// Stabilised biconjugate gradient solver for complex non-Hermitian systems,
// written against a minimal operator concept so the same loop serves the
// matrix-free stencil and assembled sparse matrices.

#pragma once

#include "wavetrain/core.hpp"

#include <concepts>
#include <limits>

namespace wavetrain {

template <typename Op>
concept LinearOperator = requires(const Op& op, const ComplexVector& in, ComplexVector& out) {
  { op.rows() } -> std::convertible_to<Eigen::Index>;
  op.apply(in, out);
};

enum class Preconditioner { none, jacobi };

struct SolverOptions {
  double rel_tolerance = 1e-8;
  /// 0 selects 20 * unknowns.
  long max_iterations = 0;
  Preconditioner preconditioner = Preconditioner::none;
  /// Restart with a fresh shadow residual when rho or omega collapses.
  bool restart_on_breakdown = true;

  void validate() const {
    require(rel_tolerance > 0.0 && rel_tolerance < 1.0, "rel_tolerance must lie in (0, 1)");
    require(max_iterations >= 0, "max_iterations must be >= 1 (or 0 for automatic)");
  }
  [[nodiscard]] long iteration_cap(Eigen::Index unknowns) const {
    return max_iterations > 0 ? max_iterations : 20 * long(unknowns);
  }
};

struct SolveStats {
  long iterations = 0;
  int restarts = 0;
  /// True relative residual |b - A x| / |b| of the returned solution.
  double relative_residual = 0.0;
  bool converged = false;
};

/// Raised when the iteration budget runs out. Carries the last residual so a
/// caller can decide whether a looser tolerance is acceptable.
class SolverError : public NumericalError {
 public:
  SolverError(const std::string& what, SolveStats stats) : NumericalError(what), stats_(stats) {}
  [[nodiscard]] const SolveStats& stats() const { return stats_; }

 private:
  SolveStats stats_;
};

/// Solves A x = b starting from x (which may hold an initial guess).
/// `inv_diag` is only read for the Jacobi preconditioner.
template <LinearOperator Op>
SolveStats bicgstab(const Op& A, const ComplexVector& b, ComplexVector& x, const SolverOptions& opts,
                    const ComplexVector* inv_diag = nullptr) {
  opts.validate();
  const Eigen::Index n = A.rows();
  require_same_size(b.size(), n, "bicgstab rhs");
  if (x.size() != n) x = ComplexVector::Zero(n);
  const bool jacobi = opts.preconditioner == Preconditioner::jacobi;
  require(!jacobi || (inv_diag && inv_diag->size() == n), "jacobi preconditioner needs a diagonal");

  SolveStats stats;
  const double b_norm = b.norm();
  if (b_norm == 0.0) {
    x.setZero();
    stats.converged = true;
    return stats;
  }
  const double target = opts.rel_tolerance * b_norm;
  const long cap = opts.iteration_cap(n);
  constexpr double tiny = std::numeric_limits<double>::min() * 1e10;

  auto precondition = [&](const ComplexVector& in, ComplexVector& out) {
    if (jacobi)
      out = inv_diag->cwiseProduct(in);
    else
      out = in;
  };

  ComplexVector r(n), r_hat(n), p(n), v(n), s(n), t(n), y(n), z(n), ax(n);
  A.apply(x, ax);
  r = b - ax;

  auto reset_shadow = [&]() {
    r_hat = r;
    p.setZero();
    v.setZero();
  };
  reset_shadow();
  Complex rho{1.0, 0.0}, alpha{1.0, 0.0}, omega{1.0, 0.0};

  double r_norm = r.norm();
  while (stats.iterations < cap) {
    if (r_norm <= target) {
      // confirm against the true residual; recurrences drift
      A.apply(x, ax);
      r = b - ax;
      r_norm = r.norm();
      if (r_norm <= target) {
        stats.converged = true;
        break;
      }
      reset_shadow();
      rho = alpha = omega = Complex{1.0, 0.0};
      ++stats.restarts;
    }

    const Complex rho_next = r_hat.dot(r);
    if (std::abs(rho_next) <= tiny * r_hat.norm() * r_norm || !std::isfinite(std::abs(rho_next))) {
      if (!opts.restart_on_breakdown) break;
      reset_shadow();
      rho = alpha = omega = Complex{1.0, 0.0};
      ++stats.restarts;
      continue;
    }
    const Complex beta = (rho_next / rho) * (alpha / omega);
    rho = rho_next;
    p = r + beta * (p - omega * v);
    precondition(p, y);
    A.apply(y, v);
    const Complex denom = r_hat.dot(v);
    if (std::abs(denom) <= tiny) {
      if (!opts.restart_on_breakdown) break;
      reset_shadow();
      rho = alpha = omega = Complex{1.0, 0.0};
      ++stats.restarts;
      continue;
    }
    alpha = rho / denom;
    s = r - alpha * v;
    ++stats.iterations;

    if (s.norm() <= target) {
      x += alpha * y;
      r = s;
      r_norm = s.norm();
      continue;
    }

    precondition(s, z);
    A.apply(z, t);
    const double tt = t.squaredNorm();
    omega = tt > 0.0 ? t.dot(s) / tt : Complex{0.0, 0.0};
    x += alpha * y + omega * z;
    r = s - omega * t;
    r_norm = r.norm();
    if (std::abs(omega) <= tiny) {
      if (!opts.restart_on_breakdown) break;
      reset_shadow();
      rho = alpha = omega = Complex{1.0, 0.0};
      ++stats.restarts;
    }
  }

  A.apply(x, ax);
  stats.relative_residual = (b - ax).norm() / b_norm;
  stats.converged = stats.relative_residual <= opts.rel_tolerance;
  return stats;
}

}  // namespace wavetrain
