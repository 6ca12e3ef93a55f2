// SPDX-License-Identifier: Apache-2.0
// Operator assembly, BiCGSTAB, absorbing band, reciprocity, refinement.

#include "wavetrain/helmholtz.hpp"
#include "wavetrain/random.hpp"

#include <catch_amalgamated.hpp>

#include <sstream>

using namespace wavetrain;
using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

// Dense L built entry by entry, independent of the library's operator.
Eigen::MatrixXcd dense_operator(const MediumMap& m) {
  const auto& g = m.geometry();
  const double c = 1.0 / (g.h * g.h);
  Eigen::MatrixXcd a = Eigen::MatrixXcd::Zero(g.size(), g.size());
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const auto r = g.index(i, j);
      if (i == 0 || j == 0 || i == g.nx - 1 || j == g.ny - 1) {
        a(r, r) = 1.0;
        continue;
      }
      const Complex k{m.k_real()[r], m.k_imag()[r]};
      a(r, r) = -4.0 * c + k * k;
      a(r, g.index(i - 1, j)) = c;
      a(r, g.index(i + 1, j)) = c;
      a(r, g.index(i, j - 1)) = c;
      a(r, g.index(i, j + 1)) = c;
    }
  return a;
}

ComplexVector interior_random(const GridGeometry& g, std::uint64_t seed) {
  ComplexVector s = random_complex_vector(g.size(), RngSeed{seed});
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i)
      if (g.on_boundary(i, j)) s[g.index(i, j)] = 0.0;
  return s;
}

// Reflected power of the 1D lattice phi_{n-1} - (2 - k_n^2 h^2) phi_n + phi_{n+1} = 0
// terminated by the given wavenumbers and phi = 0 on the last site.
double reflection_1d(const std::vector<Complex>& k_band, double k0, double h) {
  // sites: ... uniform | band[band-1] ... band[0] | wall (phi = 0)
  const int band = int(k_band.size());
  const int pad = 4;
  const int n = pad + band + 1;
  std::vector<Complex> k(std::size_t(n), Complex{k0, 0.0});
  for (int d = 1; d <= band; ++d) k[std::size_t(n - 1 - d)] = k_band[std::size_t(d - 1)];
  std::vector<Complex> phi(static_cast<std::size_t>(n));
  phi[std::size_t(n - 1)] = 0.0;
  phi[std::size_t(n - 2)] = 1.0;
  for (int s = n - 2; s >= 1; --s)
    phi[std::size_t(s - 1)] = (2.0 - k[std::size_t(s)] * k[std::size_t(s)] * h * h) * phi[std::size_t(s)] -
                              phi[std::size_t(s + 1)];
  // discrete dispersion in the uniform part: 2 cos(q h) = 2 - k0^2 h^2
  const double q = std::acos(1.0 - 0.5 * k0 * k0 * h * h) / h;
  const Complex ep = std::exp(Complex{0.0, q * h});
  // phi_s = A ep^s + B ep^-s for s = 0, 1 (A: travelling towards the wall)
  const Complex p0 = phi[0], p1 = phi[1];
  const Complex b = (p1 - ep * p0) / (1.0 / ep - ep);
  const Complex a = p0 - b;
  return std::norm(b / a);
}

}  // namespace

TEST_CASE("operator: constant field in a uniform medium", "[helmholtz]") {
  const GridGeometry g(9, 9, 0.1);
  const MediumMap m = MediumMap::uniform(g, kK0);
  const HelmholtzOperator op(m);
  ComplexVector v = ComplexVector::Constant(g.size(), Complex{0.3, -1.2}), out;
  op.apply(v, out);
  const Complex expected = kK0 * kK0 * Complex{0.3, -1.2};
  CHECK(std::abs(out[g.index(4, 4)] - expected) < 1e-12 * std::abs(expected));
  CHECK(out[g.index(0, 4)] == v[g.index(0, 4)]);
}

TEST_CASE("operator: impulse column matches the stencil", "[helmholtz]") {
  const GridGeometry g(7, 6, 0.2);
  const MediumMap m = MediumMap::uniform(g, 5.0);
  const HelmholtzOperator op(m);
  ComplexVector e = ComplexVector::Zero(g.size()), out;
  const auto c = g.index(3, 3);
  e[c] = 1.0;
  op.apply(e, out);
  const double inv_h2 = 1.0 / (0.2 * 0.2);
  CHECK_THAT(out[c].real(), WithinRel(-4.0 * inv_h2 + 25.0, 1e-14));
  for (const auto nb : {g.index(2, 3), g.index(4, 3), g.index(3, 2), g.index(3, 4)})
    CHECK_THAT(out[nb].real(), WithinRel(inv_h2, 1e-14));
  CHECK(out.cwiseAbs().sum() == Catch::Approx(4.0 * inv_h2 + std::abs(-4.0 * inv_h2 + 25.0)));
}

TEST_CASE("operator matches dense assembly on a 6x6 grid", "[helmholtz]") {
  const GridGeometry g(6, 6, 0.15);
  MediumMap m = MediumMap::uniform(g, kK0);
  Rng rng(RngSeed{8});
  for (Eigen::Index i = 0; i < g.size(); ++i) m.set_k_real(i, kK0 * (1.0 + 0.2 * rng.uniform(-1.0, 1.0)));
  m = apply_absorbing_profile(m, 1, 0.5 * kK0);
  const ComplexVector v = random_complex_vector(g.size(), RngSeed{9});
  ComplexVector out;
  HelmholtzOperator(m).apply(v, out);
  const ComplexVector ref = dense_operator(m) * v;
  CHECK((out - ref).cwiseAbs().maxCoeff() <= 1e-12 * ref.cwiseAbs().maxCoeff());
}

TEST_CASE("stencil and stored operators agree bit for bit", "[helmholtz]") {
  const GridGeometry g(23, 17, 0.1);
  MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 4, 0.5 * kK0);
  Rng rng(RngSeed{10});
  for (Eigen::Index i : m.trainable_cells()) m.set_k_real(i, kK0 * (1.0 + 0.1 * rng.normal()));
  const ComplexVector v = random_complex_vector(g.size(), RngSeed{11});
  ComplexVector a, b;
  HelmholtzOperator(m).apply(v, a);
  StoredHelmholtzOperator(m).apply(v, b);
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    REQUIRE(a[i].real() == b[i].real());
    REQUIRE(a[i].imag() == b[i].imag());
  }
}

TEST_CASE("solve: zero source gives zero field", "[helmholtz]") {
  const GridGeometry g(12, 12, 0.1);
  const auto sol = solve(MediumMap::uniform(g, kK0), ComplexVector::Zero(g.size()));
  CHECK(sol.field.values().cwiseAbs().maxCoeff() == 0.0);
  CHECK(sol.stats.converged);
}

TEST_CASE("solve matches a dense LU solve on a 20x20 grid", "[helmholtz]") {
  const GridGeometry g(20, 20, 0.1);
  const MediumMap m = MediumMap::uniform(g, kK0);
  const ComplexVector s = interior_random(g, 12);
  SolverOptions opts;
  opts.rel_tolerance = 1e-12;
  const auto sol = solve(m, s, opts);
  const ComplexVector ref = dense_operator(m).partialPivLu().solve(s);
  CHECK((sol.field.values() - ref).norm() / ref.norm() <= 1e-8);
  CHECK(relative_residual(m, sol.field, s) <= 1e-12);
}

TEST_CASE("solve is linear in the source", "[helmholtz]") {
  const GridGeometry g(25, 21, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 4, 0.5 * kK0);
  const ComplexVector s1 = interior_random(g, 13), s2 = interior_random(g, 14);
  SolverOptions opts;
  opts.rel_tolerance = 1e-10;
  const auto a = solve(m, s1, opts), b = solve(m, s2, opts), c = solve(m, s1 + s2, opts);
  const ComplexVector sum = a.field.values() + b.field.values();
  CHECK((c.field.values() - sum).norm() / sum.norm() <= 1e-7);
}

TEST_CASE("every returned field meets the advertised residual", "[helmholtz]") {
  const GridGeometry g(30, 26, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 5, 0.5 * kK0);
  for (const double tol : {1e-6, 1e-8, 1e-10}) {
    SolverOptions opts;
    opts.rel_tolerance = tol;
    const ComplexVector s = interior_random(g, 15);
    const auto sol = solve(m, s, opts);
    CHECK(sol.stats.relative_residual <= tol);
    CHECK(relative_residual(m, sol.field, s) <= tol);
  }
}

TEST_CASE("jacobi preconditioning agrees within tolerance", "[helmholtz]") {
  const GridGeometry g(30, 30, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 5, 0.5 * kK0);
  const ComplexVector s = interior_random(g, 16);
  SolverOptions plain, jac;
  plain.rel_tolerance = jac.rel_tolerance = 1e-10;
  jac.preconditioner = Preconditioner::jacobi;
  const auto a = solve(m, s, plain), b = solve(m, s, jac);
  CHECK((a.field.values() - b.field.values()).norm() / a.field.values().norm() <= 1e-7);
}

TEST_CASE("solve is deterministic", "[helmholtz]") {
  const GridGeometry g(20, 18, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 3, 0.5 * kK0);
  const ComplexVector s = interior_random(g, 17);
  const auto a = solve(m, s), b = solve(m, s);
  CHECK(a.stats.iterations == b.stats.iterations);
  CHECK((a.field.values() - b.field.values()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("non-convergence is reported with the residual", "[helmholtz]") {
  const GridGeometry g(40, 40, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 5, 0.5 * kK0);
  SolverOptions opts;
  opts.max_iterations = 3;
  try {
    (void)solve(m, interior_random(g, 18), opts);
    FAIL("expected SolverError");
  } catch (const SolverError& e) {
    CHECK_FALSE(e.stats().converged);
    CHECK(e.stats().relative_residual > opts.rel_tolerance);
    CHECK(e.stats().iterations <= 3);
  }
}

TEST_CASE("solver options validation", "[helmholtz]") {
  SolverOptions o;
  o.rel_tolerance = 0.0;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  o.rel_tolerance = 1.0;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  o.rel_tolerance = 1e-8;
  o.max_iterations = -1;
  CHECK_THROWS_AS(o.validate(), InvalidArgument);
  CHECK(SolverOptions{}.iteration_cap(100) == 2000);
}

TEST_CASE("absorbing profile endpoints and mask", "[helmholtz][absorbing]") {
  const GridGeometry g(40, 30, 0.1);
  const MediumMap base = MediumMap::uniform(g, kK0);
  CHECK(apply_absorbing_profile(base, 0, 0.5 * kK0) == base);

  const double max_imag = 0.5 * kK0;
  const MediumMap m = apply_absorbing_profile(base, 10, max_imag);
  const int row = 15;
  CHECK(m.k_imag()[g.index(1, row)] == max_imag);   // outermost band cell
  CHECK(m.k_imag()[g.index(10, row)] == 0.0);       // innermost band cell
  CHECK(m.k_imag()[g.index(11, row)] == 0.0);
  CHECK_THAT(m.k_imag()[g.index(5, row)], WithinRel(max_imag * std::pow(5.0 / 9.0, 2), 1e-14));
  CHECK(m.k_real() == base.k_real());
  for (int i = 1; i <= 10; ++i) CHECK_FALSE(m.trainable(g.index(i, row)));
  CHECK(m.trainable(g.index(11, row)));
  m.validate();
}

TEST_CASE("absorbing band wider than half the grid is rejected", "[helmholtz][absorbing]") {
  const MediumMap m = MediumMap::uniform(GridGeometry(20, 20, 0.1), kK0);
  CHECK_THROWS_AS(apply_absorbing_profile(m, 10, 1.0), InvalidArgument);
  CHECK_NOTHROW(apply_absorbing_profile(m, 8, 1.0));
}

TEST_CASE("absorbing band reflects less than 1% (1D transfer-matrix oracle)", "[helmholtz][absorbing]") {
  const GridGeometry g(40, 40, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 10, 0.5 * kK0);
  std::vector<Complex> band;
  for (int d = 1; d <= 10; ++d) band.push_back(m.k(g.index(d, 20)));
  const double r = reflection_1d(band, kK0, g.h);
  CHECK(r < 0.01);
  // a bare Dirichlet wall reflects everything
  CHECK_THAT(reflection_1d({}, kK0, g.h), WithinAbs(1.0, 1e-12));
}

TEST_CASE("discrete reciprocity of point sources", "[helmholtz][reciprocity]") {
  const GridGeometry g(30, 30, 0.1);
  MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 8, 0.5 * kK0);
  Rng rng(RngSeed{19});
  for (Eigen::Index i : m.trainable_cells()) m.set_k_real(i, kK0 * (1.0 + 0.1 * rng.uniform(-1.0, 1.0)));
  const auto p = g.index(11, 12), q = g.index(18, 17);
  ComplexVector sp = ComplexVector::Zero(g.size()), sq = sp;
  sp[p] = 1.0;
  sq[q] = 1.0;
  SolverOptions opts;
  opts.rel_tolerance = 1e-10;
  const Complex pq = solve(m, sp, opts).field.values()[q];
  const Complex qp = solve(m, sq, opts).field.values()[p];
  CHECK(std::abs(pq - qp) / std::abs(pq) <= 10.0 * opts.rel_tolerance);
  // the interior block of the stored operator is complex symmetric
  const Eigen::MatrixXcd a(HelmholtzOperator(m).assemble());
  double asym = 0.0;
  for (Eigen::Index r = 0; r < g.size(); ++r)
    for (Eigen::Index c = 0; c < g.size(); ++c)
      if (!g.on_boundary(g.i_of(r), g.j_of(r)) && !g.on_boundary(g.i_of(c), g.j_of(c)))
        asym = std::max(asym, std::abs(a(r, c) - a(c, r)));
  CHECK(asym == 0.0);
}

TEST_CASE("grid refinement converges at second order", "[helmholtz]") {
  // smooth medium and source on a fixed 2 x 2 domain
  const double length = 2.0;
  auto field_at = [&](double h, Position probe) {
    const int n = int(std::lround(length / h)) + 1;
    const GridGeometry g(n, n, h);
    MediumMap m = MediumMap::uniform(g, kK0);
    ComplexVector s(g.size());
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i) {
        const Position r = g.position(i, j);
        m.set_k_real(g.index(i, j), kK0 * (1.0 + 0.05 * std::sin(kPi * r.x) * std::sin(kPi * r.y)));
        const double dx = r.x - 0.8, dy = r.y - 1.1;
        s[g.index(i, j)] = std::exp(-(dx * dx + dy * dy) / (2.0 * 0.2 * 0.2));
      }
    const FieldGrid phi = solve_direct(m, s);
    const auto [i, j] = g.nearest_cell(probe);
    return phi(i, j);
  };
  for (const Position probe : {Position{1.0, 1.0}, Position{1.5, 0.5}}) {
    const Complex f1 = field_at(0.05, probe), f2 = field_at(0.025, probe), f3 = field_at(0.0125, probe);
    const double ratio = std::abs(f1 - f2) / std::abs(f2 - f3);
    CHECK(ratio > 3.0);
    CHECK(ratio < 5.0);
  }
}

TEST_CASE("direct solver agrees with BiCGSTAB", "[helmholtz]") {
  const GridGeometry g(24, 20, 0.1);
  const MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 4, 0.5 * kK0);
  const ComplexVector s = interior_random(g, 20);
  SolverOptions opts;
  opts.rel_tolerance = 1e-12;
  const ComplexVector a = solve(m, s, opts).field.values();
  const ComplexVector b = solve_direct(m, s).values();
  CHECK((a - b).norm() / b.norm() <= 1e-9);
}

TEST_CASE("medium invariants are validated", "[helmholtz]") {
  const GridGeometry g(12, 12, 0.1);
  MediumMap m = apply_absorbing_profile(MediumMap::uniform(g, kK0), 2, 1.0);
  m.validate();
  m.set_k_real(g.index(5, 5), 0.0);
  CHECK_THROWS_AS(m.validate(), InvalidArgument);
  CHECK_THROWS_AS(HelmholtzOperator(m), InvalidArgument);
}

TEST_CASE("field csv dump", "[helmholtz]") {
  FieldGrid f(GridGeometry(3, 3, 1.0));
  f(1, 2) = Complex{0.1, -2.0};
  std::ostringstream os;
  write_field_csv(os, f);
  const std::string text = os.str();
  CHECK(text.rfind("i,j,re,im\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 10);
  CHECK(text.find("1,2,") != std::string::npos);
}
