// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of both gradient paths.
//
// Medium: the adjoint density g(r) is a functional derivative; the derivative
// of Q with respect to the wavenumber of one cell is g * h^2, so the check
// compares g against FD / h^2 where FD re-solves with a sparse LU.
//
// Chip: the intensity gradient is compared with central differences of Q over
// every phase, after a scale fitted once on a separate probe instance.

#pragma once

#include "wavetrain/chip.hpp"
#include "wavetrain/medium.hpp"

#include <algorithm>
#include <cmath>

namespace wavetrain::gradcheck {

struct MediumCheckConfig {
  int nx = 16;
  int ny = 12;
  double h = 0.1;
  int band_cells = 2;
  double band_max_imag = 0.5 * kK0;
  double sigma = 0.15;
  double step = 1e-6 * kK0;
  double solver_tolerance = 1e-10;
  double tolerance = 1e-4;
  double guard = 1e-12;
  std::uint64_t seed = 7;
  /// Negates the adjoint gradient; the check must then fail.
  bool flip_sign = false;
};

struct CheckReport {
  double max_relative_error = 0.0;
  Eigen::Index checked = 0;
  double tolerance = 0.0;
  /// Scale applied to the analytic gradient (1 for the medium).
  double scale = 1.0;
  double cosine = 0.0;
  [[nodiscard]] bool passed() const { return checked > 0 && max_relative_error <= tolerance; }
};

/// Two emitters on the left, two receivers on the right, every other cell
/// outside the absorbing band trainable.
inline medium::Device medium_check_device(const MediumCheckConfig& c) {
  const GridGeometry grid(c.nx, c.ny, c.h);
  MediumMap m = apply_absorbing_profile(MediumMap::uniform(grid, kK0), c.band_cells, c.band_max_imag);
  const int depth = c.band_cells + 2;
  const double x_l = depth * c.h, x_r = (c.nx - 1 - depth) * c.h;
  const double y_lo = depth * c.h, y_hi = (c.ny - 1 - depth) * c.h;
  TransducerArray emitters{{{x_l, y_lo}, {x_l, y_hi}}, c.sigma, TransducerRole::emitter};
  TransducerArray receivers{{{x_r, y_lo}, {x_r, y_hi}}, c.sigma, TransducerRole::receiver};
  return medium::Device(std::move(m), emitters, receivers);
}

inline double direct_cost(const MediumMap& m, const medium::Device& d, const ComplexVector& source,
                          const ComplexVector& o_t) {
  const FieldGrid phi = DirectSolver(m).solve(source);
  return (medium::read_output(phi, d.receivers()) - o_t).squaredNorm();
}

inline CheckReport check_medium_gradient(const MediumCheckConfig& c) {
  using namespace medium;
  const Device d = medium_check_device(c);
  Rng rng(RngSeed{c.seed});
  const ComplexVector a = rng.complex_vector(d.n_inputs());
  const ComplexVector o_t = rng.complex_vector(d.n_outputs()) * 0.1;

  SolverOptions opts;
  opts.rel_tolerance = c.solver_tolerance;
  const SampleResult s = sample_gradient(d, a, o_t, opts, GradientForm::full);
  const ComplexVector source = encode_input(a, d.emitters());
  const double h2 = c.h * c.h;

  CheckReport r;
  r.tolerance = c.tolerance;
  RealVector adj(d.medium().trainable_count()), fd(adj.size());
  for (const Eigen::Index idx : d.medium().trainable_cells()) {
    MediumMap plus = d.medium(), minus = d.medium();
    const double k = d.medium().k_real()[idx];
    plus.set_k_real(idx, k + c.step);
    minus.set_k_real(idx, k - c.step);
    const double g_fd = (direct_cost(plus, d, source, o_t) - direct_cost(minus, d, source, o_t)) / (2.0 * c.step) / h2;
    const double g_adj = (c.flip_sign ? -1.0 : 1.0) * s.gradient.values[idx];
    adj[r.checked] = g_adj;
    fd[r.checked] = g_fd;
    ++r.checked;
    r.max_relative_error = std::max(r.max_relative_error, std::abs(g_adj - g_fd) / std::max(std::abs(g_fd), c.guard));
  }
  r.cosine = adj.dot(fd) / (adj.norm() * fd.norm());
  return r;
}

struct ChipCheckConfig {
  int channels = 4;
  int layers = 3;
  chip::MixerStyle mixer = chip::MixerStyle::coupler_mesh;
  double step = 1e-6;
  double tolerance = 1e-6;
  std::uint64_t seed = 11;
  bool flip_sign = false;
};

/// Lossless chip with random phases, random unitary target and a random
/// unit input, all drawn from `seed`.
struct ChipProbe {
  chip::ChipState state;
  ComplexVector a;
  ComplexVector o_t;
};

inline ChipProbe chip_probe(const ChipCheckConfig& c, std::uint64_t seed) {
  chip::ChipExperimentConfig cfg;
  cfg.channels = c.channels;
  cfg.layers = c.layers;
  cfg.mixer = c.mixer;
  cfg.seed = seed;
  ChipProbe p{chip::build_chip(cfg), {}, {}};
  Rng rng(RngSeed{seed ^ 0x9e3779b97f4a7c15ull});
  std::vector<RealVector> psi;
  for (int k = 0; k < c.layers; ++k) {
    RealVector v(c.channels);
    for (int i = 0; i < c.channels; ++i) v[i] = rng.uniform(-kPi, kPi);
    psi.push_back(v);
  }
  p.state.set_phases(std::move(psi));
  p.a = chip::random_unit_vector(rng, c.channels);
  p.o_t = chip::build_target(cfg) * p.a;
  return p;
}

inline RealVector chip_intensity_gradient(const ChipProbe& p) {
  const ComplexVector o = chip::forward(p.state, p.a).output_side();
  return chip::flatten(chip::intensity_gradient_forwarddir(p.state, p.a, chip::inject_error(o, p.o_t)));
}

inline RealVector chip_fd_gradient(const ChipProbe& p, double step) {
  auto cost = [&](const chip::ChipState& s) { return (chip::forward(s, p.a).output_side() - p.o_t).squaredNorm(); };
  RealVector fd(Eigen::Index(p.state.layers()) * p.state.channels());
  Eigen::Index n = 0;
  for (std::size_t k = 0; k < p.state.layers(); ++k)
    for (Eigen::Index i = 0; i < p.state.channels(); ++i) {
      chip::ChipState plus = p.state, minus = p.state;
      plus.phases()[k][i] += step;
      minus.phases()[k][i] -= step;
      fd[n++] = (cost(plus) - cost(minus)) / (2.0 * step);
    }
  return fd;
}

/// Norm-wise relative error |s g - g_fd| / |g_fd| with s fitted by least
/// squares on a probe drawn from seed + 1.
inline CheckReport check_chip_gradient(const ChipCheckConfig& c) {
  const ChipProbe probe = chip_probe(c, c.seed + 1);
  const RealVector gp = chip_intensity_gradient(probe);
  const RealVector fp = chip_fd_gradient(probe, c.step);
  CheckReport r;
  r.tolerance = c.tolerance;
  r.scale = gp.dot(fp) / gp.squaredNorm();

  const ChipProbe inst = chip_probe(c, c.seed);
  const RealVector g = (c.flip_sign ? -1.0 : 1.0) * r.scale * chip_intensity_gradient(inst);
  const RealVector fd = chip_fd_gradient(inst, c.step);
  r.checked = g.size();
  r.max_relative_error = (g - fd).norm() / fd.norm();
  r.cosine = g.dot(fd) / (g.norm() * fd.norm());
  return r;
}

}  // namespace wavetrain::gradcheck
