// SPDX-License-Identifier: Apache-2.0
//
// Training a Helmholtz medium to act as a matrix-vector multiplier.
//
// An input vector a is radiated by Gaussian emitters, the field phi_a is read
// out by Gaussian receivers (o = W_eff a), the conjugated output error is
// radiated back from the receivers to obtain phi_e, and the per-cell gradient
// of Q = |o - o_t|^2 with respect to the wavenumber is
//
//   g(r) = -4 k(r) Re(phi_a(r) phi_e(r)).
//
// g is the functional derivative: the derivative with respect to the value of
// k in one grid cell is g * h^2.

#pragma once

#include "wavetrain/core.hpp"
#include "wavetrain/helmholtz.hpp"
#include "wavetrain/metrics.hpp"
#include "wavetrain/random.hpp"
#include "wavetrain/transducers.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace wavetrain::medium {

// ---------------------------------------------------------------------------
// Signal encoding
// ---------------------------------------------------------------------------

/// a(r) = sum_i a_i beta_i(r).
inline ComplexVector encode_input(const ComplexVector& a, const TransducerProfiles& emitters) {
  require_same_size(a.size(), emitters.count(), "encode_input");
  return emitters.emit(a);
}

/// o_i = sum_cells phi * gamma_i * h^2.
inline ComplexVector read_output(const FieldGrid& field, const TransducerProfiles& receivers) {
  require_same_geometry(field.geometry(), receivers.geometry(), "read_output");
  return receivers.receive(field.values());
}

/// e_i = dQ/do_i = conj(o_i - o_t_i) for Q = |o - o_t|^2.
inline ComplexVector error_vector(const ComplexVector& o, const ComplexVector& o_t) {
  require_same_size(o.size(), o_t.size(), "error_vector");
  return (o - o_t).conjugate();
}

/// e(r) = sum_i e_i gamma_i(r): the error is emitted from the receivers.
inline ComplexVector encode_error(const ComplexVector& e, const TransducerProfiles& receivers) {
  require_same_size(e.size(), receivers.count(), "encode_error");
  return receivers.emit(e);
}

// ---------------------------------------------------------------------------
// Gradient and update
// ---------------------------------------------------------------------------

enum class GradientForm {
  full,          ///< -4 k Re(phi_a phi_e)
  proportional,  ///< -Re(phi_a phi_e), scale absorbed in the learning rate
};

/// Real value per cell, exactly zero off the trainable mask.
struct GradientFieldMap {
  GridGeometry geometry;
  RealVector values;

  [[nodiscard]] double max_abs() const { return values.size() ? values.cwiseAbs().maxCoeff() : 0.0; }
};

inline GradientFieldMap gradient_field(const FieldGrid& phi_a, const FieldGrid& phi_e, const MediumMap& medium,
                                       GradientForm form = GradientForm::full) {
  const auto& g = medium.geometry();
  require_same_geometry(phi_a.geometry(), g, "gradient_field (phi_a)");
  require_same_geometry(phi_e.geometry(), g, "gradient_field (phi_e)");
  GradientFieldMap out{g, RealVector::Zero(g.size())};
  for (Eigen::Index idx = 0; idx < g.size(); ++idx) {
    if (!medium.trainable(idx)) continue;
    const double overlap = (phi_a.values()[idx] * phi_e.values()[idx]).real();
    out.values[idx] = form == GradientForm::full ? -4.0 * medium.k_real()[idx] * overlap : -overlap;
  }
  return out;
}

/// k_real <- k_real - eta * g on the trainable cells. Refuses updates that
/// would make any wavenumber non-positive.
inline MediumMap sgd_step(const MediumMap& medium, const GradientFieldMap& grad, double eta) {
  require(eta >= 0.0 && std::isfinite(eta), "learning rate must be >= 0");
  require_same_geometry(grad.geometry, medium.geometry(), "sgd_step");
  require(all_finite(grad.values), "gradient must be finite");
  MediumMap out = medium;
  if (eta == 0.0) return out;
  RealVector& k = out.k_real_mut();
  for (Eigen::Index idx = 0; idx < k.size(); ++idx) {
    if (!medium.trainable(idx)) continue;
    const double next = k[idx] - eta * grad.values[idx];
    if (!(next > 0.0)) {
      const auto& g = medium.geometry();
      throw NumericalError("update drives k_real to " + std::to_string(next) + " at cell (" +
                           std::to_string(g.i_of(idx)) + ", " + std::to_string(g.j_of(idx)) + ")");
    }
    k[idx] = next;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Device: medium plus transducers
// ---------------------------------------------------------------------------

/// Geometry of the default experiment: emitters on a vertical line left of
/// the trainable rectangle, receivers on a vertical line right of it.
struct LayoutParams {
  double h = 0.1;
  int band_cells = 10;
  double band_max_imag = 0.5 * kK0;
  int n_emitters = 4;
  int n_receivers = 4;
  double spacing = 2.2;
  double sigma = 0.5;
  double trainable_width = 4.0;   // along x, between the transducer lines
  double trainable_height = 6.0;  // along y
  double gap = 1.0;               // transducer line to trainable rectangle
  double margin = 1.0;            // transducer line / rectangle to absorbing band
  double k_background = kK0;
  /// 0 picks the smallest grid that fits the layout.
  int nx = 0;
  int ny = 0;

  void validate() const {
    require(h > 0.0, "layout.h must be positive");
    require(band_cells >= 0, "layout.band_cells must be >= 0");
    require(band_max_imag >= 0.0, "layout.band_max_imag must be >= 0");
    require(n_emitters >= 1 && n_receivers >= 1, "layout needs at least one emitter and one receiver");
    require(spacing > 0.0 && sigma > 0.0, "layout spacing and sigma must be positive");
    require(trainable_width > 0.0 && trainable_height > 0.0, "trainable rectangle must be non-empty");
    require(gap >= 0.0 && margin >= 0.0, "layout gap and margin must be >= 0");
    require(k_background > 0.0, "background wavenumber must be positive");
  }
};

class Device {
 public:
  Device(MediumMap medium, const TransducerArray& emitters, const TransducerArray& receivers)
      : medium_(std::move(medium)),
        emitters_(emitters.with_role(TransducerRole::emitter), medium_.geometry()),
        receivers_(receivers.with_role(TransducerRole::receiver), medium_.geometry()) {
    medium_.validate();
    require_positions_inside(medium_, emitters);
    require_positions_inside(medium_, receivers);
    medium_.clear_mask_at(emitters);
    medium_.clear_mask_at(receivers);
  }

  static Device from_layout(const LayoutParams& p) {
    p.validate();
    const int b = p.band_cells;
    const double x_emit = (b + 1) * p.h + p.margin;
    const double x0 = x_emit + p.gap;
    const double x1 = x0 + p.trainable_width;
    const double x_recv = x1 + p.gap;
    const double span = std::max({(p.n_emitters - 1) * p.spacing, (p.n_receivers - 1) * p.spacing,
                                  p.trainable_height});
    const double y_lo = (b + 1) * p.h + p.margin;
    const double y_mid = y_lo + 0.5 * span;

    const int nx_min = int(std::ceil((x_recv + p.margin) / p.h - 1e-9)) + b + 2;
    const int ny_min = int(std::ceil((y_lo + span + p.margin) / p.h - 1e-9)) + b + 2;
    require(p.nx == 0 || p.nx >= nx_min, "layout.nx too small for the layout");
    require(p.ny == 0 || p.ny >= ny_min, "layout.ny too small for the layout");
    const GridGeometry grid(p.nx ? p.nx : nx_min, p.ny ? p.ny : ny_min, p.h);

    auto line = [&](int n, double x, TransducerRole role) {
      TransducerArray arr;
      arr.sigma = p.sigma;
      arr.role = role;
      for (int t = 0; t < n; ++t) arr.centers.push_back({x, y_mid + (t - 0.5 * (n - 1)) * p.spacing});
      return arr;
    };

    MediumMap m = apply_absorbing_profile(MediumMap::uniform(grid, p.k_background), b, p.band_max_imag);
    m.restrict_mask_to_rectangle(x0, y_mid - 0.5 * p.trainable_height, x1, y_mid + 0.5 * p.trainable_height);
    return Device(std::move(m), line(p.n_emitters, x_emit, TransducerRole::emitter),
                  line(p.n_receivers, x_recv, TransducerRole::receiver));
  }

  [[nodiscard]] const MediumMap& medium() const { return medium_; }
  void set_medium(MediumMap m) {
    require_same_geometry(m.geometry(), medium_.geometry(), "Device::set_medium");
    medium_ = std::move(m);
  }
  [[nodiscard]] const TransducerProfiles& emitters() const { return emitters_; }
  [[nodiscard]] const TransducerProfiles& receivers() const { return receivers_; }
  [[nodiscard]] Eigen::Index n_inputs() const { return emitters_.count(); }
  [[nodiscard]] Eigen::Index n_outputs() const { return receivers_.count(); }

  /// Same medium, with emitters and receivers exchanged.
  [[nodiscard]] Device reversed() const {
    Device out = *this;
    std::swap(out.emitters_, out.receivers_);
    return out;
  }

 private:
  MediumMap medium_;
  TransducerProfiles emitters_;
  TransducerProfiles receivers_;
};

/// Column j is the output for basis input e_j.
inline ComplexMatrix effective_matrix(const MediumMap& medium, const TransducerProfiles& emitters,
                                      const TransducerProfiles& receivers, const SolverOptions& opts = {}) {
  require(emitters.count() >= 1, "effective_matrix needs at least one emitter");
  require(receivers.count() >= 1, "effective_matrix needs at least one receiver");
  ComplexMatrix w(receivers.count(), emitters.count());
  for (Eigen::Index c = 0; c < emitters.count(); ++c) {
    const ComplexVector basis = ComplexVector::Unit(emitters.count(), c);
    const auto sol = solve(medium, encode_input(basis, emitters), opts);
    w.col(c) = read_output(sol.field, receivers);
  }
  return w;
}

inline ComplexMatrix effective_matrix(const Device& d, const SolverOptions& opts = {}) {
  return effective_matrix(d.medium(), d.emitters(), d.receivers(), opts);
}

// ---------------------------------------------------------------------------
// One sample: forward solve, error, adjoint solve, gradient
// ---------------------------------------------------------------------------

struct SampleResult {
  ComplexVector output;
  double cost = 0.0;
  GradientFieldMap gradient;
  SolveStats forward_stats;
  SolveStats adjoint_stats;
};

/// Cost Q = |o - o_t|^2 for one sample (one forward solve).
inline double sample_cost(const Device& d, const ComplexVector& a, const ComplexVector& o_t,
                          const SolverOptions& opts) {
  const auto sol = solve(d.medium(), encode_input(a, d.emitters()), opts);
  return (read_output(sol.field, d.receivers()) - o_t).squaredNorm();
}

inline SampleResult sample_gradient(const Device& d, const ComplexVector& a, const ComplexVector& o_t,
                                    const SolverOptions& opts, GradientForm form = GradientForm::full) {
  require_same_size(a.size(), d.n_inputs(), "sample input");
  require_same_size(o_t.size(), d.n_outputs(), "sample target");
  SampleResult r;
  auto fwd = solve(d.medium(), encode_input(a, d.emitters()), opts);
  r.forward_stats = fwd.stats;
  r.output = read_output(fwd.field, d.receivers());
  r.cost = (r.output - o_t).squaredNorm();
  const ComplexVector e = error_vector(r.output, o_t);
  auto adj = solve(d.medium(), encode_error(e, d.receivers()), opts);
  r.adjoint_stats = adj.stats;
  r.gradient = gradient_field(fwd.field, adj.field, d.medium(), form);
  return r;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class LearningRateMode { fixed_value, auto_calibrated };

struct MediumExperimentConfig {
  LayoutParams layout;
  double target_scale = 1.0 / 25.0;
  /// When true the random target is additionally multiplied by the RMS entry
  /// magnitude of the initial medium's effective matrix, so target_scale is
  /// relative to what the untrained device already transmits.
  bool target_relative_to_initial = false;
  long iterations = 1000;
  LearningRateMode eta_mode = LearningRateMode::auto_calibrated;
  double eta0 = 0.0;
  /// Linear decay eta_k = eta0 (1 - k / N_it) when true, constant otherwise.
  bool linear_decay = true;
  /// Acceptable first-step relative cost reduction for auto calibration.
  double calibrate_min_reduction = 0.1;
  double calibrate_max_reduction = 0.5;
  GradientForm gradient_form = GradientForm::full;
  SolverOptions solver{};
  std::uint64_t seed = 1;
  /// Replaces the random target when set (shape n_receivers x n_emitters).
  std::optional<ComplexMatrix> target;

  void validate() const {
    layout.validate();
    require(iterations >= 1, "iterations must be >= 1");
    require(target_scale > 0.0, "target_scale must be positive");
    require(eta0 >= 0.0, "eta0 must be >= 0");
    require(eta_mode == LearningRateMode::auto_calibrated || std::isfinite(eta0), "eta0 must be finite");
    require(calibrate_min_reduction > 0.0 && calibrate_min_reduction < calibrate_max_reduction &&
                calibrate_max_reduction < 1.0,
            "calibration reduction window must satisfy 0 < min < max < 1");
    solver.validate();
    if (target) {
      require(target->rows() == layout.n_receivers && target->cols() == layout.n_emitters,
              "target matrix must be n_receivers x n_emitters");
      require(all_finite(*target), "target matrix must be finite");
    }
  }
};

struct IterationRow {
  long iteration = 0;
  double eta = 0.0;
  double nrmse = 0.0;
  double error_norm = 0.0;
  double target_norm_sq = 0.0;
  long forward_iterations = 0;
  long adjoint_iterations = 0;
  double forward_residual = 0.0;
  double adjoint_residual = 0.0;
  int retries = 0;
};

struct TrainingRecord {
  std::vector<IterationRow> rows;
  double eta0 = 0.0;
  ComplexMatrix target;
  double initial_max_relative_deviation = 0.0;
  double final_max_relative_deviation = 0.0;
};

struct MediumTrainingResult {
  Device device;
  TrainingRecord record;
};

/// Bracketing search for eta such that one step on (a, o_t) lowers the cost
/// by a fraction inside [min_reduction, max_reduction]. Returns the chosen eta.
inline double calibrate_learning_rate(const Device& d, const ComplexVector& a, const ComplexVector& o_t,
                                      const SolverOptions& opts, GradientForm form, double min_reduction,
                                      double max_reduction) {
  const SampleResult s = sample_gradient(d, a, o_t, opts, form);
  const double gmax = s.gradient.max_abs();
  if (!(gmax > 0.0) || !(s.cost > 0.0)) return 0.0;

  auto reduction = [&](double eta) {
    Device trial = d;
    try {
      trial.set_medium(sgd_step(d.medium(), s.gradient, eta));
      return 1.0 - sample_cost(trial, a, o_t, opts) / s.cost;
    } catch (const NumericalError&) {
      return -1.0;
    }
  };

  // start with a step that moves the largest cell by 1e-4 k0
  double eta = 1e-4 * kK0 / gmax;
  double lo = 0.0, hi = 0.0;  // lo: too small, hi: too large
  for (int it = 0; it < 60; ++it) {
    const double r = reduction(eta);
    if (r >= min_reduction && r <= max_reduction) return eta;
    if (r < min_reduction && r >= 0.0 && hi == 0.0) {
      lo = eta;
      eta *= 4.0;
      continue;
    }
    if (r < min_reduction && r >= 0.0) lo = eta;
    else hi = eta;
    eta = lo > 0.0 ? std::sqrt(lo * hi) : 0.25 * hi;
  }
  throw NumericalError("learning-rate calibration did not bracket the target reduction window");
}

/// Draws W (unless given), then runs single-sample SGD for cfg.iterations.
/// Each iteration draws a fresh complex Gaussian input. Solver failures are
/// retried once at a 10x looser tolerance before the run fails.
inline MediumTrainingResult train_medium(const MediumExperimentConfig& cfg,
                                         std::function<void(const IterationRow&)> on_row = {}) {
  cfg.validate();
  Device device = Device::from_layout(cfg.layout);
  Rng rng(RngSeed{cfg.seed});

  TrainingRecord rec;
  if (cfg.target) {
    rec.target = *cfg.target;
  } else {
    double scale = cfg.target_scale;
    if (cfg.target_relative_to_initial) {
      const ComplexMatrix w0 = effective_matrix(device, cfg.solver);
      scale *= w0.norm() / std::sqrt(double(w0.size()));
    }
    rec.target = rng.complex_matrix(device.n_outputs(), device.n_inputs()) * scale;
  }
  std::vector<ComplexVector> inputs;
  inputs.reserve(std::size_t(cfg.iterations));
  for (long k = 0; k < cfg.iterations; ++k) inputs.push_back(rng.complex_vector(device.n_inputs()));

  const double k_ref = cfg.layout.k_background;
  rec.initial_max_relative_deviation = device.medium().max_relative_deviation(k_ref);

  if (cfg.eta_mode == LearningRateMode::auto_calibrated) {
    rec.eta0 = calibrate_learning_rate(device, inputs[0], rec.target * inputs[0], cfg.solver, cfg.gradient_form,
                                       cfg.calibrate_min_reduction, cfg.calibrate_max_reduction);
  } else {
    rec.eta0 = cfg.eta0;
  }

  std::vector<ComplexVector> outputs, targets;
  outputs.reserve(inputs.size());
  targets.reserve(inputs.size());

  for (long k = 0; k < cfg.iterations; ++k) {
    IterationRow row;
    row.iteration = k;
    row.eta = cfg.linear_decay ? rec.eta0 * (1.0 - double(k) / double(cfg.iterations)) : rec.eta0;
    const ComplexVector& a = inputs[std::size_t(k)];
    const ComplexVector o_t = rec.target * a;

    SampleResult s;
    try {
      s = sample_gradient(device, a, o_t, cfg.solver, cfg.gradient_form);
    } catch (const SolverError&) {
      SolverOptions loose = cfg.solver;
      loose.rel_tolerance = std::min(0.5, 10.0 * cfg.solver.rel_tolerance);
      row.retries = 1;
      s = sample_gradient(device, a, o_t, loose, cfg.gradient_form);
    }
    row.error_norm = std::sqrt(s.cost);
    row.target_norm_sq = o_t.squaredNorm();
    row.forward_iterations = s.forward_stats.iterations;
    row.adjoint_iterations = s.adjoint_stats.iterations;
    row.forward_residual = s.forward_stats.relative_residual;
    row.adjoint_residual = s.adjoint_stats.relative_residual;
    outputs.push_back(s.output);
    targets.push_back(o_t);

    device.set_medium(sgd_step(device.medium(), s.gradient, row.eta));
    rec.rows.push_back(row);
    if (on_row) on_row(row);
  }

  const auto per_sample = nrmse(outputs, targets);
  for (std::size_t n = 0; n < per_sample.size(); ++n) rec.rows[n].nrmse = per_sample[n];
  rec.final_max_relative_deviation = device.medium().max_relative_deviation(k_ref);
  return {std::move(device), std::move(rec)};
}

}  // namespace wavetrain::medium
