// SPDX-License-Identifier: Apache-2.0
//
// Layered photonic chip: N layers, each a fixed mixer U_i followed by a column
// of phase shifters P_i = diag(lambda * exp(j psi_i)):
//
//   o = P_N U_N ... P_1 U_1 a.
//
// Error light enters from the output side and sees the transposed chain
// (reciprocity). Phase gradients are formed from three intensity patterns per
// layer; with e = -j conj(o - o_t) and exact fields,
//
//   dQ/dpsi_k = -(|a_k + conj(e_k)|^2 - |a_k|^2 - |e_k|^2),   Q = |o - o_t|^2,
//
// so the intensity gradient equals the true gradient with constant 1.

#pragma once

#include "wavetrain/core.hpp"
#include "wavetrain/metrics.hpp"
#include "wavetrain/random.hpp"

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace wavetrain::chip {

/// 50/50 directional coupler (1/sqrt2) [[1, j], [j, 1]].
inline Eigen::Matrix2cd coupler() {
  Eigen::Matrix2cd c;
  const double s = 1.0 / std::sqrt(2.0);
  c << Complex{s, 0.0}, Complex{0.0, s}, Complex{0.0, s}, Complex{s, 0.0};
  return c;
}

inline int log2_ceil(int m) {
  int levels = 0;
  while ((1 << levels) < m) ++levels;
  return levels;
}

inline int default_sublayers(int m) { return log2_ceil(m) + 1; }

/// Channel pairs of one butterfly sublayer: stride 2^(level mod ceil(log2 M)),
/// labels rotated cyclically by `offset`, greedy so pairs stay disjoint.
inline std::vector<std::pair<int, int>> butterfly_pairs(int m, int level, int offset) {
  const int bit = level % std::max(log2_ceil(m), 1);
  const int stride = 1 << bit;
  std::vector<char> used(std::size_t(m), 0);
  std::vector<std::pair<int, int>> pairs;
  for (int t = 0; t < m; ++t) {
    if ((t >> bit) & 1) continue;
    const int i = (t + offset) % m;
    const int partner = (i + stride) % m;
    if (partner == i || used[std::size_t(i)] || used[std::size_t(partner)]) continue;
    used[std::size_t(i)] = used[std::size_t(partner)] = 1;
    pairs.emplace_back(std::min(i, partner), std::max(i, partner));
  }
  return pairs;
}

/// Nearest-neighbour pairs (p, p+1) starting at channel `parity`.
inline std::vector<std::pair<int, int>> brick_pairs(int m, int parity) {
  std::vector<std::pair<int, int>> pairs;
  for (int i = parity; i + 1 < m; i += 2) pairs.emplace_back(i, i + 1);
  return pairs;
}

inline ComplexMatrix coupler_layer(int m, const std::vector<std::pair<int, int>>& pairs) {
  const Eigen::Matrix2cd c = coupler();
  ComplexMatrix layer = ComplexMatrix::Identity(m, m);
  for (const auto& [p, q] : pairs) {
    layer(p, p) = c(0, 0);
    layer(p, q) = c(0, 1);
    layer(q, p) = c(1, 0);
    layer(q, q) = c(1, 1);
  }
  return layer;
}

/// Smallest number of outputs any single input reaches (|U_ij| > 1e-12).
inline Eigen::Index min_column_support(const ComplexMatrix& u) {
  Eigen::Index best = u.rows();
  for (Eigen::Index c = 0; c < u.cols(); ++c)
    best = std::min(best, Eigen::Index((u.col(c).cwiseAbs().array() > 1e-12).count()));
  return best;
}

/// Butterfly network of 50/50 couplers with a random cyclic rotation per
/// sublayer. Offsets are redrawn (up to 64 times) until every input reaches at
/// least min(M, 2^sublayers) outputs; for power-of-two M the first draw always
/// qualifies. Unitary by construction.
inline ComplexMatrix build_coupler_mesh(int m, int sublayers, Rng& rng) {
  require(m >= 2, "coupler mesh needs M >= 2");
  require(sublayers >= 1, "coupler mesh needs at least one sublayer");
  const Eigen::Index wanted = std::min<Eigen::Index>(m, sublayers < 30 ? Eigen::Index(1) << sublayers : m);
  ComplexMatrix best;
  Eigen::Index best_support = -1;
  for (int attempt = 0; attempt < 64; ++attempt) {
    ComplexMatrix u = ComplexMatrix::Identity(m, m);
    for (int s = 0; s < sublayers; ++s) {
      const int offset = int(rng.engine()() % std::uint64_t(m));
      u = coupler_layer(m, butterfly_pairs(m, s, offset)) * u;
    }
    const Eigen::Index support = min_column_support(u);
    if (support > best_support) {
      best = std::move(u);
      best_support = support;
    }
    if (best_support >= wanted) break;
  }
  return best;
}

inline ComplexMatrix build_coupler_mesh(int m, int sublayers, RngSeed seed) {
  Rng rng(seed);
  return build_coupler_mesh(m, sublayers, rng);
}

/// Alternating even/odd nearest-neighbour sublayers.
inline ComplexMatrix build_coupler_brick(int m, int sublayers) {
  require(m >= 2, "coupler brick needs M >= 2");
  require(sublayers >= 1, "coupler brick needs at least one sublayer");
  ComplexMatrix u = ComplexMatrix::Identity(m, m);
  for (int s = 0; s < sublayers; ++s) u = coupler_layer(m, brick_pairs(m, s % 2)) * u;
  return u;
}

inline double unitarity_error(const ComplexMatrix& u) {
  return (u.adjoint() * u - ComplexMatrix::Identity(u.cols(), u.cols())).cwiseAbs().maxCoeff();
}

// ---------------------------------------------------------------------------
// Chip state and propagation
// ---------------------------------------------------------------------------

class ChipState {
 public:
  ChipState() = default;
  /// Zero phases, lossless, no uneven loss.
  explicit ChipState(std::vector<ComplexMatrix> mixers) : mixers_(std::move(mixers)) {
    require(!mixers_.empty(), "chip needs at least one layer");
    const auto m = mixers_.front().rows();
    require(m >= 2, "chip needs at least two channels");
    for (const auto& u : mixers_) {
      require(u.rows() == m && u.cols() == m, "all mixers must be M x M");
      require(unitarity_error(u) <= 1e-12, "mixers must be unitary");
    }
    psi_.assign(mixers_.size(), RealVector::Zero(m));
  }

  [[nodiscard]] Eigen::Index channels() const { return mixers_.front().rows(); }
  [[nodiscard]] std::size_t layers() const { return mixers_.size(); }
  [[nodiscard]] const std::vector<RealVector>& phases() const { return psi_; }
  std::vector<RealVector>& phases() { return psi_; }
  [[nodiscard]] const std::vector<ComplexMatrix>& mixers() const { return mixers_; }
  [[nodiscard]] double loss_factor() const { return lambda_; }
  [[nodiscard]] const std::vector<RealVector>& uneven_loss() const { return uneven_; }
  [[nodiscard]] bool has_uneven_loss() const { return !uneven_.empty(); }

  /// Uniform amplitude factor applied in every phase-shifter column.
  void set_loss_factor(double lambda) {
    require(lambda > 0.0 && lambda <= 1.0, "loss factor must lie in (0, 1]");
    lambda_ = lambda;
  }
  /// Per-layer diagonal amplitude factors D_i applied after the mixer.
  void set_uneven_loss(std::vector<RealVector> d) {
    if (!d.empty()) {
      require(d.size() == layers(), "one uneven-loss vector per layer");
      for (const auto& v : d) {
        require(v.size() == channels(), "uneven-loss vector length must be M");
        for (Eigen::Index i = 0; i < v.size(); ++i)
          require(v[i] > 0.0 && v[i] <= 1.0, "uneven-loss factors must lie in (0, 1]");
      }
    }
    uneven_ = std::move(d);
  }
  void set_phases(std::vector<RealVector> psi) {
    require(psi.size() == layers(), "one phase vector per layer");
    for (const auto& v : psi) {
      require(v.size() == channels(), "phase vector length must be M");
      require(all_finite(v), "phases must be finite");
    }
    psi_ = std::move(psi);
  }

  [[nodiscard]] ChipState without_uneven_loss() const {
    ChipState out = *this;
    out.uneven_.clear();
    return out;
  }
  [[nodiscard]] ChipState lossless() const {
    ChipState out = without_uneven_loss();
    out.lambda_ = 1.0;
    return out;
  }

  /// Diagonal of P_k (k = 1..N).
  [[nodiscard]] ComplexVector phase_column(std::size_t k) const {
    const RealVector& p = psi_.at(k - 1);
    ComplexVector d(p.size());
    for (Eigen::Index i = 0; i < p.size(); ++i) d[i] = lambda_ * std::polar(1.0, p[i]);
    return d;
  }
  /// U_k = D_k U'_k (k = 1..N).
  [[nodiscard]] ComplexMatrix mixer(std::size_t k) const {
    if (uneven_.empty()) return mixers_.at(k - 1);
    return uneven_.at(k - 1).cast<Complex>().asDiagonal() * mixers_.at(k - 1);
  }

 private:
  std::vector<ComplexMatrix> mixers_;
  std::vector<RealVector> psi_;
  double lambda_ = 1.0;
  std::vector<RealVector> uneven_;
};

/// states[k] is the field at the phase-shifter column k (after P_k), with
/// states[0] the chip input. For backward traces states[N] is the injected
/// error and states[0] what exits at the input side.
struct PropagationTrace {
  std::vector<ComplexVector> states;

  [[nodiscard]] const ComplexVector& input_side() const { return states.front(); }
  [[nodiscard]] const ComplexVector& output_side() const { return states.back(); }
};

inline PropagationTrace forward(const ChipState& chip, const ComplexVector& a) {
  require_same_size(a.size(), chip.channels(), "chip forward input");
  PropagationTrace t;
  t.states.reserve(chip.layers() + 1);
  t.states.push_back(a);
  for (std::size_t k = 1; k <= chip.layers(); ++k) {
    ComplexVector next = chip.mixer(k) * t.states.back();
    t.states.push_back(chip.phase_column(k).cwiseProduct(next));
  }
  return t;
}

/// e_{k-1} = U_k^T P_k e_k, starting from e_N = e.
inline PropagationTrace backward(const ChipState& chip, const ComplexVector& e) {
  require_same_size(e.size(), chip.channels(), "chip backward input");
  const std::size_t n = chip.layers();
  PropagationTrace t;
  t.states.assign(n + 1, ComplexVector());
  t.states[n] = e;
  for (std::size_t k = n; k >= 1; --k) {
    const ComplexVector after_phase = chip.phase_column(k).cwiseProduct(t.states[k]);
    t.states[k - 1] = chip.mixer(k).transpose() * after_phase;
  }
  return t;
}

/// e = -j conj(o - o_t): the output error as injected light.
inline ComplexVector inject_error(const ComplexVector& o, const ComplexVector& o_t) {
  require_same_size(o.size(), o_t.size(), "inject_error");
  return -kJ * (o - o_t).conjugate();
}

inline ComplexMatrix chip_effective_matrix(const ChipState& chip) {
  const auto m = chip.channels();
  ComplexMatrix w(m, m);
  for (Eigen::Index c = 0; c < m; ++c) w.col(c) = forward(chip, ComplexVector::Unit(m, c)).output_side();
  return w;
}

/// Transfer matrix seen by light entering at the output side.
inline ComplexMatrix chip_backward_matrix(const ChipState& chip) {
  const auto m = chip.channels();
  ComplexMatrix w(m, m);
  for (Eigen::Index c = 0; c < m; ++c) w.col(c) = backward(chip, ComplexVector::Unit(m, c)).input_side();
  return w;
}

// ---------------------------------------------------------------------------
// Intensity-measurement gradients
// ---------------------------------------------------------------------------

/// How detected signals are rescaled before reuse.
enum class Renormalization {
  none,
  per_sample,    ///< rescale to the norm a lossless chip would deliver
  fixed_factor,  ///< multiply by lambda^-N
};

using LayerGradients = std::vector<RealVector>;

inline RealVector intensity(const ComplexVector& v) { return v.cwiseAbs2(); }

inline ComplexVector rescale(const ComplexVector& v, double reference_norm, const ChipState& chip,
                             Renormalization mode) {
  switch (mode) {
    case Renormalization::none:
      return v;
    case Renormalization::per_sample: {
      const double n = v.norm();
      return n > 0.0 ? ComplexVector(v * (reference_norm / n)) : v;
    }
    case Renormalization::fixed_factor:
      return v * std::pow(chip.loss_factor(), -double(chip.layers()));
  }
  return v;
}

/// Measurements from light entering at the input side: a, conj(e_0) and
/// h = a + conj(e_0), with e_0 the error after travelling back through the
/// chip. Returns g_k = -(I(h_k) - I(a_k) - I(e^_k)) for k = 1..N.
inline LayerGradients intensity_gradient_forwarddir(const ChipState& chip, const ComplexVector& a,
                                                    const ComplexVector& e,
                                                    Renormalization mode = Renormalization::none) {
  require_same_size(a.size(), chip.channels(), "gradient input");
  require_same_size(e.size(), chip.channels(), "gradient error");
  const ComplexVector e0 = rescale(backward(chip, e).input_side(), e.norm(), chip, mode);
  const ComplexVector e0_conj = e0.conjugate();
  const auto ta = forward(chip, a);
  const auto te = forward(chip, e0_conj);
  const auto th = forward(chip, a + e0_conj);
  LayerGradients g(chip.layers());
  for (std::size_t k = 1; k <= chip.layers(); ++k)
    g[k - 1] = -(intensity(th.states[k]) - intensity(ta.states[k]) - intensity(te.states[k]));
  return g;
}

/// Mirror image: light enters at the output side. conj(o) is sent back to
/// approximate conj(a_k); h' = e + conj(o).
inline LayerGradients intensity_gradient_backwarddir(const ChipState& chip, const ComplexVector& o,
                                                     const ComplexVector& e) {
  require_same_size(o.size(), chip.channels(), "gradient output");
  require_same_size(e.size(), chip.channels(), "gradient error");
  const ComplexVector o_conj = o.conjugate();
  const auto ta = backward(chip, o_conj);
  const auto te = backward(chip, e);
  const auto th = backward(chip, e + o_conj);
  LayerGradients g(chip.layers());
  for (std::size_t k = 1; k <= chip.layers(); ++k)
    g[k - 1] = -(intensity(th.states[k]) - intensity(ta.states[k]) - intensity(te.states[k]));
  return g;
}

inline LayerGradients averaged_gradient(const LayerGradients& forward_dir, const LayerGradients& backward_dir) {
  require(forward_dir.size() == backward_dir.size(), "gradient layer counts differ");
  LayerGradients out(forward_dir.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = 0.5 * (forward_dir[k] + backward_dir[k]);
  return out;
}

/// Both directions from one measured output o (already renormalized if
/// applicable) and its injected error e.
inline LayerGradients averaged_gradient(const ChipState& chip, const ComplexVector& a, const ComplexVector& o,
                                        const ComplexVector& e, Renormalization mode = Renormalization::none) {
  return averaged_gradient(intensity_gradient_forwarddir(chip, a, e, mode),
                           intensity_gradient_backwarddir(chip, o, e));
}

/// Exact dQ/dpsi from complex fields (no intensity approximation), valid for
/// any loss model: dQ/dpsi_km = -2 Re(a_km e_km) with e_k the true back-
/// propagated injected error.
inline LayerGradients exact_phase_gradient(const ChipState& chip, const ComplexVector& a, const ComplexVector& o_t) {
  const auto ta = forward(chip, a);
  const ComplexVector e = inject_error(ta.output_side(), o_t);
  const auto te = backward(chip, e);
  LayerGradients g(chip.layers());
  for (std::size_t k = 1; k <= chip.layers(); ++k)
    g[k - 1] = -2.0 * ta.states[k].cwiseProduct(te.states[k]).real();
  return g;
}

inline RealVector flatten(const LayerGradients& g) {
  Eigen::Index n = 0;
  for (const auto& v : g) n += v.size();
  RealVector out(n);
  Eigen::Index off = 0;
  for (const auto& v : g) {
    out.segment(off, v.size()) = v;
    off += v.size();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class MixerStyle { coupler_mesh, coupler_brick, random_unitary };

enum class LossScenario { ideal, uniform, uniform_bidirectional, uneven_bidirectional };

enum class Schedule { fixed, linear_decay };

inline std::string to_string(LossScenario s) {
  switch (s) {
    case LossScenario::ideal: return "ideal";
    case LossScenario::uniform: return "uniform";
    case LossScenario::uniform_bidirectional: return "uniform+bidirectional";
    case LossScenario::uneven_bidirectional: return "uneven+bidirectional";
  }
  return "?";
}

inline std::optional<LossScenario> parse_scenario(const std::string& s) {
  if (s == "ideal") return LossScenario::ideal;
  if (s == "uniform" || s == "lossy") return LossScenario::uniform;
  if (s == "uniform+bidirectional" || s == "uniform_bidirectional" || s == "lossy+bidirectional")
    return LossScenario::uniform_bidirectional;
  if (s == "uneven+bidirectional" || s == "uneven_bidirectional") return LossScenario::uneven_bidirectional;
  return std::nullopt;
}

inline constexpr double kPhaseWindow = 2.0 * kPi / 10.0;

struct ChipExperimentConfig {
  int channels = 8;
  int layers = 12;
  MixerStyle mixer = MixerStyle::coupler_mesh;
  /// 0 selects ceil(log2 M) + 1.
  int sublayers = 0;
  LossScenario scenario = LossScenario::ideal;
  /// Power lost per phase-shifter column (uniform model).
  double power_loss = 0.06;
  /// Extra per-waveguide power loss drawn uniformly from [0, uneven_max].
  double uneven_max = 0.01;
  long iterations = 5000;
  double eta = 0.05;
  Schedule schedule = Schedule::fixed;
  bool truncate_phases = false;
  Renormalization renormalization = Renormalization::per_sample;
  /// Held-out inputs for the final NRMSE.
  int eval_samples = 256;
  std::uint64_t seed = 1;
  /// Replaces the random unitary target when set.
  std::optional<ComplexMatrix> target;

  void validate() const {
    require(channels >= 2, "chip needs M >= 2");
    require(layers >= 1, "chip needs N >= 1");
    require(sublayers >= 0, "sublayers must be >= 0");
    require(power_loss >= 0.0 && power_loss < 1.0, "power_loss must lie in [0, 1)");
    require(uneven_max >= 0.0 && uneven_max < 1.0, "uneven_max must lie in [0, 1)");
    require(iterations >= 1, "iterations must be >= 1");
    require(eta >= 0.0 && std::isfinite(eta), "eta must be >= 0");
    require(eval_samples >= 1, "eval_samples must be >= 1");
    if (target) {
      require(target->rows() == channels && target->cols() == channels, "target must be M x M");
      require(all_finite(*target), "target must be finite");
    }
  }

  [[nodiscard]] bool lossy() const { return scenario != LossScenario::ideal; }
  [[nodiscard]] bool bidirectional() const {
    return scenario == LossScenario::uniform_bidirectional || scenario == LossScenario::uneven_bidirectional;
  }
};

/// Independent streams per purpose so scenarios that share a seed share the
/// mixers, the target and the input sequence.
struct ChipSeeds {
  RngSeed mixers, losses, target, samples, evaluation;

  static ChipSeeds derive(std::uint64_t seed) {
    std::seed_seq seq{std::uint32_t(seed & 0xffffffffu), std::uint32_t(seed >> 32), 0x5eedu};
    std::array<std::uint32_t, 10> w{};
    seq.generate(w.begin(), w.end());
    auto pick = [&](int i) { return RngSeed{(std::uint64_t(w[std::size_t(2 * i)]) << 32) | w[std::size_t(2 * i + 1)]}; };
    return {pick(0), pick(1), pick(2), pick(3), pick(4)};
  }
};

/// Mixers, losses and zero phases for a config.
inline ChipState build_chip(const ChipExperimentConfig& cfg) {
  cfg.validate();
  const ChipSeeds seeds = ChipSeeds::derive(cfg.seed);
  std::vector<ComplexMatrix> mixers;
  const int sub = cfg.sublayers ? cfg.sublayers : default_sublayers(cfg.channels);
  Rng rng(seeds.mixers);
  for (int k = 0; k < cfg.layers; ++k) {
    switch (cfg.mixer) {
      case MixerStyle::coupler_mesh: mixers.push_back(build_coupler_mesh(cfg.channels, sub, rng)); break;
      case MixerStyle::coupler_brick: mixers.push_back(build_coupler_brick(cfg.channels, sub)); break;
      case MixerStyle::random_unitary: mixers.push_back(rng.unitary(cfg.channels)); break;
    }
  }
  ChipState chip(std::move(mixers));
  if (cfg.lossy()) chip.set_loss_factor(std::sqrt(1.0 - cfg.power_loss));
  if (cfg.scenario == LossScenario::uneven_bidirectional) {
    Rng loss_rng(seeds.losses);
    std::vector<RealVector> d;
    for (int k = 0; k < cfg.layers; ++k) {
      RealVector v(cfg.channels);
      for (int i = 0; i < cfg.channels; ++i) v[i] = std::sqrt(1.0 - loss_rng.uniform(0.0, cfg.uneven_max));
      d.push_back(v);
    }
    chip.set_uneven_loss(std::move(d));
  }
  return chip;
}

inline ComplexMatrix build_target(const ChipExperimentConfig& cfg) {
  if (cfg.target) return *cfg.target;
  Rng rng(ChipSeeds::derive(cfg.seed).target);
  return rng.unitary(cfg.channels);
}

inline ComplexVector random_unit_vector(Rng& rng, Eigen::Index m) {
  ComplexVector a = rng.complex_vector(m);
  return a / a.norm();
}

/// Output as detected and rescaled (reference norm |a|).
inline ComplexVector measured_output(const ChipState& chip, const ComplexVector& a, Renormalization mode) {
  return rescale(forward(chip, a).output_side(), a.norm(), chip, mode);
}

inline double evaluate_nrmse(const ChipState& chip, const ComplexMatrix& target, const std::vector<ComplexVector>& inputs,
                             Renormalization mode) {
  std::vector<ComplexVector> outs, tgts;
  outs.reserve(inputs.size());
  tgts.reserve(inputs.size());
  for (const auto& a : inputs) {
    outs.push_back(measured_output(chip, a, mode));
    tgts.push_back(target * a);
  }
  return pooled_nrmse(outs, tgts);
}

inline std::vector<ComplexVector> evaluation_inputs(const ChipExperimentConfig& cfg) {
  Rng rng(ChipSeeds::derive(cfg.seed).evaluation);
  std::vector<ComplexVector> v;
  for (int n = 0; n < cfg.eval_samples; ++n) v.push_back(random_unit_vector(rng, cfg.channels));
  return v;
}

struct ChipIterationRow {
  long iteration = 0;
  double eta = 0.0;
  double nrmse = 0.0;
};

struct ChipTrainingRecord {
  std::vector<ChipIterationRow> rows;
  ComplexMatrix target;
  double initial_nrmse = 0.0;
  double final_nrmse = 0.0;
  /// Final NRMSE of the trained phases with the uneven losses removed.
  std::optional<double> lossless_reeval_nrmse;
  double phase_fraction_in_window = 0.0;
};

struct ChipTrainingResult {
  ChipState chip;
  ChipTrainingRecord record;
};

inline double fraction_in_window(const std::vector<RealVector>& psi, double bound = kPhaseWindow) {
  long inside = 0, total = 0;
  for (const auto& v : psi)
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      inside += std::abs(v[i]) <= bound;
      ++total;
    }
  return total ? double(inside) / double(total) : 1.0;
}

/// Gradient used by the training loop for one sample under a scenario.
inline LayerGradients scenario_gradient(const ChipState& chip, const ComplexVector& a, const ComplexVector& o_measured,
                                        const ComplexVector& e, bool bidirectional, Renormalization mode) {
  if (bidirectional) return averaged_gradient(chip, a, o_measured, e, mode);
  return intensity_gradient_forwarddir(chip, a, e, mode);
}

/// In-situ training: per iteration draw a unit-norm input, measure and
/// renormalize the output, inject -j conj(o - o_t), measure intensities,
/// and step psi <- psi - eta g.
inline ChipTrainingResult train_chip(const ChipExperimentConfig& cfg,
                                     std::function<void(const ChipIterationRow&)> on_row = {}) {
  cfg.validate();
  ChipState chip = build_chip(cfg);
  ChipTrainingRecord rec;
  rec.target = build_target(cfg);
  const auto eval = evaluation_inputs(cfg);
  const Renormalization mode = cfg.renormalization;
  rec.initial_nrmse = evaluate_nrmse(chip, rec.target, eval, mode);

  Rng samples(ChipSeeds::derive(cfg.seed).samples);
  std::vector<ComplexVector> outs, tgts;
  outs.reserve(std::size_t(cfg.iterations));
  tgts.reserve(std::size_t(cfg.iterations));

  for (long it = 0; it < cfg.iterations; ++it) {
    ChipIterationRow row;
    row.iteration = it;
    row.eta = cfg.schedule == Schedule::linear_decay ? cfg.eta * (1.0 - double(it) / double(cfg.iterations)) : cfg.eta;

    const ComplexVector a = random_unit_vector(samples, cfg.channels);
    const ComplexVector o_t = rec.target * a;
    const ComplexVector o = measured_output(chip, a, mode);
    const ComplexVector e = inject_error(o, o_t);
    outs.push_back(o);
    tgts.push_back(o_t);

    if (row.eta > 0.0) {
      const LayerGradients g = scenario_gradient(chip, a, o, e, cfg.bidirectional(), mode);
      auto& psi = chip.phases();
      for (std::size_t k = 0; k < psi.size(); ++k) {
        psi[k] -= row.eta * g[k];
        if (cfg.truncate_phases) psi[k] = psi[k].cwiseMax(-kPhaseWindow).cwiseMin(kPhaseWindow);
      }
    }
    rec.rows.push_back(row);
    if (on_row) on_row(row);
  }

  const auto per_sample = nrmse(outs, tgts);
  for (std::size_t n = 0; n < per_sample.size(); ++n) rec.rows[n].nrmse = per_sample[n];
  rec.final_nrmse = evaluate_nrmse(chip, rec.target, eval, mode);
  if (chip.has_uneven_loss())
    rec.lossless_reeval_nrmse = evaluate_nrmse(chip.without_uneven_loss(), rec.target, eval, mode);
  rec.phase_fraction_in_window = fraction_in_window(chip.phases());
  return {std::move(chip), std::move(rec)};
}

}  // namespace wavetrain::chip
