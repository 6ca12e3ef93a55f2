// SPDX-License-Identifier: Apache-2.0
//
// Config schemas for the two experiments, their CSV/JSON outputs and run
// manifests. The CLI is a thin shell over this header.

#pragma once

#include "wavetrain/chip.hpp"
#include "wavetrain/config.hpp"
#include "wavetrain/gradcheck.hpp"
#include "wavetrain/medium.hpp"

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#ifndef WAVETRAIN_VERSION
#define WAVETRAIN_VERSION "0.1.0"
#endif

namespace wavetrain::experiment {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

inline constexpr const char* kVersion = WAVETRAIN_VERSION;

// ---------------------------------------------------------------------------
// Text formatting
// ---------------------------------------------------------------------------

/// Scientific notation with 17 significant digits (round-trips a double).
inline std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.16e", v);
  return buf;
}

/// Shortest form that parses back to the same double, for config echoes.
inline std::string echo(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Ordered section -> (key, value) list; rendered as INI and as JSON.
class ResolvedConfig {
 public:
  void add(const std::string& section, const std::string& key, const std::string& value) {
    for (auto& [name, keys] : sections_)
      if (name == section) {
        keys.emplace_back(key, value);
        return;
      }
    sections_.push_back({section, {{key, value}}});
  }
  void add(const std::string& section, const std::string& key, double v) { add(section, key, echo(v)); }
  void add(const std::string& section, const std::string& key, long v) { add(section, key, std::to_string(v)); }
  void add(const std::string& section, const std::string& key, int v) { add(section, key, std::to_string(v)); }
  void add(const std::string& section, const std::string& key, std::uint64_t v) { add(section, key, std::to_string(v)); }
  void add(const std::string& section, const std::string& key, bool v) { add(section, key, std::string(v ? "true" : "false")); }

  [[nodiscard]] std::string ini() const {
    std::ostringstream os;
    for (std::size_t s = 0; s < sections_.size(); ++s) {
      if (s) os << '\n';
      os << '[' << sections_[s].first << "]\n";
      for (const auto& [k, v] : sections_[s].second) os << k << " = " << v << '\n';
    }
    return os.str();
  }
  [[nodiscard]] Json json() const {
    Json j = Json::object();
    for (const auto& [name, keys] : sections_) {
      Json s = Json::object();
      for (const auto& [k, v] : keys) s[k] = v;
      j[name] = s;
    }
    return j;
  }

 private:
  std::vector<std::pair<std::string, std::vector<std::pair<std::string, std::string>>>> sections_;
};

// ---------------------------------------------------------------------------
// Medium experiment schema
// ---------------------------------------------------------------------------

struct MediumRun {
  medium::MediumExperimentConfig cfg;
  int replicates = 1;
};

inline MediumRun read_medium_config(const config::Document& doc) {
  config::Schema s(doc);
  MediumRun run;
  auto& c = run.cfg;
  auto& l = c.layout;
  c.seed = s.required<std::uint64_t>("run", "seed");
  run.replicates = s.get<int>("run", "replicates", 1);
  s.check(run.replicates >= 1, "run", "replicates", "must be >= 1");

  l.h = s.get("grid", "h", l.h);
  l.nx = s.get("grid", "nx", l.nx);
  l.ny = s.get("grid", "ny", l.ny);
  l.band_cells = s.get("grid", "band_cells", l.band_cells);
  l.band_max_imag = s.get("grid", "band_max_imag_k0", l.band_max_imag / kK0) * kK0;
  l.k_background = s.get("grid", "k_background_k0", l.k_background / kK0) * kK0;
  s.check(l.h > 0.0, "grid", "h", "must be positive");
  s.check(l.band_cells >= 0, "grid", "band_cells", "must be >= 0");
  s.check(l.k_background > 0.0, "grid", "k_background_k0", "must be positive");

  l.n_emitters = s.get("transducers", "emitters", l.n_emitters);
  l.n_receivers = s.get("transducers", "receivers", l.n_receivers);
  l.spacing = s.get("transducers", "spacing", l.spacing);
  l.sigma = s.get("transducers", "sigma", l.sigma);
  s.check(l.n_emitters >= 1, "transducers", "emitters", "must be >= 1");
  s.check(l.n_receivers >= 1, "transducers", "receivers", "must be >= 1");
  s.check(l.sigma > 0.0, "transducers", "sigma", "must be positive");

  l.trainable_width = s.get("trainable", "width", l.trainable_width);
  l.trainable_height = s.get("trainable", "height", l.trainable_height);
  l.gap = s.get("trainable", "gap", l.gap);
  l.margin = s.get("trainable", "margin", l.margin);

  c.target_scale = s.get("target", "scale", c.target_scale);
  c.target_relative_to_initial = s.get("target", "relative_to_initial", c.target_relative_to_initial);
  s.check(c.target_scale > 0.0, "target", "scale", "must be positive");

  c.iterations = s.required<long>("training", "iterations");
  s.check(c.iterations >= 1, "training", "iterations", "must be >= 1");
  const auto mode = s.choice("training", "eta_mode", {"auto", "fixed"});
  c.eta_mode = mode && *mode == "fixed" ? medium::LearningRateMode::fixed_value : medium::LearningRateMode::auto_calibrated;
  if (c.eta_mode == medium::LearningRateMode::fixed_value) {
    c.eta0 = s.required<double>("training", "eta0");
    s.check(c.eta0 >= 0.0, "training", "eta0", "must be >= 0");
  } else {
    s.check(!doc.find("training", "eta0"), "training", "eta0", "is only allowed with eta_mode = fixed");
  }
  const auto sched = s.choice("training", "schedule", {"linear-decay", "fixed"});
  c.linear_decay = !sched || *sched == "linear-decay";
  c.calibrate_min_reduction = s.get("training", "calibrate_min_reduction", c.calibrate_min_reduction);
  c.calibrate_max_reduction = s.get("training", "calibrate_max_reduction", c.calibrate_max_reduction);
  s.check(c.calibrate_min_reduction > 0.0 && c.calibrate_min_reduction < c.calibrate_max_reduction &&
              c.calibrate_max_reduction < 1.0,
          "training", "calibrate_max_reduction", "must satisfy 0 < calibrate_min_reduction < calibrate_max_reduction < 1");
  const auto form = s.choice("training", "gradient_form", {"full", "proportional"});
  c.gradient_form = form && *form == "proportional" ? medium::GradientForm::proportional : medium::GradientForm::full;

  c.solver.rel_tolerance = s.get("solver", "rel_tolerance", c.solver.rel_tolerance);
  c.solver.max_iterations = s.get("solver", "max_iterations", c.solver.max_iterations);
  const auto pre = s.choice("solver", "preconditioner", {"none", "jacobi"});
  c.solver.preconditioner = pre && *pre == "jacobi" ? Preconditioner::jacobi : Preconditioner::none;
  s.check(c.solver.rel_tolerance > 0.0 && c.solver.rel_tolerance < 1.0, "solver", "rel_tolerance", "must lie in (0, 1)");
  s.check(c.solver.max_iterations >= 0, "solver", "max_iterations", "must be >= 0 (0 = automatic)");

  s.reject_unknown();
  c.validate();
  return run;
}

inline ResolvedConfig resolve(const MediumRun& run) {
  const auto& c = run.cfg;
  const auto& l = c.layout;
  ResolvedConfig r;
  r.add("run", "seed", std::uint64_t(c.seed));
  r.add("run", "replicates", run.replicates);
  r.add("grid", "h", l.h);
  r.add("grid", "nx", l.nx);
  r.add("grid", "ny", l.ny);
  r.add("grid", "band_cells", l.band_cells);
  r.add("grid", "band_max_imag_k0", l.band_max_imag / kK0);
  r.add("grid", "k_background_k0", l.k_background / kK0);
  r.add("transducers", "emitters", l.n_emitters);
  r.add("transducers", "receivers", l.n_receivers);
  r.add("transducers", "spacing", l.spacing);
  r.add("transducers", "sigma", l.sigma);
  r.add("trainable", "width", l.trainable_width);
  r.add("trainable", "height", l.trainable_height);
  r.add("trainable", "gap", l.gap);
  r.add("trainable", "margin", l.margin);
  r.add("target", "scale", c.target_scale);
  r.add("target", "relative_to_initial", c.target_relative_to_initial);
  r.add("training", "iterations", c.iterations);
  const bool fixed = c.eta_mode == medium::LearningRateMode::fixed_value;
  r.add("training", "eta_mode", std::string(fixed ? "fixed" : "auto"));
  if (fixed) r.add("training", "eta0", c.eta0);
  r.add("training", "schedule", std::string(c.linear_decay ? "linear-decay" : "fixed"));
  r.add("training", "calibrate_min_reduction", c.calibrate_min_reduction);
  r.add("training", "calibrate_max_reduction", c.calibrate_max_reduction);
  r.add("training", "gradient_form",
        std::string(c.gradient_form == medium::GradientForm::full ? "full" : "proportional"));
  r.add("solver", "rel_tolerance", c.solver.rel_tolerance);
  r.add("solver", "max_iterations", c.solver.max_iterations);
  r.add("solver", "preconditioner", std::string(c.solver.preconditioner == Preconditioner::jacobi ? "jacobi" : "none"));
  return r;
}

// ---------------------------------------------------------------------------
// Chip experiment schema
// ---------------------------------------------------------------------------

struct ChipRun {
  chip::ChipExperimentConfig cfg;
  int replicates = 1;
};

inline std::string to_string(chip::MixerStyle m) {
  switch (m) {
    case chip::MixerStyle::coupler_mesh: return "coupler-mesh";
    case chip::MixerStyle::coupler_brick: return "coupler-brick";
    case chip::MixerStyle::random_unitary: return "random-unitary";
  }
  return "?";
}

inline std::string to_string(chip::Renormalization r) {
  switch (r) {
    case chip::Renormalization::none: return "none";
    case chip::Renormalization::per_sample: return "per-sample";
    case chip::Renormalization::fixed_factor: return "fixed-factor";
  }
  return "?";
}

inline ChipRun read_chip_config(const config::Document& doc) {
  config::Schema s(doc);
  ChipRun run;
  auto& c = run.cfg;
  c.seed = s.required<std::uint64_t>("run", "seed");
  run.replicates = s.get<int>("run", "replicates", 1);
  s.check(run.replicates >= 1, "run", "replicates", "must be >= 1");

  c.channels = s.get("chip", "channels", c.channels);
  c.layers = s.get("chip", "layers", c.layers);
  s.check(c.channels >= 2, "chip", "channels", "must be >= 2");
  s.check(c.layers >= 1, "chip", "layers", "must be >= 1");
  const auto mixer = s.choice("chip", "mixer", {"coupler-mesh", "coupler-brick", "random-unitary"});
  if (mixer) {
    c.mixer = *mixer == "coupler-mesh"    ? chip::MixerStyle::coupler_mesh
              : *mixer == "coupler-brick" ? chip::MixerStyle::coupler_brick
                                          : chip::MixerStyle::random_unitary;
  }
  c.sublayers = s.get("chip", "sublayers", c.sublayers);
  s.check(c.sublayers >= 0, "chip", "sublayers", "must be >= 0 (0 = ceil(log2 M) + 1)");
  const auto scenario = s.choice("chip", "scenario",
                                 {"ideal", "uniform", "lossy", "uniform+bidirectional", "lossy+bidirectional",
                                  "uneven+bidirectional"});
  if (!scenario) throw config::ConfigError(doc.source() + ": missing required key 'scenario' in [chip]");
  c.scenario = *chip::parse_scenario(*scenario);
  c.power_loss = s.get("chip", "power_loss", c.power_loss);
  c.uneven_max = s.get("chip", "uneven_max", c.uneven_max);
  s.check(c.power_loss >= 0.0 && c.power_loss < 1.0, "chip", "power_loss", "must lie in [0, 1)");
  s.check(c.uneven_max >= 0.0 && c.uneven_max < 1.0, "chip", "uneven_max", "must lie in [0, 1)");
  const auto renorm = s.choice("chip", "renormalization", {"per-sample", "fixed-factor", "none"});
  if (renorm) {
    c.renormalization = *renorm == "per-sample"     ? chip::Renormalization::per_sample
                        : *renorm == "fixed-factor" ? chip::Renormalization::fixed_factor
                                                    : chip::Renormalization::none;
  }

  c.iterations = s.required<long>("training", "iterations");
  s.check(c.iterations >= 1, "training", "iterations", "must be >= 1");
  c.eta = s.required<double>("training", "eta");
  s.check(c.eta >= 0.0, "training", "eta", "must be >= 0");
  const auto sched = s.choice("training", "schedule", {"fixed", "linear-decay"});
  c.schedule = sched && *sched == "linear-decay" ? chip::Schedule::linear_decay : chip::Schedule::fixed;
  c.truncate_phases = s.get("training", "truncate_phases", c.truncate_phases);
  c.eval_samples = s.get("training", "eval_samples", c.eval_samples);
  s.check(c.eval_samples >= 1, "training", "eval_samples", "must be >= 1");

  s.reject_unknown();
  c.validate();
  return run;
}

inline ResolvedConfig resolve(const ChipRun& run) {
  const auto& c = run.cfg;
  ResolvedConfig r;
  r.add("run", "seed", std::uint64_t(c.seed));
  r.add("run", "replicates", run.replicates);
  r.add("chip", "channels", c.channels);
  r.add("chip", "layers", c.layers);
  r.add("chip", "mixer", to_string(c.mixer));
  r.add("chip", "sublayers", c.sublayers);
  r.add("chip", "scenario", chip::to_string(c.scenario));
  r.add("chip", "power_loss", c.power_loss);
  r.add("chip", "uneven_max", c.uneven_max);
  r.add("chip", "renormalization", to_string(c.renormalization));
  r.add("training", "iterations", c.iterations);
  r.add("training", "eta", c.eta);
  r.add("training", "schedule", std::string(c.schedule == chip::Schedule::linear_decay ? "linear-decay" : "fixed"));
  r.add("training", "truncate_phases", c.truncate_phases);
  r.add("training", "eval_samples", c.eval_samples);
  return r;
}

// ---------------------------------------------------------------------------
// Gradcheck schema
// ---------------------------------------------------------------------------

enum class CheckTarget { medium, chip };

struct GradcheckRun {
  CheckTarget target = CheckTarget::medium;
  gradcheck::MediumCheckConfig medium;
  gradcheck::ChipCheckConfig chip;
};

inline GradcheckRun read_gradcheck_config(const config::Document& doc) {
  config::Schema s(doc);
  GradcheckRun g;
  const auto t = s.choice("gradcheck", "target", {"medium", "chip"});
  if (!t) throw config::ConfigError(doc.source() + ": missing required key 'target' in [gradcheck]");
  g.target = *t == "chip" ? CheckTarget::chip : CheckTarget::medium;
  const auto seed = s.optional<std::uint64_t>("gradcheck", "seed");
  const bool flip = s.get("gradcheck", "flip_sign", false);
  if (seed) g.medium.seed = g.chip.seed = *seed;
  g.medium.flip_sign = g.chip.flip_sign = flip;

  g.medium.nx = s.get("gradcheck.medium", "nx", g.medium.nx);
  g.medium.ny = s.get("gradcheck.medium", "ny", g.medium.ny);
  g.medium.band_cells = s.get("gradcheck.medium", "band_cells", g.medium.band_cells);
  g.medium.sigma = s.get("gradcheck.medium", "sigma", g.medium.sigma);
  g.medium.tolerance = s.get("gradcheck.medium", "tolerance", g.medium.tolerance);
  g.medium.solver_tolerance = s.get("gradcheck.medium", "solver_tolerance", g.medium.solver_tolerance);
  s.check(g.medium.nx >= 3 && g.medium.ny >= 3, "gradcheck.medium", "nx", "grid must be at least 3x3");

  g.chip.channels = s.get("gradcheck.chip", "channels", g.chip.channels);
  g.chip.layers = s.get("gradcheck.chip", "layers", g.chip.layers);
  g.chip.tolerance = s.get("gradcheck.chip", "tolerance", g.chip.tolerance);
  s.check(g.chip.channels >= 2, "gradcheck.chip", "channels", "must be >= 2");
  s.check(g.chip.layers >= 1, "gradcheck.chip", "layers", "must be >= 1");
  s.reject_unknown();
  return g;
}

// ---------------------------------------------------------------------------
// Output files
// ---------------------------------------------------------------------------

inline std::ofstream open_output(const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw fs::filesystem_error("cannot write output file", path, std::make_error_code(std::errc::io_error));
  return os;
}

inline void write_matrix_csv(const fs::path& path, const ComplexMatrix& m) {
  auto os = open_output(path);
  os << "row,col,re,im\n";
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      os << r << ',' << c << ',' << num(m(r, c).real()) << ',' << num(m(r, c).imag()) << '\n';
}

template <typename Row>
void write_nrmse_csv(const fs::path& path, const std::vector<Row>& rows) {
  auto os = open_output(path);
  os << "iteration,eta,nrmse\n";
  for (const auto& r : rows) os << r.iteration << ',' << num(r.eta) << ',' << num(r.nrmse) << '\n';
}

inline void write_medium_csv(const fs::path& path, const MediumMap& m) {
  auto os = open_output(path);
  const auto& g = m.geometry();
  os << "i,j,x,y,k_real,k_imag,trainable\n";
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const auto idx = g.index(i, j);
      const Position p = g.position(i, j);
      os << i << ',' << j << ',' << num(p.x) << ',' << num(p.y) << ',' << num(m.k_real()[idx]) << ','
         << num(m.k_imag()[idx]) << ',' << (m.trainable(idx) ? 1 : 0) << '\n';
    }
}

inline void write_phases_csv(const fs::path& path, const std::vector<RealVector>& psi) {
  auto os = open_output(path);
  os << "layer,channel,psi\n";
  for (std::size_t k = 0; k < psi.size(); ++k)
    for (Eigen::Index i = 0; i < psi[k].size(); ++i) os << k + 1 << ',' << i << ',' << num(psi[k][i]) << '\n';
}

inline void write_text(const fs::path& path, const std::string& text) {
  auto os = open_output(path);
  os << text;
}

/// Mean of `values[first, last)`.
inline double window_mean(const std::vector<double>& values, std::size_t first, std::size_t last) {
  last = std::min(last, values.size());
  if (first >= last) return 0.0;
  double s = 0.0;
  for (std::size_t i = first; i < last; ++i) s += values[i];
  return s / double(last - first);
}

struct RunTimes {
  std::chrono::system_clock::time_point start = std::chrono::system_clock::now();
};

inline Json manifest_header(const std::string& command, const ResolvedConfig& resolved, std::uint64_t seed,
                            const RunTimes& t) {
  Json j;
  j["command"] = command;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["config"] = resolved.json();
  j["start_time"] = utc_timestamp(t.start);
  return j;
}

inline void finish_manifest(Json& j, const fs::path& dir, const std::vector<std::string>& files) {
  j["end_time"] = utc_timestamp(std::chrono::system_clock::now());
  Json out = Json::array();
  for (const auto& f : files) out.push_back((dir / f).string());
  out.push_back((dir / "manifest.json").string());
  j["outputs"] = out;
  write_text(dir / "manifest.json", j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

using Progress = std::function<void(const std::string&)>;

inline Json run_medium(const MediumRun& run, const fs::path& dir, const Progress& progress = {}) {
  RunTimes t;
  fs::create_directories(dir);
  const auto& cfg = run.cfg;
  const long step = std::max(1L, cfg.iterations / 10);
  auto result = medium::train_medium(cfg, [&](const medium::IterationRow& r) {
    if (progress && (r.iteration % step == 0 || r.iteration + 1 == cfg.iterations))
      progress("train-medium iteration " + std::to_string(r.iteration + 1) + "/" + std::to_string(cfg.iterations) +
               " |o-o_t| " + num(r.error_norm));
  });
  const auto& rec = result.record;
  const ComplexMatrix w = medium::effective_matrix(result.device, cfg.solver);

  write_nrmse_csv(dir / "nrmse.csv", rec.rows);
  write_medium_csv(dir / "medium_final.csv", result.device.medium());
  write_matrix_csv(dir / "w_effective.csv", w);
  write_matrix_csv(dir / "w_target.csv", rec.target);
  const ResolvedConfig resolved = resolve(run);
  write_text(dir / "config_resolved.ini", resolved.ini());

  std::vector<double> per_sample;
  for (const auto& r : rec.rows) per_sample.push_back(r.nrmse);
  const std::size_t n = per_sample.size(), win = std::min<std::size_t>(20, n);
  int retries = 0;
  for (const auto& r : rec.rows) retries += r.retries;

  Json j = manifest_header("train-medium", resolved, cfg.seed, t);
  Json res;
  res["eta0"] = rec.eta0;
  res["grid"] = {result.device.medium().geometry().nx, result.device.medium().geometry().ny};
  res["trainable_cells"] = result.device.medium().trainable_count();
  res["leading_mean_nrmse"] = window_mean(per_sample, 0, win);
  res["trailing_mean_nrmse"] = window_mean(per_sample, n - win, n);
  res["matrix_nrmse"] = (w - rec.target).norm() / rec.target.norm();
  res["max_relative_k_deviation"] = rec.final_max_relative_deviation;
  res["solver_retries"] = retries;
  j["results"] = res;
  finish_manifest(j, dir, {"nrmse.csv", "medium_final.csv", "w_effective.csv", "w_target.csv", "config_resolved.ini"});
  return j;
}

inline Json run_chip(const ChipRun& run, const fs::path& dir, const Progress& progress = {}) {
  RunTimes t;
  fs::create_directories(dir);
  const auto& cfg = run.cfg;
  const long step = std::max(1L, cfg.iterations / 10);
  auto result = chip::train_chip(cfg, [&](const chip::ChipIterationRow& r) {
    if (progress && (r.iteration % step == 0 || r.iteration + 1 == cfg.iterations))
      progress("train-chip iteration " + std::to_string(r.iteration + 1) + "/" + std::to_string(cfg.iterations));
  });
  const auto& rec = result.record;

  write_nrmse_csv(dir / "nrmse.csv", rec.rows);
  write_phases_csv(dir / "phases_final.csv", result.chip.phases());
  write_matrix_csv(dir / "chip_matrix.csv", chip::chip_effective_matrix(result.chip));
  write_matrix_csv(dir / "target_matrix.csv", rec.target);
  const ResolvedConfig resolved = resolve(run);
  write_text(dir / "config_resolved.ini", resolved.ini());

  Json j = manifest_header("train-chip", resolved, cfg.seed, t);
  Json res;
  res["initial_nrmse"] = rec.initial_nrmse;
  res["final_nrmse"] = rec.final_nrmse;
  if (rec.lossless_reeval_nrmse) res["lossless_reeval_nrmse"] = *rec.lossless_reeval_nrmse;
  res["phase_fraction_in_window"] = rec.phase_fraction_in_window;
  res["phase_window"] = chip::kPhaseWindow;
  j["results"] = res;
  finish_manifest(j, dir, {"nrmse.csv", "phases_final.csv", "chip_matrix.csv", "target_matrix.csv",
                           "config_resolved.ini"});
  return j;
}

inline gradcheck::CheckReport run_gradcheck(const GradcheckRun& g) {
  return g.target == CheckTarget::chip ? gradcheck::check_chip_gradient(g.chip)
                                       : gradcheck::check_medium_gradient(g.medium);
}

}  // namespace wavetrain::experiment
