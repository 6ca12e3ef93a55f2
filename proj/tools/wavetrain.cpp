// SPDX-License-Identifier: Apache-2.0
//
// wavetrain: train-medium | train-chip | gradcheck
//
// Exit codes: 0 success, 1 config or usage error, 2 numerical failure
// (including a failed gradient check).

#include "wavetrain/experiment.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

namespace {

using namespace wavetrain;
namespace ex = wavetrain::experiment;

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kNumericalError = 2;

std::mutex log_mutex;

void log(const std::string& line) {
  std::lock_guard lock(log_mutex);
  std::cerr << line << '\n';
}

struct Options {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::string target;
  bool quiet = false;
};

/// Runs `body(replicate, seed, dir)` for each replicate on up to `jobs`
/// threads. Replicate r uses seed + r and writes to out/replicate_r when
/// there is more than one.
template <typename Body>
void for_replicates(int replicates, int jobs, std::uint64_t seed, const ex::fs::path& out, Body body) {
  if (replicates == 1) {
    body(0, seed, out);
    return;
  }
  std::atomic<int> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (int r; (r = next++) < replicates;) {
      try {
        body(r, seed + std::uint64_t(r), out / ("replicate_" + std::to_string(r)));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min(jobs, replicates); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

int cmd_train_medium(const Options& o) {
  auto doc = config::Document::load(o.config);
  if (o.seed) doc.set("run", "seed", std::to_string(*o.seed));
  const ex::MediumRun run = ex::read_medium_config(doc);
  for_replicates(run.replicates, o.jobs, run.cfg.seed, o.out, [&](int, std::uint64_t seed, const ex::fs::path& dir) {
    ex::MediumRun r = run;
    r.cfg.seed = seed;
    const auto manifest = ex::run_medium(r, dir, o.quiet ? ex::Progress{} : ex::Progress(log));
    const auto& res = manifest["results"];
    log("train-medium seed " + std::to_string(seed) + ": eta0 " + ex::num(res["eta0"].get<double>()) +
        ", leading-20 NRMSE " + ex::num(res["leading_mean_nrmse"].get<double>()) + ", trailing-20 NRMSE " +
        ex::num(res["trailing_mean_nrmse"].get<double>()) + " -> " + dir.string());
  });
  return kOk;
}

int cmd_train_chip(const Options& o) {
  auto doc = config::Document::load(o.config);
  if (o.seed) doc.set("run", "seed", std::to_string(*o.seed));
  const ex::ChipRun run = ex::read_chip_config(doc);
  for_replicates(run.replicates, o.jobs, run.cfg.seed, o.out, [&](int, std::uint64_t seed, const ex::fs::path& dir) {
    ex::ChipRun r = run;
    r.cfg.seed = seed;
    const auto manifest = ex::run_chip(r, dir, o.quiet ? ex::Progress{} : ex::Progress(log));
    const auto& res = manifest["results"];
    std::string line = "train-chip seed " + std::to_string(seed) + ": final NRMSE " +
                       ex::num(res["final_nrmse"].get<double>());
    if (res.contains("lossless_reeval_nrmse"))
      line += ", without uneven losses " + ex::num(res["lossless_reeval_nrmse"].get<double>());
    log(line + " -> " + dir.string());
  });
  return kOk;
}

int cmd_gradcheck(const Options& o) {
  config::Document doc = o.config.empty() ? config::Document::parse_string("", "<defaults>")
                                          : config::Document::load(o.config);
  if (!o.target.empty()) doc.set("gradcheck", "target", o.target);
  if (o.seed) doc.set("gradcheck", "seed", std::to_string(*o.seed));
  const ex::GradcheckRun g = ex::read_gradcheck_config(doc);
  const auto r = ex::run_gradcheck(g);
  std::cout << "gradcheck " << (g.target == ex::CheckTarget::chip ? "chip" : "medium") << ": checked " << r.checked
            << ", max relative error " << ex::num(r.max_relative_error) << ", tolerance " << ex::num(r.tolerance)
            << ", scale " << ex::num(r.scale) << ", cosine " << ex::num(r.cosine) << " -> "
            << (r.passed() ? "PASS" : "FAIL") << '\n';
  return r.passed() ? kOk : kNumericalError;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trainable wave media: Helmholtz medium and photonic chip experiments"};
  app.set_version_flag("--version", std::string(ex::kVersion));
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool config_required) {
    auto* c = sub->add_option("--config", o.config, "Config file (INI)");
    if (config_required) c->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", o.seed, "Seed (overrides the config)");
    sub->add_flag("--quiet", o.quiet, "No progress output");
  };
  auto* medium = app.add_subcommand("train-medium", "Train a Helmholtz medium toward a target matrix");
  common(medium, true);
  medium->add_option("--out", o.out, "Output directory")->capture_default_str();
  medium->add_option("--jobs", o.jobs, "Parallel replicate runs")->check(CLI::PositiveNumber);

  auto* chip = app.add_subcommand("train-chip", "Train a layered photonic chip in situ");
  common(chip, true);
  chip->add_option("--out", o.out, "Output directory")->capture_default_str();
  chip->add_option("--jobs", o.jobs, "Parallel replicate runs")->check(CLI::PositiveNumber);

  auto* check = app.add_subcommand("gradcheck", "Finite-difference check of the medium or chip gradient");
  common(check, false);
  check->add_option("--target", o.target, "medium | chip (overrides the config)")
      ->check(CLI::IsMember({"medium", "chip"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*medium) return cmd_train_medium(o);
    if (*chip) return cmd_train_chip(o);
    return cmd_gradcheck(o);
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "output error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kNumericalError;
  }
}
