// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "wavetrain/core.hpp"

#include <numeric>
#include <vector>

namespace wavetrain {

/// Per-sample NRMSE: |o_n - t_n| / sqrt(mean_k |t_k|^2).
inline std::vector<double> nrmse(const std::vector<ComplexVector>& outputs,
                                 const std::vector<ComplexVector>& targets) {
  require_same_size(Eigen::Index(outputs.size()), Eigen::Index(targets.size()), "nrmse sample count");
  require(!targets.empty(), "nrmse needs at least one sample");
  double mean_sq = 0.0;
  for (std::size_t n = 0; n < targets.size(); ++n) {
    require_same_size(outputs[n].size(), targets[n].size(), "nrmse vector");
    mean_sq += targets[n].squaredNorm();
  }
  mean_sq /= double(targets.size());
  if (!(mean_sq > 0.0)) throw InvalidArgument("nrmse undefined: all targets are zero");
  const double norm = std::sqrt(mean_sq);

  std::vector<double> out(targets.size());
  for (std::size_t n = 0; n < targets.size(); ++n) out[n] = (outputs[n] - targets[n]).norm() / norm;
  return out;
}

inline double mean(const std::vector<double>& values) {
  require(!values.empty(), "mean of empty list");
  return std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
}

/// Root of the mean squared error over a batch, normalized the same way.
inline double pooled_nrmse(const std::vector<ComplexVector>& outputs,
                           const std::vector<ComplexVector>& targets) {
  const auto per_sample = nrmse(outputs, targets);
  double sq = 0.0;
  for (double v : per_sample) sq += v * v;
  return std::sqrt(sq / double(per_sample.size()));
}

}  // namespace wavetrain
