// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "gansearch/tape.hpp"

namespace gansearch {

/// Builds a scalar on the given tape from leaves bound to the check point.
using ScalarProgram = std::function<Var<double>(Tape<double>&, std::span<const Var<double>>)>;

struct GradCheckOptions {
  double eps = 1e-5;
  /// 0 checks every coordinate; otherwise a seeded random subset per tensor.
  int64_t max_coords_per_tensor = 0;
  uint64_t seed = 0;
  /// Tensors excluded from perturbation (still passed to the program).
  std::vector<bool> skip;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  int64_t coords_checked = 0;
  size_t worst_tensor = 0;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// |analytic - numeric| / max(1e-12, |analytic| + |numeric|)
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients of `program` at `point` against central
/// differences (f(x+eps) - f(x-eps)) / (2 eps), coordinate by coordinate.
GradCheckResult finite_diff_check(const ScalarProgram& program, const std::vector<Tensor<double>>& point,
                                  const GradCheckOptions& options = {});

}  // namespace gansearch
