// SPDX-License-Identifier: Apache-2.0
#include "gansearch/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace gansearch {
namespace {

double evaluate(const ScalarProgram& program, const std::vector<Tensor<double>>& point) {
  Tape<double> tape;
  std::vector<Var<double>> leaves;
  leaves.reserve(point.size());
  for (const auto& p : point) leaves.push_back(tape.leaf(p, false));
  return program(tape, leaves).value().item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1e-12, std::abs(analytic) + std::abs(numeric));
}

GradCheckResult finite_diff_check(const ScalarProgram& program, const std::vector<Tensor<double>>& point,
                                  const GradCheckOptions& options) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> leaves;
    for (const auto& p : point) leaves.push_back(tape.leaf(p, true));
    Var<double> out = program(tape, leaves);
    tape.backward(out);
    for (const auto& leaf : leaves) analytic.push_back(tape.grad(leaf));
  }

  GradCheckResult result;
  std::mt19937_64 rng(options.seed);
  std::vector<Tensor<double>> probe = point;
  for (size_t ti = 0; ti < point.size(); ++ti) {
    if (ti < options.skip.size() && options.skip[ti]) continue;
    const int64_t n = point[ti].numel();
    std::vector<int64_t> coords(static_cast<size_t>(n));
    std::iota(coords.begin(), coords.end(), 0);
    if (options.max_coords_per_tensor > 0 && n > options.max_coords_per_tensor) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(options.max_coords_per_tensor));
      std::sort(coords.begin(), coords.end());
    }
    for (int64_t idx : coords) {
      const double x0 = point[ti][idx];
      probe[ti][idx] = x0 + options.eps;
      const double fp = evaluate(program, probe);
      probe[ti][idx] = x0 - options.eps;
      const double fm = evaluate(program, probe);
      probe[ti][idx] = x0;
      const double numeric = (fp - fm) / (2.0 * options.eps);
      const double err = relative_error(analytic[ti][idx], numeric);
      ++result.coords_checked;
      if (err > result.max_rel_error || result.worst_index < 0) {
        result.max_rel_error = std::max(result.max_rel_error, err);
        if (err >= result.max_rel_error) {
          result.worst_tensor = ti;
          result.worst_index = idx;
          result.worst_analytic = analytic[ti][idx];
          result.worst_numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace gansearch
