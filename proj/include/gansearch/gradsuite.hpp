// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace gansearch {

struct GradSuiteEntry {
  std::string name;
  int trials = 0;
  int64_t coords = 0;
  double worst = 0.0;
};

struct GradSuiteReport {
  std::vector<GradSuiteEntry> entries;
  double worst() const;
};

struct GradSuiteOptions {
  uint64_t seed = 1234;
  int trials = 25;
  /// Minimum |pre-activation| at relu/abs inputs of the composed check.
  double kink_margin = 1e-4;
};

/// Central-difference checks at 64-bit of every primitive and of the
/// composed generator forward pass (masked widths, gated blocks, tanh head).
GradSuiteReport run_gradient_suite(const GradSuiteOptions& options = {});

}  // namespace gansearch
