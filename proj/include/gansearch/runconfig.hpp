// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "gansearch/search.hpp"
#include "gansearch/speed.hpp"

namespace gansearch {

/// Where latency samples come from: a measured CSV, or the synthetic oracle.
struct SpeedSource {
  std::optional<std::string> csv;  // absolute path once resolved
  OracleCoeffs oracle;
  double noise_std = 0.0;
  int64_t samples = 2000;
  uint64_t sample_seed = 7;
};

struct RunConfig {
  SearchConfig search;
  SpeedSource speed;
  SpeedTrainConfig speed_train;
  std::optional<std::string> speed_model;  // trained model file; trained on demand when absent
  int64_t finetune_iterations = 0;
  uint64_t eval_offset = 1u << 20;  // held-out image indices start here
  int64_t eval_samples = 64;
  std::string output_dir = "out";
};

/// Parses a JSON config. Missing keys take defaults, unknown keys and
/// out-of-range values are ConfigError. Relative paths are resolved against
/// `base_dir`.
RunConfig parse_run_config(const std::string& text, const std::string& base_dir);
RunConfig load_run_config(const std::string& path);
/// Canonical document with every key present; parse_run_config(to_json(c)) == c.
std::string run_config_to_json(const RunConfig& config);
std::string default_run_config_json();

}  // namespace gansearch
