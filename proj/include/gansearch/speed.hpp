// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "gansearch/arch.hpp"
#include "gansearch/generator.hpp"

namespace gansearch {

enum class BlockKind { conv_stage, residual_block, upsample_stage };

const char* to_string(BlockKind kind);
/// Throws std::invalid_argument on an unknown name.
BlockKind block_kind_from_string(const std::string& name);

/// One measurable building block. Spatial sizes are the block's input;
/// convolutions use "same" padding (kernel / 2). Upsample stages double the
/// input before their convolution. Residual blocks map c_in -> c_out -> c_in
/// with two convolutions.
struct BlockConfig {
  BlockKind kind = BlockKind::conv_stage;
  int64_t c_in = 1;
  int64_t c_out = 1;
  int64_t h_in = 1;
  int64_t w_in = 1;
  int kernel = 1;
  int stride = 1;

  bool operator==(const BlockConfig&) const = default;
  /// Throws std::invalid_argument unless every dimension is >= 1 and stride is 1 or 2.
  void validate() const;
};

struct LatencySample {
  BlockConfig config;
  double latency_ms = 0.0;

  bool operator==(const LatencySample&) const = default;
};

int64_t block_macs(const BlockConfig& c);
/// Elements read and written: input + output + weights.
int64_t bytes_moved(const BlockConfig& c);

struct OracleCoeffs {
  double c0 = 0.02;  // ms per block
  double c1 = 4e-8;  // ms per MAC
  double c2 = 2e-8;  // ms per element moved
};

/// c0 + c1 * MACs + c2 * bytes, times (1 + eps) with eps ~ N(0, noise_std)
/// resampled until eps > -0.5.
LatencySample synth_latency_oracle(const BlockConfig& config, const OracleCoeffs& coeffs, double noise_std,
                                   uint64_t seed);

/// Configuration ranges for synthetic benchmarks.
struct BenchSpace {
  int64_t max_channels = 128;
  std::vector<int64_t> sizes = {8, 16, 32};
  std::vector<int> conv_kernels = {3, 7};
};

std::vector<BlockConfig> sample_block_configs(size_t count, const BenchSpace& space, uint64_t seed);
/// Oracle samples for `configs`; sample i uses its own derived seed.
std::vector<LatencySample> synth_latency_dataset(const std::vector<BlockConfig>& configs, const OracleCoeffs& coeffs,
                                                 double noise_std, uint64_t seed);

class CsvError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr const char* kLatencyCsvHeader = "block_kind,c_in,c_out,h_in,w_in,kernel,stride,latency_ms";

/// Errors are CsvError with "<source>:<line>: ..." messages.
std::vector<LatencySample> parse_latency_csv(std::istream& in, const std::string& source);
std::vector<LatencySample> ingest_latency_csv(const std::string& path);
/// Latencies are written with 17 significant digits so reading back is exact.
void write_latency_csv(std::ostream& out, const std::vector<LatencySample>& samples);
void write_latency_csv(const std::string& path, const std::vector<LatencySample>& samples);

struct SpeedTrainConfig {
  double split = 0.8;  // training fraction
  int epochs = 300;
  double lr = 3e-3;
  uint64_t seed = 0;
  int hidden_layers = 3;
  int hidden_units = 64;
  int batch_size = 32;
};

class InsufficientDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// MLP latency regressor over standardized block features:
/// one-hot kind, then log c_in, c_out, h_in, w_in, kernel, stride.
struct SpeedModel {
  static constexpr int kFeatures = 9;

  std::vector<double> feature_mean;
  std::vector<double> feature_std;
  std::vector<Tensor<double>> weights;  // layer l: out x in
  std::vector<Tensor<double>> biases;
  double heldout_mean_rel_err = 0.0;
  int64_t train_samples = 0;
  int64_t heldout_samples = 0;

  bool trained() const { return !weights.empty(); }
  bool operator==(const SpeedModel&) const = default;
};

/// Trains on log-latency with squared error. Deterministic given config.seed.
SpeedModel train_speed_model(const std::vector<LatencySample>& samples, const SpeedTrainConfig& config);

/// Raw feature vector (before standardization).
std::vector<double> block_features(BlockKind kind, double c_in, double c_out, double h_in, double w_in, double kernel,
                                   double stride);

double predict_block_latency(const SpeedModel& model, const BlockConfig& config);
std::vector<double> predict_block_latency(const SpeedModel& model, const std::vector<BlockConfig>& configs);
/// Mean of |pred - true| / true.
double mean_relative_error(const SpeedModel& model, const std::vector<LatencySample>& samples);

/// Channel counts as 1-element Vars, so latency is differentiable in width.
template <typename T>
struct TapeBlock {
  BlockKind kind = BlockKind::conv_stage;
  Var<T> c_in;
  Var<T> c_out;
  int64_t h_in = 1;
  int64_t w_in = 1;
  int kernel = 1;
  int stride = 1;
};

/// Predicted latency (1-element Var). Throws std::logic_error on an untrained model.
template <typename T>
Var<T> predict_block_latency(const SpeedModel& model, Tape<T>& tape, const TapeBlock<T>& block);

/// Blocks of a described network in execution order: encoder stages, active
/// residual blocks, upsample stages, output stage.
std::vector<BlockConfig> block_configs(const ArchDescriptor& arch);
/// Sum of block predictions.
double predicted_latency(const SpeedModel& model, const ArchDescriptor& arch);

template <typename T>
struct LatencyEstimate {
  Var<T> total;               // T_pred
  std::vector<Var<T>> parts;  // per block, gate factor applied
};

/// T_pred of the architecture selected by `arch`: every block's prediction at
/// widths sum_j b_j, residual blocks weighted by beta2. Blocks whose widths
/// are not masked contribute constants.
template <typename T>
LatencyEstimate<T> estimate_latency(const Generator<T>& g, const ArchInputs<T>& arch, Tape<T>& tape,
                                    const SpeedModel& model);

/// weight * max(0, t_pred - budget_ms).
template <typename T>
Var<T> latency_hinge(Var<T> t_pred, double budget_ms, double weight);

template <typename T>
struct LatencyLoss {
  Var<T> t_pred;
  Var<T> loss;
};

template <typename T>
LatencyLoss<T> model_latency_loss(const Generator<T>& g, const ArchInputs<T>& arch, Tape<T>& tape,
                                  const SpeedModel& model, double budget_ms, double weight);

std::string speed_model_to_json(const SpeedModel& model);
SpeedModel speed_model_from_json(const std::string& text);
void save_speed_model(const SpeedModel& model, const std::string& path);
SpeedModel load_speed_model(const std::string& path);

}  // namespace gansearch
