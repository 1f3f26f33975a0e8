// SPDX-License-Identifier: Apache-2.0
#include "gansearch/speed.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "gansearch/ops.hpp"
#include "gansearch/optim.hpp"
#include "gansearch/rng.hpp"
#include "json.hpp"

namespace gansearch {
namespace {

using Json = nlohmann::ordered_json;

constexpr const char* kColumns[] = {"block_kind", "c_in", "c_out", "h_in", "w_in", "kernel", "stride", "latency_ms"};
constexpr size_t kColumnCount = 8;

int64_t same_out(int64_t in, int kernel, int stride) { return ops::conv_out_size(in, kernel, stride, kernel / 2); }

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

template <typename V>
bool parse_number(const std::string& s, V& out) {
  const char* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc() && ptr == end && !s.empty();
}

void check_header(const std::string& line, const std::string& source) {
  const auto fields = split_fields(line);
  const std::string where = source + ":1: ";
  for (const char* col : kColumns) {
    if (std::find(fields.begin(), fields.end(), col) == fields.end()) {
      throw CsvError(where + "header missing column '" + col + "'");
    }
  }
  for (const auto& f : fields) {
    if (std::find(std::begin(kColumns), std::end(kColumns), f) == std::end(kColumns)) {
      throw CsvError(where + "header has unexpected column '" + f + "'");
    }
  }
  if (line != kLatencyCsvHeader) {
    throw CsvError(where + "header must be exactly '" + std::string(kLatencyCsvHeader) + "'");
  }
}

void require_trained(const SpeedModel& model) {
  if (!model.trained()) throw std::logic_error("speed model is not trained");
  if (model.feature_mean.size() != SpeedModel::kFeatures || model.feature_std.size() != SpeedModel::kFeatures) {
    throw std::logic_error("speed model has malformed feature statistics");
  }
}

/// Batched MLP on a tape: x is N x kFeatures (already standardized).
template <typename T>
Var<T> mlp_forward(Var<T> x, const std::vector<Var<T>>& w, const std::vector<Var<T>>& b) {
  Var<T> a = x;
  for (size_t l = 0; l < w.size(); ++l) {
    a = ops::dense(a, w[l], b[l]);
    if (l + 1 < w.size()) a = ops::relu(a);
  }
  return ops::softplus(a);
}

std::vector<double> standardize(const SpeedModel& m, std::vector<double> f) {
  for (size_t i = 0; i < f.size(); ++i) f[i] = (f[i] - m.feature_mean[i]) * (1.0 / m.feature_std[i]);
  return f;
}

Json tensor_json(const Tensor<double>& t) { return {{"shape", t.shape()}, {"data", t.storage()}}; }

Tensor<double> tensor_from(const Json& j, const std::string& where) {
  try {
    return Tensor<double>(j.at("shape").get<Shape>(), j.at("data").get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(where + ": " + e.what());
  }
}

}  // namespace

const char* to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::conv_stage:
      return "conv_stage";
    case BlockKind::residual_block:
      return "residual_block";
    case BlockKind::upsample_stage:
      return "upsample_stage";
  }
  return "?";
}

BlockKind block_kind_from_string(const std::string& name) {
  if (name == "conv_stage") return BlockKind::conv_stage;
  if (name == "residual_block") return BlockKind::residual_block;
  if (name == "upsample_stage") return BlockKind::upsample_stage;
  throw std::invalid_argument("unknown block_kind '" + name + "'");
}

void BlockConfig::validate() const {
  if (c_in < 1 || c_out < 1 || h_in < 1 || w_in < 1 || kernel < 1) {
    throw std::invalid_argument("block dimensions must be >= 1");
  }
  if (stride != 1 && stride != 2) throw std::invalid_argument("stride must be 1 or 2, got " + std::to_string(stride));
}

int64_t block_macs(const BlockConfig& c) {
  const int64_t k2 = int64_t(c.kernel) * c.kernel;
  switch (c.kind) {
    case BlockKind::conv_stage:
      return c.c_out * c.c_in * k2 * same_out(c.h_in, c.kernel, c.stride) * same_out(c.w_in, c.kernel, c.stride);
    case BlockKind::residual_block:
      return 2 * c.c_in * c.c_out * k2 * c.h_in * c.w_in;
    case BlockKind::upsample_stage:
      return c.c_out * c.c_in * k2 * same_out(2 * c.h_in, c.kernel, c.stride) *
             same_out(2 * c.w_in, c.kernel, c.stride);
  }
  return 0;
}

int64_t bytes_moved(const BlockConfig& c) {
  const int64_t k2 = int64_t(c.kernel) * c.kernel;
  const int64_t input = c.c_in * c.h_in * c.w_in;
  switch (c.kind) {
    case BlockKind::conv_stage:
      return input + c.c_out * same_out(c.h_in, c.kernel, c.stride) * same_out(c.w_in, c.kernel, c.stride) +
             c.c_out * c.c_in * k2;
    case BlockKind::residual_block:
      return 2 * input + 2 * c.c_in * c.c_out * k2;
    case BlockKind::upsample_stage:
      return input +
             c.c_out * same_out(2 * c.h_in, c.kernel, c.stride) * same_out(2 * c.w_in, c.kernel, c.stride) +
             c.c_out * c.c_in * k2;
  }
  return 0;
}

LatencySample synth_latency_oracle(const BlockConfig& config, const OracleCoeffs& coeffs, double noise_std,
                                   uint64_t seed) {
  config.validate();
  if (!(coeffs.c0 > 0) || coeffs.c1 < 0 || coeffs.c2 < 0) {
    throw std::invalid_argument("oracle coefficients must satisfy c0 > 0, c1 >= 0, c2 >= 0");
  }
  if (noise_std < 0) throw std::invalid_argument("noise_std must be >= 0");
  double latency = coeffs.c0 + coeffs.c1 * double(block_macs(config)) + coeffs.c2 * double(bytes_moved(config));
  if (noise_std > 0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, noise_std);
    double eps = dist(rng);
    while (eps <= -0.5) eps = dist(rng);
    latency *= 1.0 + eps;
  }
  return {config, latency};
}

std::vector<BlockConfig> sample_block_configs(size_t count, const BenchSpace& space, uint64_t seed) {
  if (space.max_channels < 1 || space.sizes.empty() || space.conv_kernels.empty()) {
    throw std::invalid_argument("bench space is empty");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> kind_dist(0, 2);
  std::uniform_real_distribution<double> log_ch(0.0, std::log(double(space.max_channels) + 1.0));
  std::uniform_int_distribution<size_t> size_dist(0, space.sizes.size() - 1);
  std::uniform_int_distribution<size_t> kernel_dist(0, space.conv_kernels.size() - 1);
  std::uniform_int_distribution<int> stride_dist(1, 2);
  auto channels = [&] {
    return std::clamp<int64_t>(static_cast<int64_t>(std::exp(log_ch(rng))), 1, space.max_channels);
  };
  std::vector<BlockConfig> out;
  out.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    BlockConfig c;
    c.kind = static_cast<BlockKind>(kind_dist(rng));
    c.c_in = channels();
    c.c_out = channels();
    c.h_in = c.w_in = space.sizes[size_dist(rng)];
    if (c.kind == BlockKind::conv_stage) {
      c.kernel = space.conv_kernels[kernel_dist(rng)];
      c.stride = stride_dist(rng);
    } else {
      c.kernel = kBlockKernel;
      c.stride = 1;
    }
    out.push_back(c);
  }
  return out;
}

std::vector<LatencySample> synth_latency_dataset(const std::vector<BlockConfig>& configs, const OracleCoeffs& coeffs,
                                                 double noise_std, uint64_t seed) {
  std::vector<LatencySample> out;
  out.reserve(configs.size());
  for (size_t i = 0; i < configs.size(); ++i) {
    out.push_back(synth_latency_oracle(configs[i], coeffs, noise_std, derive_seed(seed, i)));
  }
  return out;
}

std::vector<LatencySample> parse_latency_csv(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw CsvError(source + ":1: empty file, expected header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  check_header(line, source);
  std::vector<LatencySample> out;
  for (size_t lineno = 2; std::getline(in, line); ++lineno) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(lineno) + ": ";
    const auto f = split_fields(line);
    if (f.size() != kColumnCount) {
      throw CsvError(where + "expected " + std::to_string(kColumnCount) + " columns, got " + std::to_string(f.size()));
    }
    LatencySample s;
    try {
      s.config.kind = block_kind_from_string(f[0]);
    } catch (const std::invalid_argument& e) {
      throw CsvError(where + e.what());
    }
    int64_t* ints[] = {&s.config.c_in, &s.config.c_out, &s.config.h_in, &s.config.w_in};
    for (size_t i = 0; i < 4; ++i) {
      if (!parse_number(f[i + 1], *ints[i])) throw CsvError(where + kColumns[i + 1] + " is not an integer: '" + f[i + 1] + "'");
    }
    if (!parse_number(f[5], s.config.kernel)) throw CsvError(where + "kernel is not an integer: '" + f[5] + "'");
    if (!parse_number(f[6], s.config.stride)) throw CsvError(where + "stride is not an integer: '" + f[6] + "'");
    if (!parse_number(f[7], s.latency_ms)) throw CsvError(where + "latency_ms is not a number: '" + f[7] + "'");
    if (!(s.latency_ms > 0) || !std::isfinite(s.latency_ms)) {
      throw CsvError(where + "latency_ms must be positive, got " + f[7]);
    }
    try {
      s.config.validate();
    } catch (const std::invalid_argument& e) {
      throw CsvError(where + e.what());
    }
    out.push_back(s);
  }
  return out;
}

std::vector<LatencySample> ingest_latency_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw CsvError(path + ": cannot open");
  return parse_latency_csv(in, path);
}

void write_latency_csv(std::ostream& out, const std::vector<LatencySample>& samples) {
  out << kLatencyCsvHeader << '\n';
  char buf[64];
  for (const auto& s : samples) {
    auto res = std::to_chars(buf, buf + sizeof buf, s.latency_ms);
    out << to_string(s.config.kind) << ',' << s.config.c_in << ',' << s.config.c_out << ',' << s.config.h_in << ','
        << s.config.w_in << ',' << s.config.kernel << ',' << s.config.stride << ',' << std::string(buf, res.ptr)
        << '\n';
  }
}

void write_latency_csv(const std::string& path, const std::vector<LatencySample>& samples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  write_latency_csv(out, samples);
  if (!out) throw std::runtime_error("failed writing " + path);
}

std::vector<double> block_features(BlockKind kind, double c_in, double c_out, double h_in, double w_in, double kernel,
                                   double stride) {
  std::vector<double> f(SpeedModel::kFeatures, 0.0);
  f[static_cast<size_t>(kind)] = 1.0;
  f[3] = std::log(c_in);
  f[4] = std::log(c_out);
  f[5] = std::log(h_in);
  f[6] = std::log(w_in);
  f[7] = std::log(kernel);
  f[8] = std::log(stride);
  return f;
}

namespace {

std::vector<double> raw_features(const BlockConfig& c) {
  return block_features(c.kind, double(c.c_in), double(c.c_out), double(c.h_in), double(c.w_in), double(c.kernel),
                        double(c.stride));
}

Tensor<double> feature_matrix(const SpeedModel& m, const std::vector<BlockConfig>& configs) {
  const int64_t nf = SpeedModel::kFeatures;
  Tensor<double> x({int64_t(configs.size()), nf});
  for (size_t i = 0; i < configs.size(); ++i) {
    const auto f = standardize(m, raw_features(configs[i]));
    std::copy(f.begin(), f.end(), x.ptr() + int64_t(i) * nf);
  }
  return x;
}

}  // namespace

SpeedModel train_speed_model(const std::vector<LatencySample>& samples, const SpeedTrainConfig& config) {
  if (samples.size() < 100) {
    throw InsufficientDataError("speed model needs at least 100 samples, got " + std::to_string(samples.size()));
  }
  if (!(config.split > 0 && config.split < 1)) throw std::invalid_argument("split must be in (0, 1)");
  if (config.epochs < 0 || !(config.lr > 0) || config.hidden_layers < 1 || config.hidden_units < 1 ||
      config.batch_size < 1) {
    throw std::invalid_argument("invalid speed-model hyperparameters");
  }
  for (const auto& s : samples) {
    s.config.validate();
    if (!(s.latency_ms > 0)) throw std::invalid_argument("latency_ms must be positive");
  }

  const size_t n = samples.size();
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), size_t{0});
  std::mt19937_64 split_rng(derive_seed(config.seed, 0));
  std::shuffle(order.begin(), order.end(), split_rng);
  const size_t n_train = std::clamp<size_t>(size_t(std::llround(config.split * double(n))), 1, n - 1);
  const std::vector<size_t> train_idx(order.begin(), order.begin() + std::ptrdiff_t(n_train));
  const std::vector<size_t> held_idx(order.begin() + std::ptrdiff_t(n_train), order.end());

  SpeedModel model;
  const int nf = SpeedModel::kFeatures;
  model.feature_mean.assign(nf, 0.0);
  model.feature_std.assign(nf, 0.0);
  std::vector<std::vector<double>> feats(n);
  for (size_t i = 0; i < n; ++i) feats[i] = raw_features(samples[i].config);
  for (size_t i : train_idx) {
    for (int k = 0; k < nf; ++k) model.feature_mean[k] += feats[i][k];
  }
  for (auto& m : model.feature_mean) m /= double(n_train);
  for (size_t i : train_idx) {
    for (int k = 0; k < nf; ++k) model.feature_std[k] += std::pow(feats[i][k] - model.feature_mean[k], 2);
  }
  for (auto& s : model.feature_std) {
    s = std::sqrt(s / double(n_train));
    if (s < 1e-12) s = 1.0;
  }
  for (auto& f : feats) f = standardize(model, f);

  double mean_log = 0;
  for (size_t i : train_idx) mean_log += std::log(samples[i].latency_ms);
  mean_log /= double(n_train);

  std::mt19937_64 init_rng(derive_seed(config.seed, 1));
  std::vector<Param<double>> params;
  int64_t fan_in = nf;
  for (int l = 0; l <= config.hidden_layers; ++l) {
    const bool last = l == config.hidden_layers;
    const int64_t fan_out = last ? 1 : config.hidden_units;
    std::normal_distribution<double> dist(0.0, std::sqrt((last ? 1.0 : 2.0) / double(fan_in)));
    Tensor<double> w({fan_out, fan_in});
    for (auto& v : w.data()) v = dist(init_rng);
    if (last) w.fill(0.0);
    Tensor<double> b({fan_out}, 0.0);
    // softplus(b) = exp(mean log-latency) at init
    if (last) b[0] = std::log(std::expm1(std::exp(mean_log)));
    params.push_back({"w" + std::to_string(l), std::move(w), false});
    params.push_back({"b" + std::to_string(l), std::move(b), false});
    fan_in = fan_out;
  }
  std::vector<Param<double>*> group;
  for (auto& p : params) group.push_back(&p);
  Adam<double> adam(group, AdamConfig{});

  std::mt19937_64 batch_rng(derive_seed(config.seed, 2));
  std::vector<size_t> epoch_order = train_idx;
  const size_t bs = size_t(config.batch_size);
  const size_t batches = (n_train + bs - 1) / bs;
  const double total_steps = double(batches) * config.epochs;
  double step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(epoch_order.begin(), epoch_order.end(), batch_rng);
    for (size_t start = 0; start < n_train; start += bs) {
      const size_t end = std::min(n_train, start + bs);
      const int64_t rows = int64_t(end - start);
      Tensor<double> x({rows, nf});
      Tensor<double> y({rows, 1});
      for (int64_t r = 0; r < rows; ++r) {
        const size_t i = epoch_order[start + size_t(r)];
        std::copy(feats[i].begin(), feats[i].end(), x.ptr() + r * nf);
        y[r] = std::log(samples[i].latency_ms);
      }
      Tape<double> tape;
      std::vector<Var<double>> w, b;
      for (size_t p = 0; p < params.size(); p += 2) {
        w.push_back(tape.leaf(params[p].value, true));
        b.push_back(tape.leaf(params[p + 1].value, true));
      }
      Var<double> pred = mlp_forward(tape.constant(std::move(x)), w, b);
      Var<double> loss = ops::mean(ops::square(ops::sub(ops::log(pred), tape.constant(std::move(y)))));
      tape.backward(loss);
      std::vector<Tensor<double>> grads;
      for (size_t l = 0; l < w.size(); ++l) {
        grads.push_back(tape.grad(w[l]));
        grads.push_back(tape.grad(b[l]));
      }
      const double lr = config.lr * 0.5 * (1.0 + std::cos(M_PI * step / total_steps));
      adam.step(group, grads, lr);
      step += 1;
    }
  }

  for (size_t p = 0; p < params.size(); p += 2) {
    model.weights.push_back(params[p].value);
    model.biases.push_back(params[p + 1].value);
  }
  model.train_samples = int64_t(n_train);
  model.heldout_samples = int64_t(held_idx.size());
  std::vector<LatencySample> held;
  for (size_t i : held_idx) held.push_back(samples[i]);
  model.heldout_mean_rel_err = mean_relative_error(model, held);
  return model;
}

std::vector<double> predict_block_latency(const SpeedModel& model, const std::vector<BlockConfig>& configs) {
  require_trained(model);
  if (configs.empty()) return {};
  for (const auto& c : configs) c.validate();
  Tape<double> tape;
  std::vector<Var<double>> w, b;
  for (size_t l = 0; l < model.weights.size(); ++l) {
    w.push_back(tape.constant(model.weights[l]));
    b.push_back(tape.constant(model.biases[l]));
  }
  const Tensor<double>& pred = mlp_forward(tape.constant(feature_matrix(model, configs)), w, b).value();
  return {pred.data().begin(), pred.data().end()};
}

double predict_block_latency(const SpeedModel& model, const BlockConfig& config) {
  config.validate();
  Tape<double> tape;
  TapeBlock<double> block{config.kind,   tape.constant(Tensor<double>::scalar(double(config.c_in))),
                          tape.constant(Tensor<double>::scalar(double(config.c_out))),
                          config.h_in,   config.w_in,
                          config.kernel, config.stride};
  return predict_block_latency(model, tape, block).value().item();
}

double mean_relative_error(const SpeedModel& model, const std::vector<LatencySample>& samples) {
  if (samples.empty()) return 0.0;
  std::vector<BlockConfig> configs;
  for (const auto& s : samples) configs.push_back(s.config);
  const auto pred = predict_block_latency(model, configs);
  double err = 0;
  for (size_t i = 0; i < samples.size(); ++i) err += std::abs(pred[i] - samples[i].latency_ms) / samples[i].latency_ms;
  return err / double(samples.size());
}

template <typename T>
Var<T> predict_block_latency(const SpeedModel& model, Tape<T>& tape, const TapeBlock<T>& block) {
  require_trained(model);
  const auto fixed = standardize(model, block_features(block.kind, 1.0, 1.0, double(block.h_in), double(block.w_in),
                                                       double(block.kernel), double(block.stride)));
  auto channel_feature = [&](Var<T> c, size_t k) {
    if (c.value().numel() != 1) throw ShapeError("channel count must be a single element");
    return ops::scale(ops::add_scalar(ops::log(c), T(-model.feature_mean[k])), T(1.0 / model.feature_std[k]));
  };
  std::vector<Var<T>> parts;
  for (size_t k = 0; k < 3; ++k) parts.push_back(tape.constant(Tensor<T>::scalar(T(fixed[k]))));
  parts.push_back(channel_feature(block.c_in, 3));
  parts.push_back(channel_feature(block.c_out, 4));
  for (size_t k = 5; k < SpeedModel::kFeatures; ++k) parts.push_back(tape.constant(Tensor<T>::scalar(T(fixed[k]))));
  Var<T> x = ops::concat<T>(parts, {1, SpeedModel::kFeatures});
  std::vector<Var<T>> w, b;
  for (size_t l = 0; l < model.weights.size(); ++l) {
    w.push_back(tape.constant(model.weights[l].cast<T>()));
    b.push_back(tape.constant(model.biases[l].cast<T>()));
  }
  return ops::reshape(mlp_forward(x, w, b), {1});
}

std::vector<BlockConfig> block_configs(const ArchDescriptor& arch) {
  std::vector<BlockConfig> out;
  int64_t h = arch.input_height;
  int64_t w = arch.input_width;
  const size_t trunk = arch.trunk_stage();
  for (size_t i = 0; i < arch.stages.size(); ++i) {
    const StageDesc& s = arch.stages[i];
    const bool up = s.kind == "upsample_stage";
    out.push_back({up ? BlockKind::upsample_stage : BlockKind::conv_stage, s.c_in, s.c_out, h, w, s.kernel, s.stride});
    h = same_out(up ? 2 * h : h, s.kernel, s.stride);
    w = same_out(up ? 2 * w : w, s.kernel, s.stride);
    if (i == trunk) {
      for (const BlockDesc& b : arch.blocks) {
        if (b.active) out.push_back({BlockKind::residual_block, b.widths.at(1), b.widths.at(0), h, w, kBlockKernel, 1});
      }
    }
  }
  return out;
}

double predicted_latency(const SpeedModel& model, const ArchDescriptor& arch) {
  double total = 0;
  for (const auto& c : block_configs(arch)) total += predict_block_latency(model, c);
  return total;
}

template <typename T>
LatencyEstimate<T> estimate_latency(const Generator<T>& g, const ArchInputs<T>& arch, Tape<T>& tape,
                                    const SpeedModel& model) {
  if (arch.masks.size() != g.masks().size() || arch.gates.size() != g.blocks().size()) {
    throw std::invalid_argument("latency: architecture inputs do not match the network");
  }
  LatencyEstimate<T> est;
  auto width = [&](const ConvUnit<T>& u) {
    if (u.mask_slot >= 0) return ops::sum(arch.masks[static_cast<size_t>(u.mask_slot)]);
    return tape.constant(Tensor<T>::scalar(T(u.c_out())));
  };
  auto add_part = [&](Var<T> part) {
    est.parts.push_back(part);
    est.total = est.total.valid() ? ops::add(est.total, part) : part;
  };
  int64_t h = g.image_size();
  Var<T> prev = tape.constant(Tensor<T>::scalar(T(g.input_channels())));
  for (const auto& u : g.encoder()) {
    Var<T> c_out = width(u);
    add_part(predict_block_latency(model, tape, TapeBlock<T>{BlockKind::conv_stage, prev, c_out, h, h, u.kernel(), u.stride}));
    h = ops::conv_out_size(h, u.kernel(), u.stride, u.pad);
    prev = c_out;
  }
  for (size_t i = 0; i < g.blocks().size(); ++i) {
    const ResBlock<T>& b = g.blocks()[i];
    Var<T> part = predict_block_latency(
        model, tape, TapeBlock<T>{BlockKind::residual_block, prev, width(b.conv1), h, h, kBlockKernel, 1});
    if (arch.gates[i]) part = ops::scalar_mul(part, arch.gates[i]->beta2);
    add_part(part);
  }
  for (const auto& u : g.decoder()) {
    Var<T> c_out = width(u);
    add_part(predict_block_latency(model, tape,
                                   TapeBlock<T>{BlockKind::upsample_stage, prev, c_out, h, h, u.kernel(), u.stride}));
    h = ops::conv_out_size(u.upsample ? 2 * h : h, u.kernel(), u.stride, u.pad);
    prev = c_out;
  }
  const ConvUnit<T>& head = g.head();
  add_part(predict_block_latency(model, tape, TapeBlock<T>{BlockKind::conv_stage, prev, width(head), h, h,
                                                           head.kernel(), head.stride}));
  return est;
}

template <typename T>
Var<T> latency_hinge(Var<T> t_pred, double budget_ms, double weight) {
  if (!(budget_ms > 0)) throw std::invalid_argument("latency budget must be positive");
  if (weight < 0) throw std::invalid_argument("latency weight must be >= 0");
  return ops::scale(ops::relu(ops::add_scalar(t_pred, T(-budget_ms))), T(weight));
}

template <typename T>
LatencyLoss<T> model_latency_loss(const Generator<T>& g, const ArchInputs<T>& arch, Tape<T>& tape,
                                  const SpeedModel& model, double budget_ms, double weight) {
  const auto est = estimate_latency(g, arch, tape, model);
  return {est.total, latency_hinge(est.total, budget_ms, weight)};
}

std::string speed_model_to_json(const SpeedModel& model) {
  Json doc;
  doc["format"] = "gansearch-speed-model";
  doc["features"] = {"kind_conv_stage", "kind_residual_block", "kind_upsample_stage", "log_c_in", "log_c_out",
                     "log_h_in",        "log_w_in",            "log_kernel",          "log_stride"};
  doc["feature_mean"] = model.feature_mean;
  doc["feature_std"] = model.feature_std;
  doc["layers"] = Json::array();
  for (size_t l = 0; l < model.weights.size(); ++l) {
    doc["layers"].push_back({{"weight", tensor_json(model.weights[l])}, {"bias", tensor_json(model.biases[l])}});
  }
  doc["report"] = {{"heldout_mean_rel_err", model.heldout_mean_rel_err},
                   {"train_samples", model.train_samples},
                   {"heldout_samples", model.heldout_samples}};
  return doc.dump(2) + "\n";
}

SpeedModel speed_model_from_json(const std::string& text) {
  SpeedModel m;
  try {
    const Json doc = Json::parse(text);
    if (doc.at("format") != "gansearch-speed-model") throw std::runtime_error("speed model: wrong format tag");
    m.feature_mean = doc.at("feature_mean").get<std::vector<double>>();
    m.feature_std = doc.at("feature_std").get<std::vector<double>>();
    const Json& layers = doc.at("layers");
    for (size_t l = 0; l < layers.size(); ++l) {
      const std::string where = "speed model layers[" + std::to_string(l) + "]";
      m.weights.push_back(tensor_from(layers[l].at("weight"), where + ".weight"));
      m.biases.push_back(tensor_from(layers[l].at("bias"), where + ".bias"));
    }
    const Json& r = doc.at("report");
    m.heldout_mean_rel_err = r.at("heldout_mean_rel_err").get<double>();
    m.train_samples = r.at("train_samples").get<int64_t>();
    m.heldout_samples = r.at("heldout_samples").get<int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("speed model: ") + e.what());
  }
  require_trained(m);
  int64_t fan_in = SpeedModel::kFeatures;
  for (size_t l = 0; l < m.weights.size(); ++l) {
    const auto& w = m.weights[l];
    if (w.rank() != 2 || w.dim(1) != fan_in || m.biases[l].numel() != w.dim(0)) {
      throw std::runtime_error("speed model: layer " + std::to_string(l) + " has inconsistent shapes");
    }
    fan_in = w.dim(0);
  }
  if (fan_in != 1) throw std::runtime_error("speed model: output layer must have one unit");
  return m;
}

void save_speed_model(const SpeedModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write speed model " + path);
  out << speed_model_to_json(model);
  if (!out) throw std::runtime_error("failed writing speed model " + path);
}

SpeedModel load_speed_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open speed model " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return speed_model_from_json(ss.str());
}

template Var<float> predict_block_latency(const SpeedModel&, Tape<float>&, const TapeBlock<float>&);
template Var<double> predict_block_latency(const SpeedModel&, Tape<double>&, const TapeBlock<double>&);
template LatencyEstimate<float> estimate_latency(const Generator<float>&, const ArchInputs<float>&, Tape<float>&,
                                                 const SpeedModel&);
template LatencyEstimate<double> estimate_latency(const Generator<double>&, const ArchInputs<double>&, Tape<double>&,
                                                  const SpeedModel&);
template Var<float> latency_hinge(Var<float>, double, double);
template Var<double> latency_hinge(Var<double>, double, double);
template LatencyLoss<float> model_latency_loss(const Generator<float>&, const ArchInputs<float>&, Tape<float>&,
                                               const SpeedModel&, double, double);
template LatencyLoss<double> model_latency_loss(const Generator<double>&, const ArchInputs<double>&, Tape<double>&,
                                                const SpeedModel&, double, double);

}  // namespace gansearch
