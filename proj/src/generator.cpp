// SPDX-License-Identifier: Apache-2.0
#include "gansearch/generator.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

#include "gansearch/ops.hpp"

namespace gansearch {
namespace {

constexpr double kNormEps = 1e-5;

template <typename T>
Param<T> normal_param(std::string name, Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(dist(rng));
  return Param<T>{std::move(name), std::move(t), false};
}

template <typename T>
Param<T> const_param(std::string name, int64_t n, T value) {
  return Param<T>{std::move(name), Tensor<T>({n}, value), false};
}

/// Conv followed by instance norm (no conv bias; the norm removes it).
template <typename T>
ConvUnit<T> normed_unit(const std::string& name, int64_t c_in, int64_t c_out, int k, int stride, bool upsample,
                        Activation act, std::mt19937_64* rng) {
  ConvUnit<T> u;
  u.name = name;
  if (rng != nullptr) {
    const double gain = act == Activation::relu ? std::sqrt(2.0) : 1.0;
    u.weight = normal_param<T>(name + ".weight", {c_out, c_in, k, k}, gain / std::sqrt(double(c_in * k * k)), *rng);
  } else {
    u.weight = Param<T>{name + ".weight", Tensor<T>({c_out, c_in, k, k}), false};
  }
  u.gamma = const_param<T>(name + ".gamma", c_out, T{1});
  u.beta = const_param<T>(name + ".beta", c_out, T{0});
  u.stride = stride;
  u.pad = k / 2;
  u.upsample = upsample;
  u.act = act;
  return u;
}

template <typename T>
ConvUnit<T> head_unit(const std::string& name, int64_t c_in, int64_t c_out, std::mt19937_64* rng) {
  ConvUnit<T> u;
  u.name = name;
  constexpr int k = 7;
  if (rng != nullptr) {
    u.weight = normal_param<T>(name + ".weight", {c_out, c_in, k, k}, 1.0 / std::sqrt(double(c_in * k * k)), *rng);
  } else {
    u.weight = Param<T>{name + ".weight", Tensor<T>({c_out, c_in, k, k}), false};
  }
  u.bias = const_param<T>(name + ".bias", c_out, T{0});
  u.pad = k / 2;
  u.act = Activation::tanh;
  return u;
}

template <typename T>
Var<T> activate(Var<T> y, Activation act) {
  switch (act) {
    case Activation::relu:
      return ops::relu(y);
    case Activation::tanh:
      return ops::tanh(y);
    case Activation::none:
      break;
  }
  return y;
}

template <typename T>
void push_unit_params(ConvUnit<T>& u, std::vector<Param<T>*>& out) {
  out.push_back(&u.weight);
  if (u.gamma) out.push_back(&*u.gamma);
  if (u.beta) out.push_back(&*u.beta);
  if (u.bias) out.push_back(&*u.bias);
}

std::vector<int64_t> all_channels(int64_t n) {
  std::vector<int64_t> idx(static_cast<size_t>(n));
  for (int64_t i = 0; i < n; ++i) idx[static_cast<size_t>(i)] = i;
  return idx;
}

template <typename T>
void slice_unit(const ConvUnit<T>& src, ConvUnit<T>& dst, const std::vector<int64_t>& in_idx,
                const std::vector<int64_t>& out_idx) {
  const int64_t k = src.kernel();
  const int64_t kk = k * k;
  const int64_t src_in = src.c_in();
  const int64_t dst_in = static_cast<int64_t>(in_idx.size());
  if (dst.c_out() != static_cast<int64_t>(out_idx.size()) || dst.c_in() != dst_in || dst.kernel() != k) {
    throw std::logic_error("slice_unit: compact layout mismatch in " + src.name);
  }
  for (size_t o = 0; o < out_idx.size(); ++o) {
    for (size_t i = 0; i < in_idx.size(); ++i) {
      const T* from = src.weight.value.ptr() + (out_idx[o] * src_in + in_idx[i]) * kk;
      T* to = dst.weight.value.ptr() + (static_cast<int64_t>(o) * dst_in + static_cast<int64_t>(i)) * kk;
      std::copy(from, from + kk, to);
    }
  }
  auto slice_vec = [&](const std::optional<Param<T>>& s, std::optional<Param<T>>& d) {
    if (!s) return;
    for (size_t o = 0; o < out_idx.size(); ++o) d->value[static_cast<int64_t>(o)] = s->value[out_idx[o]];
  };
  slice_vec(src.gamma, dst.gamma);
  slice_vec(src.beta, dst.beta);
  slice_vec(src.bias, dst.bias);
}

}  // namespace

void SupernetConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("supernet config: " + msg); };
  if (input_channels < 1) fail("input_channels must be >= 1");
  if (base_width < 1) fail("base_width must be >= 1");
  if (down_stages < 0 || down_stages > 6) fail("down_stages must be in [0, 6]");
  if (up_stages != down_stages) fail("up_stages must equal down_stages so output resolution matches input");
  if (blocks < 0) fail("blocks must be >= 0");
  if (image_size < 1 || image_size % (int64_t{1} << down_stages) != 0) {
    fail("image_size must be a positive multiple of 2^down_stages");
  }
  if (!(mask_threshold == mask_threshold)) fail("mask_threshold must be finite");
}

template <typename T>
Var<T> unit_forward(const ConvUnit<T>& unit, Var<T> x, Binding<T>& bind, const Var<T>* mask) {
  Var<T> in = unit.upsample ? ops::upsample2x(x) : x;
  Var<T> y = ops::conv2d(in, bind(unit.weight), unit.stride, unit.pad);
  if (unit.gamma) y = ops::instance_norm(y, bind(*unit.gamma), bind(*unit.beta), T(kNormEps));
  if (unit.bias) y = ops::channel_bias(y, bind(*unit.bias));
  if (mask != nullptr) y = mask_apply(y, *mask);
  return activate(y, unit.act);
}

template <typename T>
Var<T> block_forward(Var<T> a_prev, const ResBlock<T>& block, Binding<T>& bind, const Var<T>* inner_mask,
                     const Var<T>* trunk_mask, const GateVars<T>* gate) {
  const int64_t width = a_prev.shape().at(1);
  if (block.conv1.c_in() != width || block.conv2.c_out() != width) {
    throw ShapeError("block_forward: width mismatch, block " + std::to_string(block.index) + " maps " +
                     std::to_string(block.conv1.c_in()) + " -> " + std::to_string(block.conv2.c_out()) +
                     " but input has " + std::to_string(width) + " channels");
  }
  Var<T> h = unit_forward(block.conv1, a_prev, bind, inner_mask);
  Var<T> r = unit_forward(block.conv2, h, bind, trunk_mask);
  Var<T> a_l = ops::add(a_prev, r);
  if (gate == nullptr) return a_l;
  return ops::add(ops::scalar_mul(a_prev, gate->beta1), ops::scalar_mul(a_l, gate->beta2));
}

template <typename T>
Generator<T> Generator<T>::supernet(const SupernetConfig& config, const std::string& prefix, uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Generator g;
  g.prefix_ = prefix;
  g.input_channels_ = config.input_channels;
  g.image_size_ = config.image_size;
  g.block_count_ = config.blocks;
  g.config_ = config;
  const T threshold = static_cast<T>(config.mask_threshold);
  const int64_t w = config.base_width;

  g.encoder_.push_back(normed_unit<T>(prefix + ".stem", config.input_channels, w, 7, 1, false, Activation::relu, &rng));
  for (int i = 0; i < config.down_stages; ++i) {
    const std::string name = prefix + ".down" + std::to_string(i);
    ConvUnit<T> u = normed_unit<T>(name, w << i, w << (i + 1), 3, 2, false, Activation::relu, &rng);
    const bool trunk = i + 1 == config.down_stages;
    if (trunk ? config.prune_trunk : config.prune_encoder) {
      u.mask_slot = static_cast<int>(g.masks_.size());
      g.masks_.push_back(make_width_mask<T>(trunk ? prefix + ".trunk.mask" : name + ".mask", u.c_out(), threshold));
      if (trunk) g.trunk_slot_ = u.mask_slot;
    }
    g.encoder_.push_back(std::move(u));
  }
  const int64_t trunk = config.trunk_width();
  for (int n = 0; n < config.blocks; ++n) {
    const std::string name = prefix + ".block" + std::to_string(n);
    ResBlock<T> b;
    b.index = n;
    b.conv1 = normed_unit<T>(name + ".conv1", trunk, trunk, 3, 1, false, Activation::relu, &rng);
    b.conv2 = normed_unit<T>(name + ".conv2", trunk, trunk, 3, 1, false, Activation::none, &rng);
    if (config.prune_blocks) {
      b.conv1.mask_slot = static_cast<int>(g.masks_.size());
      g.masks_.push_back(make_width_mask<T>(name + ".conv1.mask", trunk, threshold));
    }
    b.conv2.mask_slot = g.trunk_slot_;
    if (config.search_depth) b.gate = make_block_gate<T>(name + ".gate");
    g.blocks_.push_back(std::move(b));
  }
  for (int i = 0; i < config.up_stages; ++i) {
    const std::string name = prefix + ".up" + std::to_string(i);
    ConvUnit<T> u = normed_unit<T>(name, trunk >> i, trunk >> (i + 1), 3, 1, true, Activation::relu, &rng);
    if (config.prune_decoder) {
      u.mask_slot = static_cast<int>(g.masks_.size());
      g.masks_.push_back(make_width_mask<T>(name + ".mask", u.c_out(), threshold));
    }
    g.decoder_.push_back(std::move(u));
  }
  g.head_ = head_unit<T>(prefix + ".head", trunk >> config.up_stages, config.input_channels, &rng);
  return g;
}

template <typename T>
Generator<T> Generator<T>::from_descriptor(const ArchDescriptor& arch, const std::string& prefix) {
  validate(arch);
  Generator g;
  g.prefix_ = prefix;
  g.input_channels_ = arch.input_channels;
  g.image_size_ = arch.input_height;
  g.block_count_ = static_cast<int>(arch.blocks.size());
  for (const StageDesc& s : arch.stages) {
    const std::string name = prefix + "." + s.name;
    if (s.kind == "conv_stage") {
      g.encoder_.push_back(normed_unit<T>(name, s.c_in, s.c_out, s.kernel, s.stride, false, Activation::relu, nullptr));
    } else if (s.kind == "upsample_stage") {
      g.decoder_.push_back(normed_unit<T>(name, s.c_in, s.c_out, s.kernel, s.stride, true, Activation::relu, nullptr));
    } else {
      g.head_ = head_unit<T>(name, s.c_in, s.c_out, nullptr);
      g.head_.stride = s.stride;
      g.head_.pad = s.kernel / 2;
    }
  }
  const int64_t trunk = arch.trunk_width();
  for (size_t i = 0; i < arch.blocks.size(); ++i) {
    const BlockDesc& bd = arch.blocks[i];
    if (!bd.active) continue;
    const std::string name = prefix + ".block" + std::to_string(i);
    ResBlock<T> b;
    b.index = static_cast<int>(i);
    b.conv1 = normed_unit<T>(name + ".conv1", trunk, bd.widths[0], kBlockKernel, 1, false, Activation::relu, nullptr);
    b.conv2 = normed_unit<T>(name + ".conv2", bd.widths[0], trunk, kBlockKernel, 1, false, Activation::none, nullptr);
    g.blocks_.push_back(std::move(b));
  }
  return g;
}

template <typename T>
bool Generator<T>::has_gates() const {
  for (const auto& b : blocks_) {
    if (b.gate) return true;
  }
  return false;
}

template <typename T>
std::vector<Param<T>*> Generator<T>::parameters() {
  std::vector<Param<T>*> out;
  for (auto& u : encoder_) push_unit_params(u, out);
  for (auto& b : blocks_) {
    push_unit_params(b.conv1, out);
    push_unit_params(b.conv2, out);
  }
  for (auto& u : decoder_) push_unit_params(u, out);
  push_unit_params(head_, out);
  for (auto& m : masks_) out.push_back(&m.v);
  for (auto& b : blocks_) {
    if (b.gate) out.push_back(&b.gate->alpha);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> Generator<T>::parameters() const {
  auto mut = const_cast<Generator*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template <typename T>
ArchInputs<T> Generator<T>::arch_inputs(Binding<T>& bind, ArchMode mode) const {
  ArchInputs<T> in;
  Tape<T>& tape = bind.tape();
  for (const auto& m : masks_) {
    if (mode == ArchMode::ste) {
      in.masks.push_back(binarize_ste(bind(m.v), m.threshold));
    } else {
      in.masks.push_back(tape.constant(binarize_mask(m.v.value, m.threshold)));
    }
  }
  for (const auto& b : blocks_) {
    if (!b.gate) {
      in.gates.emplace_back();
    } else if (mode == ArchMode::ste) {
      in.gates.emplace_back(gate_ste(bind(b.gate->alpha)));
    } else {
      const auto [b1, b2] = gate_select(b.gate->alpha.value[0], b.gate->alpha.value[1]);
      in.gates.emplace_back(GateVars<T>{tape.constant(Tensor<T>::scalar(T(b1))), tape.constant(Tensor<T>::scalar(T(b2)))});
    }
  }
  return in;
}

template <typename T>
Var<T> Generator<T>::forward(Var<T> x, Binding<T>& bind, const ArchInputs<T>& arch) const {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != input_channels_) {
    throw ShapeError("generator: expected B x " + std::to_string(input_channels_) + " x H x W input, got " +
                     shape_str(s));
  }
  int64_t factor = 1;
  for (const auto& u : encoder_) factor *= u.stride;
  if (s[2] % factor != 0 || s[3] % factor != 0) {
    throw ShapeError("generator: spatial size " + shape_str(s) + " is not divisible by " + std::to_string(factor));
  }
  if (arch.masks.size() != masks_.size() || arch.gates.size() != blocks_.size()) {
    throw std::invalid_argument("generator: architecture inputs do not match the network");
  }
  auto mask_of = [&](const ConvUnit<T>& u) -> const Var<T>* {
    return u.mask_slot >= 0 ? &arch.masks[static_cast<size_t>(u.mask_slot)] : nullptr;
  };
  Var<T> a = x;
  for (const auto& u : encoder_) a = unit_forward(u, a, bind, mask_of(u));
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const ResBlock<T>& b = blocks_[i];
    const GateVars<T>* gate = arch.gates[i] ? &*arch.gates[i] : nullptr;
    a = block_forward(a, b, bind, mask_of(b.conv1), mask_of(b.conv2), gate);
  }
  for (const auto& u : decoder_) a = unit_forward(u, a, bind, mask_of(u));
  return unit_forward<T>(head_, a, bind, nullptr);
}

template <typename T>
Var<T> Generator<T>::forward(Var<T> x, Binding<T>& bind, ArchMode mode) const {
  return forward(x, bind, arch_inputs(bind, mode));
}

template <typename T>
Tensor<T> Generator<T>::infer(const Tensor<T>& x) const {
  Tape<T> tape;
  Binding<T> bind(tape, false, false);
  return forward(tape.constant(x), bind, ArchMode::pinned).value();
}

template <typename T>
std::vector<Tensor<T>> Generator<T>::binary_masks() const {
  std::vector<Tensor<T>> out;
  out.reserve(masks_.size());
  for (const auto& m : masks_) out.push_back(binarize_mask(m.v.value, m.threshold));
  return out;
}

template <typename T>
bool Generator<T>::block_active(size_t i) const {
  const ResBlock<T>& b = blocks_.at(i);
  return !b.gate || b.gate->conv_active();
}

template <typename T>
ArchDescriptor Generator<T>::describe() const {
  const auto bins = binary_masks();
  auto width = [&](const ConvUnit<T>& u) {
    return u.mask_slot >= 0 ? kept_count(bins[static_cast<size_t>(u.mask_slot)]) : u.c_out();
  };
  ArchDescriptor arch;
  arch.input_channels = input_channels_;
  arch.input_height = image_size_;
  arch.input_width = image_size_;
  const size_t name_start = prefix_.size() + 1;
  int64_t prev = input_channels_;
  for (const auto& u : encoder_) {
    arch.stages.push_back({u.name.substr(name_start), "conv_stage", prev, width(u), u.kernel(), u.stride});
    prev = width(u);
  }
  const int64_t trunk = prev;
  arch.blocks.assign(static_cast<size_t>(block_count_), BlockDesc{false, {}});
  for (size_t i = 0; i < blocks_.size(); ++i) {
    const ResBlock<T>& b = blocks_[i];
    if (!block_active(i)) continue;
    arch.blocks[static_cast<size_t>(b.index)] = BlockDesc{true, {width(b.conv1), trunk}};
  }
  for (const auto& u : decoder_) {
    arch.stages.push_back({u.name.substr(name_start), "upsample_stage", prev, width(u), u.kernel(), u.stride});
    prev = width(u);
  }
  arch.stages.push_back({head_.name.substr(name_start), "output_stage", prev, head_.c_out(), head_.kernel(), head_.stride});
  arch.macs = count_macs(arch);
  return arch;
}

template <typename T>
Extraction<T> extract_architecture(const Generator<T>& supernet) {
  Extraction<T> out;
  out.descriptor = supernet.describe();
  out.compact = Generator<T>::from_descriptor(out.descriptor, supernet.prefix());

  const auto bins = supernet.binary_masks();
  auto kept = [&](const ConvUnit<T>& u) {
    if (u.mask_slot < 0) return all_channels(u.c_out());
    const Tensor<T>& b = bins[static_cast<size_t>(u.mask_slot)];
    std::vector<int64_t> idx;
    for (int64_t j = 0; j < b.numel(); ++j) {
      if (b[j] != T{0}) idx.push_back(j);
    }
    return idx;
  };

  std::vector<int64_t> in_idx = all_channels(supernet.input_channels());
  for (size_t i = 0; i < supernet.encoder().size(); ++i) {
    const auto out_idx = kept(supernet.encoder()[i]);
    slice_unit(supernet.encoder()[i], out.compact.encoder()[i], in_idx, out_idx);
    in_idx = out_idx;
  }
  const std::vector<int64_t> trunk_idx = in_idx;
  size_t compact_block = 0;
  for (size_t i = 0; i < supernet.blocks().size(); ++i) {
    if (!supernet.block_active(i)) continue;
    const ResBlock<T>& src = supernet.blocks()[i];
    ResBlock<T>& dst = out.compact.blocks()[compact_block++];
    const auto inner = kept(src.conv1);
    slice_unit(src.conv1, dst.conv1, trunk_idx, inner);
    slice_unit(src.conv2, dst.conv2, inner, trunk_idx);
  }
  for (size_t i = 0; i < supernet.decoder().size(); ++i) {
    const auto out_idx = kept(supernet.decoder()[i]);
    slice_unit(supernet.decoder()[i], out.compact.decoder()[i], in_idx, out_idx);
    in_idx = out_idx;
  }
  slice_unit(supernet.head(), out.compact.head(), in_idx, all_channels(supernet.head().c_out()));
  return out;
}

#define GANSEARCH_INSTANTIATE_GENERATOR(T)                                                              \
  template class Generator<T>;                                                                          \
  template Var<T> unit_forward(const ConvUnit<T>&, Var<T>, Binding<T>&, const Var<T>*);                \
  template Var<T> block_forward(Var<T>, const ResBlock<T>&, Binding<T>&, const Var<T>*, const Var<T>*,  \
                                const GateVars<T>*);                                                    \
  template Extraction<T> extract_architecture(const Generator<T>&);

GANSEARCH_INSTANTIATE_GENERATOR(float)
GANSEARCH_INSTANTIATE_GENERATOR(double)

}  // namespace gansearch
