// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "gansearch/arch.hpp"
#include "gansearch/mask.hpp"
#include "gansearch/param.hpp"

namespace gansearch {

/// Searchable generator layout: c7s1-W stem, stride-2 downsampling stages
/// doubling the width, residual blocks at the trunk width, nearest-upsample +
/// conv stages halving it, and a c7s1-3 tanh head.
struct SupernetConfig {
  int64_t input_channels = 3;
  int64_t image_size = 32;
  int64_t base_width = 16;
  int down_stages = 2;
  int up_stages = 2;
  int blocks = 4;
  // Which layers carry width masks. The stem and the head never do.
  bool prune_encoder = true;  // down stages feeding another down stage
  bool prune_trunk = true;    // last down stage; the mask is shared by every block's second conv
  bool prune_blocks = true;   // first conv of every residual block
  bool prune_decoder = true;  // upsample stages
  bool search_depth = true;   // per-block skip gates
  double mask_threshold = 0.5;

  /// Throws std::invalid_argument on an inconsistent layout.
  void validate() const;
  int64_t trunk_width() const { return base_width << down_stages; }
};

enum class Activation { none, relu, tanh };

/// conv (optionally preceded by x2 upsampling) -> instance norm or bias ->
/// width mask -> activation.
template <typename T>
struct ConvUnit {
  std::string name;
  Param<T> weight;
  std::optional<Param<T>> gamma;
  std::optional<Param<T>> beta;
  std::optional<Param<T>> bias;
  int stride = 1;
  int pad = 0;
  bool upsample = false;
  Activation act = Activation::relu;
  int mask_slot = -1;

  int64_t c_out() const { return weight.value.dim(0); }
  int64_t c_in() const { return weight.value.dim(1); }
  int kernel() const { return static_cast<int>(weight.value.dim(2)); }
};

/// Residual block: a_L = a + mask_t(IN(conv2(relu(mask_i(IN(conv1(a))))))),
/// switched against the identity by the gate when present.
template <typename T>
struct ResBlock {
  int index = 0;
  ConvUnit<T> conv1;
  ConvUnit<T> conv2;
  std::optional<BlockGate<T>> gate;
};

/// Per-forward architecture inputs: one 0/1 vector per mask slot and one
/// (beta1, beta2) pair per gated block.
template <typename T>
struct ArchInputs {
  std::vector<Var<T>> masks;
  std::vector<std::optional<GateVars<T>>> gates;
};

enum class ArchMode {
  ste,     // masks and gates binarized on the tape with straight-through gradients
  pinned,  // current binarization injected as constants
};

template <typename T>
Var<T> unit_forward(const ConvUnit<T>& unit, Var<T> x, Binding<T>& bind, const Var<T>* mask);

/// a^n = beta1 * a^{n-1} + beta2 * a_L^n, or a_L^n when the block has no gate.
template <typename T>
Var<T> block_forward(Var<T> a_prev, const ResBlock<T>& block, Binding<T>& bind, const Var<T>* inner_mask,
                     const Var<T>* trunk_mask, const GateVars<T>* gate);

template <typename T>
class Generator {
 public:
  Generator() = default;

  /// Full-width supernet with masks at 1 and gates on the conv path.
  static Generator supernet(const SupernetConfig& config, const std::string& prefix, uint64_t seed);
  /// Mask-free network with the widths of `arch`; weights zero-initialized.
  static Generator from_descriptor(const ArchDescriptor& arch, const std::string& prefix);

  const std::string& prefix() const { return prefix_; }
  bool searchable() const { return !masks_.empty() || has_gates(); }
  bool has_gates() const;
  int block_count() const { return block_count_; }
  int64_t input_channels() const { return input_channels_; }
  int64_t image_size() const { return image_size_; }
  const std::optional<SupernetConfig>& config() const { return config_; }

  std::vector<ConvUnit<T>>& encoder() { return encoder_; }
  const std::vector<ConvUnit<T>>& encoder() const { return encoder_; }
  std::vector<ResBlock<T>>& blocks() { return blocks_; }
  const std::vector<ResBlock<T>>& blocks() const { return blocks_; }
  std::vector<ConvUnit<T>>& decoder() { return decoder_; }
  const std::vector<ConvUnit<T>>& decoder() const { return decoder_; }
  ConvUnit<T>& head() { return head_; }
  const ConvUnit<T>& head() const { return head_; }
  std::vector<WidthMask<T>>& masks() { return masks_; }
  const std::vector<WidthMask<T>>& masks() const { return masks_; }
  int trunk_mask_slot() const { return trunk_slot_; }

  /// Every parameter, network weights first then architecture parameters,
  /// in a fixed order.
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;

  ArchInputs<T> arch_inputs(Binding<T>& bind, ArchMode mode) const;
  Var<T> forward(Var<T> x, Binding<T>& bind, const ArchInputs<T>& arch) const;
  Var<T> forward(Var<T> x, Binding<T>& bind, ArchMode mode = ArchMode::ste) const;
  /// Forward on a scratch tape without gradients.
  Tensor<T> infer(const Tensor<T>& x) const;

  /// Binarized mask per slot (minimum-width rule applied).
  std::vector<Tensor<T>> binary_masks() const;
  /// Whether block i (by position in blocks()) runs its conv path.
  bool block_active(size_t i) const;

  /// Architecture currently selected by masks and gates.
  ArchDescriptor describe() const;

 private:
  std::string prefix_;
  int64_t input_channels_ = 3;
  int64_t image_size_ = 0;
  int block_count_ = 0;
  std::optional<SupernetConfig> config_;
  std::vector<ConvUnit<T>> encoder_;
  std::vector<ResBlock<T>> blocks_;
  std::vector<ConvUnit<T>> decoder_;
  ConvUnit<T> head_;
  std::vector<WidthMask<T>> masks_;
  int trunk_slot_ = -1;
};

template <typename T>
struct Extraction {
  ArchDescriptor descriptor;
  Generator<T> compact;
};

/// Physically removes pruned channels (slicing consumers' input channels to
/// match) and gated-off blocks. The compact network computes the same
/// function as the masked supernet.
template <typename T>
Extraction<T> extract_architecture(const Generator<T>& supernet);

}  // namespace gansearch
