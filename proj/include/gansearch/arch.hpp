// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace gansearch {

/// Residual blocks always use 3x3 convolutions.
inline constexpr int kBlockKernel = 3;

struct StageDesc {
  std::string name;
  std::string kind;  // conv_stage | upsample_stage | output_stage
  int64_t c_in = 0;
  int64_t c_out = 0;
  int kernel = 0;
  int stride = 1;

  bool operator==(const StageDesc&) const = default;
};

/// One residual block. Active blocks carry {inner width, trunk width};
/// gated-off blocks carry no widths and contribute nothing.
struct BlockDesc {
  bool active = true;
  std::vector<int64_t> widths;

  bool operator==(const BlockDesc&) const = default;
};

/// Compact architecture record: encoder conv stages, then the residual
/// blocks at trunk resolution, then upsample stages and the output stage.
struct ArchDescriptor {
  int64_t input_channels = 3;
  int64_t input_height = 0;
  int64_t input_width = 0;
  std::vector<StageDesc> stages;
  std::vector<BlockDesc> blocks;
  int64_t macs = 0;
  std::optional<double> predicted_latency_ms;

  bool operator==(const ArchDescriptor&) const = default;

  /// Channel count flowing through the residual blocks (c_out of the last
  /// conv_stage).
  int64_t trunk_width() const;
  /// Index of the stage after which the residual blocks run.
  size_t trunk_stage() const;
};

class DescriptorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit layer for MAC accounting.
struct LayerCost {
  enum class Kind { conv, dense, mask };
  Kind kind = Kind::conv;
  int64_t c_in = 0;   // conv input channels / dense input features
  int64_t c_out = 0;  // conv output channels / dense output features
  int64_t kernel = 1;
  int64_t out_h = 1;
  int64_t out_w = 1;
};

/// conv: c_out * c_in * k^2 * H' * W'; dense: c_out * c_in; mask layers are
/// folded into the preceding conv at export and cost nothing.
int64_t count_macs(std::span<const LayerCost> layers);
int64_t count_macs(const ArchDescriptor& arch);

/// Layer list of the described network (masks excluded), in execution order.
std::vector<LayerCost> layer_costs(const ArchDescriptor& arch);

/// Structural checks: channel chaining, widths >= 1 on active blocks,
/// block trunk width, and macs == count_macs(arch). Throws DescriptorError.
void validate(const ArchDescriptor& arch);

/// Canonical JSON text (fixed key order, trailing newline).
std::string to_json(const ArchDescriptor& arch);
/// Parses and validates; unknown or missing keys are errors.
ArchDescriptor descriptor_from_json(const std::string& text);

void save_descriptor(const ArchDescriptor& arch, const std::string& path);
ArchDescriptor load_descriptor(const std::string& path);

}  // namespace gansearch
