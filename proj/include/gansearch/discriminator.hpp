// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "gansearch/param.hpp"

namespace gansearch {

/// Fixed PatchGAN critic: four 4x4 stride-2 convs with leaky relu (0.2) and a
/// 1x1 head producing one score per patch. Not searched.
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int64_t input_channels, int64_t base_width, const std::string& prefix, uint64_t seed);

  Var<T> forward(Var<T> x, Binding<T>& bind) const;
  Tensor<T> infer(const Tensor<T>& x) const;

  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;
  const std::string& prefix() const { return prefix_; }

  static constexpr int kLayers = 4;
  static constexpr int kKernel = 4;
  static constexpr double kSlope = 0.2;

 private:
  std::string prefix_;
  std::vector<Param<T>> weights_;
  std::vector<Param<T>> biases_;
};

}  // namespace gansearch
