// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

#include "gansearch/tensor.hpp"

namespace gansearch {

enum class Domain { x, y };

/// Procedural unpaired two-style images in [-1, 1], 3 x S x S.
///   x: anti-aliased ellipse on a linear gradient background
///   y: flat-filled ellipse with a dark outline on a flat background
/// Image i of a domain depends only on (seed, domain, i).
class TwoStyleDataset {
 public:
  TwoStyleDataset(int64_t image_size, uint64_t seed);

  Tensor<float> image(Domain domain, uint64_t index) const;
  /// Images start .. start + count - 1 stacked to count x 3 x S x S.
  Tensor<float> batch(Domain domain, uint64_t start, int64_t count) const;

  int64_t image_size() const { return size_; }

 private:
  int64_t size_;
  uint64_t seed_;
};

}  // namespace gansearch
