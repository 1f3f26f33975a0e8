// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <utility>

#include "gansearch/param.hpp"

namespace gansearch {

/// Learnable per-channel keep mask hosted after a conv layer.
///
/// b_j = 1 iff v_j > threshold. When no entry clears the threshold the
/// argmax-v channel (lowest index on ties) is kept so an active layer never
/// has zero width.
template <typename T>
struct WidthMask {
  Param<T> v;
  T threshold = T(0.5);

  int64_t channels() const { return v.value.numel(); }
};

/// Skip/conv selector of a residual block: alpha = (alpha1, alpha2).
template <typename T>
struct BlockGate {
  Param<T> alpha;

  bool conv_active() const { return alpha.value[0] <= alpha.value[1]; }
};

template <typename T>
WidthMask<T> make_width_mask(std::string name, int64_t channels, T threshold = T(0.5)) {
  return WidthMask<T>{Param<T>{std::move(name), Tensor<T>({channels}, T{1}), true}, threshold};
}

/// Gates start with the conv path active: alpha1 = 0, alpha2 = 1.
template <typename T>
BlockGate<T> make_block_gate(std::string name) {
  return BlockGate<T>{Param<T>{std::move(name), Tensor<T>({2}, std::vector<T>{T{0}, T{1}}), true}};
}

/// Thresholded 0/1 mask with the minimum-width rule applied.
template <typename T>
Tensor<T> binarize_mask(const Tensor<T>& v, T threshold);

/// Number of kept channels.
template <typename T>
int64_t kept_count(const Tensor<T>& b);

/// (beta1, beta2): (0, 1) selects the conv path when alpha1 <= alpha2,
/// (1, 0) selects the skip path otherwise.
template <typename T>
std::pair<int, int> gate_select(T alpha1, T alpha2);

template <typename T>
struct GateVars {
  Var<T> beta1;
  Var<T> beta2;
};

/// Binarization on the tape. Backward is straight-through: dL/dv = dL/db.
template <typename T>
Var<T> binarize_ste(Var<T> v, T threshold);

/// Gate selection on the tape. Backward is straight-through per component:
/// dL/dalpha_i = dL/dbeta_i.
template <typename T>
GateVars<T> gate_ste(Var<T> alpha);

/// Multiplies channel j of a B x C x H x W activation by b_j.
template <typename T>
Var<T> mask_apply(Var<T> features, Var<T> b);

}  // namespace gansearch
