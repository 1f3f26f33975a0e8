// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>
#include <vector>

#include "gansearch/tape.hpp"

/// Differentiable primitives recorded on a Tape.
///
/// Every op validates shapes eagerly and throws ShapeError with the offending
/// dimensions. Kinks (relu, lrelu, abs) use subgradient 0.
namespace gansearch::ops {

// Elementwise, binary ops require identical shapes.
template <typename T> Var<T> add(Var<T> a, Var<T> b);
template <typename T> Var<T> sub(Var<T> a, Var<T> b);
template <typename T> Var<T> mul(Var<T> a, Var<T> b);
template <typename T> Var<T> scale(Var<T> a, T c);
template <typename T> Var<T> add_scalar(Var<T> a, T c);
template <typename T> Var<T> relu(Var<T> a);
template <typename T> Var<T> lrelu(Var<T> a, T slope);
template <typename T> Var<T> tanh(Var<T> a);
template <typename T> Var<T> abs(Var<T> a);
template <typename T> Var<T> square(Var<T> a);
template <typename T> Var<T> log(Var<T> a);
template <typename T> Var<T> exp(Var<T> a);
template <typename T> Var<T> softplus(Var<T> a);

// Reductions to a 1-element tensor.
template <typename T> Var<T> sum(Var<T> a);
template <typename T> Var<T> mean(Var<T> a);

/// x * s where s holds a single element.
template <typename T> Var<T> scalar_mul(Var<T> x, Var<T> s);
/// x[b, c, ...] * s[c] for x of shape B x C x H x W and s of length C.
template <typename T> Var<T> channel_scale(Var<T> x, Var<T> s);
/// x[b, c, ...] + bias[c].
template <typename T> Var<T> channel_bias(Var<T> x, Var<T> bias);

/// Cross-correlation, zero padding. input B x i x H x W, weight o x i x k x k.
template <typename T> Var<T> conv2d(Var<T> input, Var<T> weight, int stride, int pad);
/// input B x n, weight m x n, bias m.
template <typename T> Var<T> dense(Var<T> input, Var<T> weight, Var<T> bias);
/// Per (b, c) plane normalization with biased variance, then gamma/beta.
template <typename T> Var<T> instance_norm(Var<T> input, Var<T> gamma, Var<T> beta, T eps);
/// Nearest-neighbour x2 upsampling of B x C x H x W.
template <typename T> Var<T> upsample2x(Var<T> input);

template <typename T> Var<T> reshape(Var<T> a, Shape shape);
/// Flattens and concatenates the inputs, then views the result as `shape`.
template <typename T> Var<T> concat(std::span<const Var<T>> parts, Shape shape);

/// Output spatial extent of a convolution.
inline int64_t conv_out_size(int64_t in, int64_t kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

}  // namespace gansearch::ops
