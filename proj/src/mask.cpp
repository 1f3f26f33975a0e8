// SPDX-License-Identifier: Apache-2.0
#include "gansearch/mask.hpp"

#include "gansearch/ops.hpp"

namespace gansearch {

template <typename T>
Tensor<T> binarize_mask(const Tensor<T>& v, T threshold) {
  Tensor<T> b(v.shape(), T{0});
  bool any = false;
  int64_t best = 0;
  for (int64_t j = 0; j < v.numel(); ++j) {
    if (v[j] > threshold) {
      b[j] = T{1};
      any = true;
    }
    if (v[j] > v[best]) best = j;
  }
  if (!any) b[best] = T{1};
  return b;
}

template <typename T>
int64_t kept_count(const Tensor<T>& b) {
  int64_t n = 0;
  for (int64_t j = 0; j < b.numel(); ++j) n += b[j] != T{0} ? 1 : 0;
  return n;
}

template <typename T>
std::pair<int, int> gate_select(T alpha1, T alpha2) {
  return alpha1 <= alpha2 ? std::pair{0, 1} : std::pair{1, 0};
}

template <typename T>
Var<T> binarize_ste(Var<T> v, T threshold) {
  if (v.shape().size() != 1) throw ShapeError("binarize_ste: mask must be a vector, got " + shape_str(v.shape()));
  const int iv = v.id;
  return v.tape->record("binarize_ste", binarize_mask(v.value(), threshold), {iv},
                        [iv](Tape<T>& t, const Tensor<T>& g) {
                          if (Tensor<T>* gv = t.grad_for(iv)) {
                            for (int64_t j = 0; j < g.numel(); ++j) (*gv)[j] += g[j];
                          }
                        });
}

template <typename T>
GateVars<T> gate_ste(Var<T> alpha) {
  if (alpha.value().numel() != 2) throw ShapeError("gate_ste: alpha must hold two values");
  const auto [b1, b2] = gate_select(alpha.value()[0], alpha.value()[1]);
  const int ia = alpha.id;
  auto component = [&](int index, int beta) {
    return alpha.tape->record("gate_ste", Tensor<T>::scalar(static_cast<T>(beta)), {ia},
                              [ia, index](Tape<T>& t, const Tensor<T>& g) {
                                if (Tensor<T>* ga = t.grad_for(ia)) (*ga)[index] += g[0];
                              });
  };
  GateVars<T> out;
  out.beta1 = component(0, b1);
  out.beta2 = component(1, b2);
  return out;
}

template <typename T>
Var<T> mask_apply(Var<T> features, Var<T> b) {
  if (features.shape().size() != 4 || b.shape().size() != 1 || features.shape()[1] != b.shape()[0]) {
    throw ShapeError("mask_apply: mask " + shape_str(b.shape()) + " does not match features " +
                     shape_str(features.shape()));
  }
  return ops::channel_scale(features, b);
}

#define GANSEARCH_INSTANTIATE_MASK(T)                              \
  template Tensor<T> binarize_mask(const Tensor<T>&, T);           \
  template int64_t kept_count(const Tensor<T>&);                   \
  template std::pair<int, int> gate_select(T, T);                  \
  template Var<T> binarize_ste(Var<T>, T);                         \
  template GateVars<T> gate_ste(Var<T>);                           \
  template Var<T> mask_apply(Var<T>, Var<T>);

GANSEARCH_INSTANTIATE_MASK(float)
GANSEARCH_INSTANTIATE_MASK(double)

}  // namespace gansearch
