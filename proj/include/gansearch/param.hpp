// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "gansearch/tape.hpp"

namespace gansearch {

/// Named trainable tensor. Architecture parameters (mask vectors, gate pairs)
/// are kept apart from network weights so they can be optimized or frozen as
/// a group.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  bool arch = false;
};

/// Binds parameters of one module onto a tape, once per parameter, so a
/// module applied several times on the same tape accumulates into one leaf.
template <typename T>
class Binding {
 public:
  Binding(Tape<T>& tape, bool grad_network, bool grad_arch)
      : tape_(&tape), grad_network_(grad_network), grad_arch_(grad_arch) {}

  Var<T> operator()(const Param<T>& p) {
    auto it = vars_.find(&p);
    if (it != vars_.end()) return it->second;
    Var<T> v = tape_->leaf(p.value, p.arch ? grad_arch_ : grad_network_);
    vars_.emplace(&p, v);
    return v;
  }

  /// Binds `p` to an existing node instead of a fresh leaf.
  void assign(const Param<T>& p, Var<T> v) {
    if (p.value.shape() != v.shape()) throw ShapeError("binding " + p.name + ": shape mismatch");
    vars_[&p] = v;
  }

  bool bound(const Param<T>& p) const { return vars_.count(&p) != 0; }

  /// Gradient after a sweep; zeros if the parameter never entered the tape.
  Tensor<T> grad(const Param<T>& p) const {
    auto it = vars_.find(&p);
    if (it == vars_.end()) return Tensor<T>(p.value.shape(), T{0});
    return tape_->grad(it->second);
  }

  Tape<T>& tape() const { return *tape_; }

 private:
  Tape<T>* tape_;
  bool grad_network_;
  bool grad_arch_;
  std::unordered_map<const Param<T>*, Var<T>> vars_;
};

}  // namespace gansearch
