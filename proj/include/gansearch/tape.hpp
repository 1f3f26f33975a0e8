// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <deque>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "gansearch/tensor.hpp"

namespace gansearch {

template <typename T>
class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
/// owning tape is alive.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return tape->value(id).shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
};

/// Reverse-mode differentiation record.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and one reverse pass over it is a complete sweep. A tape
/// is single-writer; separate tapes share nothing.
template <typename T>
class Tape {
 public:
  /// Receives the gradient of the node's output and accumulates into the
  /// gradients of its inputs via Tape::grad_for().
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& out_grad)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    node.op = "leaf";
    return push(std::move(node));
  }
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }

  /// Appends the result of a primitive. The node requires a gradient iff any
  /// of its inputs does; otherwise the backward closure is dropped.
  Var<T> record(const char* op, Tensor<T> value, std::vector<int> inputs, BackwardFn backward) {
    Node node;
    node.value = std::move(value);
    node.op = op;
    for (int in : inputs) {
      if (in < 0 || in >= static_cast<int>(nodes_.size())) {
        throw std::out_of_range(std::string(op) + ": input id out of range");
      }
      node.requires_grad = node.requires_grad || nodes_[static_cast<size_t>(in)].requires_grad;
    }
    node.inputs = std::move(inputs);
    if (node.requires_grad) node.backward = std::move(backward);
    return push(std::move(node));
  }

  const Tensor<T>& value(int id) const { return at(id).value; }
  bool requires_grad(int id) const { return at(id).requires_grad; }
  bool is_leaf(int id) const { return at(id).inputs.empty() && !at(id).backward; }
  const std::string& op_name(int id) const { return at(id).op; }
  const std::vector<int>& inputs(int id) const { return at(id).inputs; }
  size_t size() const { return nodes_.size(); }

  /// Gradient accumulator for `id`, or nullptr when the node does not
  /// require one. Allocated zero-filled on first use.
  Tensor<T>* grad_for(int id) {
    Node& node = at(id);
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape(), T{0});
    return &node.grad;
  }

  /// Gradient of the last swept seed with respect to `v`; zeros when the
  /// node was not reached.
  Tensor<T> grad(Var<T> v) const {
    const Node& node = at(v.id);
    if (node.grad.empty()) return Tensor<T>(node.value.shape(), T{0});
    return node.grad;
  }

  /// Gradients of every requires_grad leaf, keyed by node id.
  std::map<int, Tensor<T>> leaf_gradients() const {
    std::map<int, Tensor<T>> out;
    for (size_t i = 0; i < nodes_.size(); ++i) {
      const Node& node = nodes_[i];
      if (node.requires_grad && node.inputs.empty()) {
        out.emplace(static_cast<int>(i), grad(Var<T>{const_cast<Tape*>(this), static_cast<int>(i)}));
      }
    }
    return out;
  }

  void zero_grad() {
    for (Node& node : nodes_) node.grad = Tensor<T>();
  }

  /// Reverse sweep seeded at a scalar node with d(seed)/d(seed) = seed_grad.
  void backward(Var<T> seed, T seed_grad = T{1}) {
    if (seed.tape != this) throw std::invalid_argument("backward: seed belongs to another tape");
    const Node& root = at(seed.id);
    if (root.value.numel() != 1) {
      throw ShapeError("backward: seed must be a scalar, got shape " + shape_str(root.value.shape()));
    }
    zero_grad();
    Tensor<T>* g = grad_for(seed.id);
    if (g == nullptr) return;
    (*g)[0] = seed_grad;
    for (int id = seed.id; id >= 0; --id) {
      Node& node = nodes_[static_cast<size_t>(id)];
      if (!node.backward || node.grad.empty()) continue;
      node.backward(*this, node.grad);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    std::string op;
    std::vector<int> inputs;
    BackwardFn backward;
  };

  Var<T> push(Node node) {
    nodes_.push_back(std::move(node));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Node& at(int id) {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::out_of_range("tape id out of range");
    return nodes_[static_cast<size_t>(id)];
  }
  const Node& at(int id) const {
    if (id < 0 || id >= static_cast<int>(nodes_.size())) throw std::out_of_range("tape id out of range");
    return nodes_[static_cast<size_t>(id)];
  }

  // deque keeps node references stable while ops append.
  std::deque<Node> nodes_;
};

}  // namespace gansearch
