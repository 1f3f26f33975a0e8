// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "gansearch/param.hpp"

namespace gansearch {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over a fixed, ordered parameter group.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(std::span<Param<T>* const> params, AdamConfig config) : config_(config) {
    for (const Param<T>* p : params) {
      m_.emplace_back(p->value.shape(), T{0});
      v_.emplace_back(p->value.shape(), T{0});
    }
  }

  /// New values after one step; neither the parameters nor the moments are
  /// touched until commit().
  struct Staged {
    std::vector<Tensor<T>> values, m, v;
    int64_t step = 0;
  };

  Staged stage(std::span<Param<T>* const> params, std::span<const Tensor<T>> grads, double lr) const {
    if (params.size() != m_.size() || grads.size() != m_.size()) {
      throw std::invalid_argument("adam: parameter group size changed");
    }
    Staged s;
    s.step = step_ + 1;
    const double c1 = 1.0 - std::pow(config_.beta1, double(s.step));
    const double c2 = 1.0 - std::pow(config_.beta2, double(s.step));
    const T b1 = T(config_.beta1), b2 = T(config_.beta2);
    for (size_t i = 0; i < m_.size(); ++i) {
      Tensor<T> value = params[i]->value, m = m_[i], v = v_[i];
      const Tensor<T>& g = grads[i];
      if (g.shape() != value.shape()) throw ShapeError("adam: gradient shape mismatch for " + params[i]->name);
      for (int64_t j = 0; j < value.numel(); ++j) {
        m[j] = b1 * m[j] + (T{1} - b1) * g[j];
        v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
        const double mh = double(m[j]) / c1;
        const double vh = double(v[j]) / c2;
        value[j] = T(double(value[j]) - lr * mh / (std::sqrt(vh) + config_.eps));
      }
      s.values.push_back(std::move(value));
      s.m.push_back(std::move(m));
      s.v.push_back(std::move(v));
    }
    return s;
  }

  void commit(std::span<Param<T>* const> params, Staged&& s) {
    for (size_t i = 0; i < m_.size(); ++i) params[i]->value = std::move(s.values[i]);
    m_ = std::move(s.m);
    v_ = std::move(s.v);
    step_ = s.step;
  }

  void step(std::span<Param<T>* const> params, std::span<const Tensor<T>> grads, double lr) {
    commit(params, stage(params, grads, lr));
  }

  const AdamConfig& config() const { return config_; }
  int64_t steps() const { return step_; }
  std::vector<Tensor<T>>& first_moments() { return m_; }
  std::vector<Tensor<T>>& second_moments() { return v_; }
  const std::vector<Tensor<T>>& first_moments() const { return m_; }
  const std::vector<Tensor<T>>& second_moments() const { return v_; }
  void set_steps(int64_t step) { step_ = step; }

 private:
  AdamConfig config_;
  std::vector<Tensor<T>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace gansearch
