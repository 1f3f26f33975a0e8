// SPDX-License-Identifier: Apache-2.0
#include "gansearch/discriminator.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "gansearch/ops.hpp"

namespace gansearch {

template <typename T>
Discriminator<T>::Discriminator(int64_t input_channels, int64_t base_width, const std::string& prefix, uint64_t seed)
    : prefix_(prefix) {
  std::mt19937_64 rng(seed);
  int64_t c_in = input_channels;
  // widths: W, 2W, 4W, 4W, then a single-channel head
  for (int i = 0; i <= kLayers; ++i) {
    const bool head = i == kLayers;
    const int64_t c_out = head ? 1 : base_width << std::min(i, 2);
    const int64_t k = head ? 1 : kKernel;
    const std::string name = prefix + (head ? ".head" : ".conv" + std::to_string(i));
    const double gain = head ? 1.0 : std::sqrt(2.0 / (1.0 + kSlope * kSlope));
    std::normal_distribution<double> dist(0.0, gain / std::sqrt(double(c_in * k * k)));
    Tensor<T> w({c_out, c_in, k, k});
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    weights_.push_back(Param<T>{name + ".weight", std::move(w), false});
    biases_.push_back(Param<T>{name + ".bias", Tensor<T>({c_out}, T{0}), false});
    c_in = c_out;
  }
}

template <typename T>
Var<T> Discriminator<T>::forward(Var<T> x, Binding<T>& bind) const {
  Var<T> a = x;
  for (size_t i = 0; i < weights_.size(); ++i) {
    const bool head = i + 1 == weights_.size();
    a = ops::conv2d(a, bind(weights_[i]), head ? 1 : 2, head ? 0 : 1);
    a = ops::channel_bias(a, bind(biases_[i]));
    if (!head) a = ops::lrelu(a, T(kSlope));
  }
  return a;
}

template <typename T>
Tensor<T> Discriminator<T>::infer(const Tensor<T>& x) const {
  Tape<T> tape;
  Binding<T> bind(tape, false, false);
  return forward(tape.constant(x), bind).value();
}

template <typename T>
std::vector<Param<T>*> Discriminator<T>::parameters() {
  std::vector<Param<T>*> out;
  for (size_t i = 0; i < weights_.size(); ++i) {
    out.push_back(&weights_[i]);
    out.push_back(&biases_[i]);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> Discriminator<T>::parameters() const {
  auto mut = const_cast<Discriminator*>(this)->parameters();
  return {mut.begin(), mut.end()};
}

template class Discriminator<float>;
template class Discriminator<double>;

}  // namespace gansearch
