// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "gansearch/tape.hpp"

namespace gansearch {

/// Least-squares adversarial targets.
///   standard_lsgan: D minimizes E[(D(y)-1)^2] + E[D(G(x))^2], G minimizes E[(D(G(x))-1)^2].
///   paper_eq1:      D minimizes E[D(y)^2] + E[(1-D(G(x)))^2], G minimizes E[D(G(x))^2].
enum class GanConvention { standard_lsgan, paper_eq1 };

const char* to_string(GanConvention c);
GanConvention gan_convention_from_string(const std::string& name);

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct LossWeights {
  double lambda1 = 1.0;     // adversarial, both directions
  double lambda2 = 10.0;    // cycle
  double lambda3 = 10.0;    // identity
  double lambda4 = 1000.0;  // CAM
  bool cam_enabled = false;

  /// Throws ConfigError on a negative weight.
  void validate() const;
};

/// Scalar loss components. cam is ignored unless enabled.
struct LossValues {
  double gan_x = 0;
  double gan_y = 0;
  double cyc = 0;
  double id = 0;
  double cam = 0;
};

struct LossReport {
  double gan_x = 0;
  double gan_y = 0;
  double cyc = 0;
  double id = 0;
  double cam = 0;  // 0 when disabled
  double total = 0;
};

double total_objective(const LossValues& c, const LossWeights& w);
LossReport make_report(const LossValues& c, const LossWeights& w);

template <typename T>
struct AdversarialTerms {
  Var<T> generator;
  Var<T> discriminator;
};

/// Means over every element of the discriminator maps.
template <typename T>
AdversarialTerms<T> lsgan_losses(Var<T> d_real, Var<T> d_fake, GanConvention convention);
/// Generator term alone; needs only the fake scores.
template <typename T>
Var<T> lsgan_generator_term(Var<T> d_fake, GanConvention convention);
/// (generator term, discriminator term).
std::pair<double, double> lsgan_losses(const Tensor<double>& d_real, const Tensor<double>& d_fake,
                                       GanConvention convention);

/// mean |x_rec - x| + mean |y_rec - y|.
template <typename T>
Var<T> cycle_loss(Var<T> x, Var<T> x_rec, Var<T> y, Var<T> y_rec);
/// mean |G(y) - y| + mean |F(x) - x|.
template <typename T>
Var<T> identity_loss(Var<T> g_of_y, Var<T> y, Var<T> f_of_x, Var<T> x);

template <typename T>
struct LossTerms {
  Var<T> gan_x;
  Var<T> gan_y;
  Var<T> cyc;
  Var<T> id;
  std::optional<Var<T>> cam;  // externally computed; required iff cam_enabled
};

/// lambda1 gan_x + lambda1 gan_y + lambda2 cyc + lambda3 id [+ lambda4 cam].
template <typename T>
Var<T> total_objective(const LossTerms<T>& terms, const LossWeights& w);

}  // namespace gansearch
