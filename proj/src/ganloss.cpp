// SPDX-License-Identifier: Apache-2.0
#include "gansearch/ganloss.hpp"

#include "gansearch/ops.hpp"

namespace gansearch {
namespace {

template <typename T>
void require_same_shape(Var<T> a, Var<T> b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(what) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
Var<T> mean_abs_diff(Var<T> a, Var<T> b, const char* what) {
  require_same_shape(a, b, what);
  return ops::mean(ops::abs(ops::sub(a, b)));
}

template <typename T>
Var<T> mean_sq_offset(Var<T> d, T target) {
  return ops::mean(ops::square(ops::add_scalar(d, -target)));
}

}  // namespace

const char* to_string(GanConvention c) { return c == GanConvention::paper_eq1 ? "paper_eq1" : "standard_lsgan"; }

GanConvention gan_convention_from_string(const std::string& name) {
  if (name == "standard_lsgan") return GanConvention::standard_lsgan;
  if (name == "paper_eq1") return GanConvention::paper_eq1;
  throw ConfigError("unknown gan convention '" + name + "'");
}

void LossWeights::validate() const {
  const std::pair<const char*, double> all[] = {
      {"lambda1", lambda1}, {"lambda2", lambda2}, {"lambda3", lambda3}, {"lambda4", lambda4}};
  for (const auto& [name, v] : all) {
    if (!(v >= 0)) throw ConfigError(std::string(name) + " must be >= 0, got " + std::to_string(v));
  }
}

double total_objective(const LossValues& c, const LossWeights& w) {
  w.validate();
  double total = w.lambda1 * c.gan_x + w.lambda1 * c.gan_y + w.lambda2 * c.cyc + w.lambda3 * c.id;
  if (w.cam_enabled) total += w.lambda4 * c.cam;
  return total;
}

LossReport make_report(const LossValues& c, const LossWeights& w) {
  return {c.gan_x, c.gan_y, c.cyc, c.id, w.cam_enabled ? c.cam : 0.0, total_objective(c, w)};
}

template <typename T>
Var<T> lsgan_generator_term(Var<T> d_fake, GanConvention convention) {
  return mean_sq_offset(d_fake, convention == GanConvention::paper_eq1 ? T{0} : T{1});
}

template <typename T>
AdversarialTerms<T> lsgan_losses(Var<T> d_real, Var<T> d_fake, GanConvention convention) {
  const T real_target = convention == GanConvention::paper_eq1 ? T{0} : T{1};
  const T fake_target = T{1} - real_target;
  return {lsgan_generator_term(d_fake, convention),
          ops::add(mean_sq_offset(d_real, real_target), mean_sq_offset(d_fake, fake_target))};
}

std::pair<double, double> lsgan_losses(const Tensor<double>& d_real, const Tensor<double>& d_fake,
                                       GanConvention convention) {
  Tape<double> tape;
  const auto t = lsgan_losses(tape.constant(d_real), tape.constant(d_fake), convention);
  return {t.generator.value().item(), t.discriminator.value().item()};
}

template <typename T>
Var<T> cycle_loss(Var<T> x, Var<T> x_rec, Var<T> y, Var<T> y_rec) {
  return ops::add(mean_abs_diff(x_rec, x, "cycle loss (x)"), mean_abs_diff(y_rec, y, "cycle loss (y)"));
}

template <typename T>
Var<T> identity_loss(Var<T> g_of_y, Var<T> y, Var<T> f_of_x, Var<T> x) {
  return ops::add(mean_abs_diff(g_of_y, y, "identity loss (y)"), mean_abs_diff(f_of_x, x, "identity loss (x)"));
}

template <typename T>
Var<T> total_objective(const LossTerms<T>& terms, const LossWeights& w) {
  w.validate();
  Var<T> total = ops::add(ops::scale(terms.gan_x, T(w.lambda1)), ops::scale(terms.gan_y, T(w.lambda1)));
  total = ops::add(total, ops::scale(terms.cyc, T(w.lambda2)));
  total = ops::add(total, ops::scale(terms.id, T(w.lambda3)));
  if (w.cam_enabled) {
    if (!terms.cam) throw ConfigError("cam_enabled requires a CAM loss term");
    total = ops::add(total, ops::scale(*terms.cam, T(w.lambda4)));
  }
  return total;
}

#define GANSEARCH_INSTANTIATE(T)                                                            \
  template Var<T> lsgan_generator_term(Var<T>, GanConvention);                             \
  template AdversarialTerms<T> lsgan_losses(Var<T>, Var<T>, GanConvention);                \
  template Var<T> cycle_loss(Var<T>, Var<T>, Var<T>, Var<T>);                              \
  template Var<T> identity_loss(Var<T>, Var<T>, Var<T>, Var<T>);                           \
  template Var<T> total_objective(const LossTerms<T>&, const LossWeights&);
GANSEARCH_INSTANTIATE(float)
GANSEARCH_INSTANTIATE(double)
#undef GANSEARCH_INSTANTIATE

}  // namespace gansearch
