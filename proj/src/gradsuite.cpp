// SPDX-License-Identifier: Apache-2.0
#include "gansearch/gradsuite.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "gansearch/generator.hpp"
#include "gansearch/gradcheck.hpp"
#include "gansearch/ops.hpp"
#include "gansearch/rng.hpp"

namespace gansearch {
namespace {

namespace o = ops;
using S = std::span<const Var<double>>;
using Rng = std::mt19937_64;
using Maker = std::function<std::vector<Tensor<double>>(Rng&)>;

Tensor<double> uniform(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Values in +-[0.1, 1]: kinked ops are never probed within eps of 0.
Tensor<double> away_from_zero(Shape shape, Rng& rng) {
  std::uniform_real_distribution<double> mag(0.1, 1.0);
  std::bernoulli_distribution sign(0.5);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = sign(rng) ? mag(rng) : -mag(rng);
  return t;
}

Var<double> contract(Var<double> y, uint64_t seed) {
  Rng rng(seed);
  return o::sum(o::mul(y, y.tape->constant(uniform(y.shape(), rng))));
}

Shape small_shape(Rng& rng) {
  std::uniform_int_distribution<int64_t> d(1, 5);
  return Shape{d(rng), d(rng)};
}

GradSuiteEntry run_entry(const std::string& name, const ScalarProgram& prog, const Maker& make, int trials,
                         uint64_t seed) {
  Rng rng(seed);
  GradSuiteEntry e{name, trials, 0, 0.0};
  for (int t = 0; t < trials; ++t) {
    const auto r = finite_diff_check(prog, make(rng));
    e.worst = std::max(e.worst, r.max_rel_error);
    e.coords += r.coords_checked;
  }
  return e;
}

double kink_margin(const Tape<double>& tape) {
  double margin = INFINITY;
  for (size_t id = 0; id < tape.size(); ++id) {
    const std::string& op = tape.op_name(int(id));
    if (op != "relu" && op != "abs" && op != "lrelu") continue;
    for (double v : tape.value(tape.inputs(int(id)).front()).data()) margin = std::min(margin, std::abs(v));
  }
  return margin;
}

SupernetConfig composed_config() {
  SupernetConfig c;
  c.image_size = 8;
  c.base_width = 3;
  c.down_stages = 1;
  c.up_stages = 1;
  c.blocks = 2;
  return c;
}

GradSuiteEntry generator_entry(const GradSuiteOptions& opt) {
  GradSuiteEntry e{"generator", opt.trials, 0, 0.0};
  Rng rng(derive_seed(opt.seed, 99));
  for (int t = 0; t < opt.trials; ++t) {
    auto g = Generator<double>::supernet(composed_config(), "G", rng());
    std::vector<Param<double>*> net;
    for (Param<double>* p : g.parameters()) {
      if (p->arch) {
        for (auto& v : p->value.data()) v = std::uniform_real_distribution<double>(0.2, 1.0)(rng);
      } else {
        net.push_back(p);
      }
    }
    const uint64_t contract_seed = rng();
    ScalarProgram prog = [&](Tape<double>& tape, S in) {
      Binding<double> bind(tape, false, false);
      for (size_t i = 0; i < net.size(); ++i) bind.assign(*net[i], in[i + 1]);
      return contract(g.forward(in[0], bind, ArchMode::pinned), contract_seed);
    };
    std::vector<Tensor<double>> point;
    for (int attempt = 0;; ++attempt) {
      point.assign(1, uniform({2, 3, 8, 8}, rng));
      for (Param<double>* p : net) {
        Tensor<double> v = p->value;
        for (auto& x : v.data()) x += std::normal_distribution<double>(0.0, 0.1)(rng);
        point.push_back(std::move(v));
      }
      Tape<double> probe;
      std::vector<Var<double>> leaves;
      for (const auto& p : point) leaves.push_back(probe.leaf(p, false));
      prog(probe, leaves);
      if (kink_margin(probe) >= opt.kink_margin || attempt == 100) break;
    }
    GradCheckOptions gc;
    gc.max_coords_per_tensor = 4;
    gc.seed = rng();
    const auto r = finite_diff_check(prog, point, gc);
    e.worst = std::max(e.worst, r.max_rel_error);
    e.coords += r.coords_checked;
  }
  return e;
}

}  // namespace

double GradSuiteReport::worst() const {
  double w = 0.0;
  for (const auto& e : entries) w = std::max(w, e.worst);
  return w;
}

GradSuiteReport run_gradient_suite(const GradSuiteOptions& opt) {
  GradSuiteReport report;
  uint64_t stream = 0;
  auto add = [&](const std::string& name, const ScalarProgram& prog, const Maker& make) {
    report.entries.push_back(run_entry(name, prog, make, opt.trials, derive_seed(opt.seed, stream++)));
  };

  const Maker one = [](Rng& rng) { return std::vector<Tensor<double>>{away_from_zero(small_shape(rng), rng)}; };
  const Maker two = [](Rng& rng) {
    Shape s = small_shape(rng);
    return std::vector<Tensor<double>>{away_from_zero(s, rng), away_from_zero(s, rng)};
  };
  const Maker positive = [](Rng& rng) { return std::vector<Tensor<double>>{uniform(small_shape(rng), rng, 0.2, 2.0)}; };
  add("relu", [](Tape<double>&, S in) { return contract(o::relu(in[0]), 1); }, one);
  add("lrelu", [](Tape<double>&, S in) { return contract(o::lrelu(in[0], 0.2), 1); }, one);
  add("tanh", [](Tape<double>&, S in) { return contract(o::tanh(in[0]), 1); }, one);
  add("abs", [](Tape<double>&, S in) { return contract(o::abs(in[0]), 1); }, one);
  add("square", [](Tape<double>&, S in) { return contract(o::square(in[0]), 1); }, one);
  add("scale", [](Tape<double>&, S in) { return contract(o::scale(in[0], -1.7), 1); }, one);
  add("add_scalar", [](Tape<double>&, S in) { return o::sum(o::square(o::add_scalar(in[0], 0.3))); }, one);
  add("exp", [](Tape<double>&, S in) { return contract(o::exp(in[0]), 1); }, one);
  add("softplus", [](Tape<double>&, S in) { return contract(o::softplus(in[0]), 1); }, one);
  add("log", [](Tape<double>&, S in) { return contract(o::log(in[0]), 1); }, positive);
  add("add", [](Tape<double>&, S in) { return contract(o::add(in[0], in[1]), 1); }, two);
  add("sub", [](Tape<double>&, S in) { return contract(o::sub(in[0], in[1]), 1); }, two);
  add("mul", [](Tape<double>&, S in) { return contract(o::mul(in[0], in[1]), 1); }, two);
  add("sum", [](Tape<double>&, S in) { return o::square(o::sum(in[0])); }, one);
  add("mean", [](Tape<double>&, S in) { return o::square(o::mean(in[0])); }, one);
  add("reshape", [](Tape<double>&, S in) { return contract(o::reshape(in[0], {in[0].value().numel()}), 2); }, one);

  add(
      "conv2d",
      [](Tape<double>&, S in) {
        const int stride = in[2].value()[0] > 0 ? 2 : 1;
        const int k = static_cast<int>(in[1].shape()[2]);
        return contract(o::conv2d(in[0], in[1], stride, k / 2), 5);
      },
      [](Rng& rng) {
        std::uniform_int_distribution<int64_t> c(1, 4), hw(4, 8), kk(0, 2);
        const int64_t k = 2 * kk(rng) + 1;
        const int64_t cin = c(rng);
        return std::vector<Tensor<double>>{uniform({c(rng), cin, hw(rng), hw(rng)}, rng),
                                           uniform({c(rng), cin, k, k}, rng), uniform({1}, rng)};
      });
  add(
      "dense", [](Tape<double>&, S in) { return contract(o::dense(in[0], in[1], in[2]), 5); },
      [](Rng& rng) {
        std::uniform_int_distribution<int64_t> d(1, 6);
        const int64_t b = d(rng), n = d(rng), m = d(rng);
        return std::vector<Tensor<double>>{uniform({b, n}, rng), uniform({m, n}, rng), uniform({m}, rng)};
      });
  add(
      "instance_norm", [](Tape<double>&, S in) { return contract(o::instance_norm(in[0], in[1], in[2], 1e-5), 5); },
      [](Rng& rng) {
        std::uniform_int_distribution<int64_t> d(1, 3), hw(2, 5);
        const int64_t c = d(rng);
        return std::vector<Tensor<double>>{uniform({d(rng), c, hw(rng), hw(rng)}, rng), uniform({c}, rng, 0.5, 1.5),
                                           uniform({c}, rng)};
      });
  const Maker channel = [](Rng& rng) {
    std::uniform_int_distribution<int64_t> d(1, 3), hw(1, 4);
    const int64_t c = d(rng);
    return std::vector<Tensor<double>>{uniform({d(rng), c, hw(rng), hw(rng)}, rng), uniform({c}, rng),
                                       uniform({1}, rng)};
  };
  add("channel_scale", [](Tape<double>&, S in) { return contract(o::channel_scale(in[0], in[1]), 5); }, channel);
  add("channel_bias", [](Tape<double>&, S in) { return contract(o::channel_bias(in[0], in[1]), 5); }, channel);
  add("scalar_mul", [](Tape<double>&, S in) { return contract(o::scalar_mul(in[0], in[2]), 5); }, channel);
  add("upsample2x", [](Tape<double>&, S in) { return contract(o::upsample2x(in[0]), 5); }, channel);
  add(
      "concat",
      [](Tape<double>&, S in) {
        std::vector<Var<double>> parts{in[1], in[2]};
        return contract(o::concat<double>(parts, {in[1].value().numel() + 1}), 5);
      },
      channel);

  report.entries.push_back(generator_entry(opt));
  return report;
}

}  // namespace gansearch
