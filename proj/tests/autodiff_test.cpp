// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gansearch/gradcheck.hpp"
#include "gansearch/gradsuite.hpp"
#include "gansearch/ops.hpp"

using namespace gansearch;
namespace o = gansearch::ops;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = dist(rng);
  return t;
}

// Contracts an arbitrary output against a fixed random weighting so every
// output coordinate contributes to the checked scalar.
Var<double> contract(Var<double> y, uint64_t seed) {
  std::mt19937_64 rng(seed);
  Var<double> w = y.tape->constant(random_tensor(y.shape(), rng));
  return o::sum(o::mul(y, w));
}

}  // namespace

TEST(Tensor, ElementCountMatchesShape) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_THROW(Tensor<float>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), ShapeError);
}

TEST(Conv2d, ScalarKernelScales) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 1, 2, 2}, {1, 2, 3, 4}));
  auto w = tape.constant(Tensor<double>({1, 1, 1, 1}, {2}));
  auto y = o::conv2d(x, w, 1, 0);
  EXPECT_EQ(y.value(), Tensor<double>({1, 1, 2, 2}, {2, 4, 6, 8}));
}

TEST(Conv2d, OnesKernelSums) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0));
  auto w = tape.constant(Tensor<double>({1, 1, 3, 3}, 1.0));
  auto y = o::conv2d(x, w, 1, 0);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
  EXPECT_EQ(y.value()[0], 9.0);
}

TEST(Conv2d, StridedShape) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({2, 3, 16, 16}));
  auto w = tape.constant(Tensor<float>({8, 3, 3, 3}));
  EXPECT_EQ(o::conv2d(x, w, 2, 1).shape(), (Shape{2, 8, 8, 8}));
}

TEST(Conv2d, ShapeFormulaExhaustive) {
  for (int k : {1, 3, 7}) {
    for (int stride : {1, 2}) {
      for (int pad : {0, 1, 3}) {
        for (int64_t h : {7, 8, 9}) {
          Tape<float> tape;
          auto x = tape.constant(Tensor<float>({1, 2, h, h + 1}));
          auto w = tape.constant(Tensor<float>({3, 2, k, k}));
          auto y = o::conv2d(x, w, stride, pad);
          EXPECT_EQ(y.shape()[2], (h + 2 * pad - k) / stride + 1);
          EXPECT_EQ(y.shape()[3], (h + 1 + 2 * pad - k) / stride + 1);
        }
      }
    }
  }
}

TEST(Conv2d, ChannelMismatchIsDescriptive) {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({1, 4, 8, 8}));
  auto w = tape.constant(Tensor<float>({2, 3, 3, 3}));
  try {
    o::conv2d(x, w, 1, 1);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("input channels"), std::string::npos);
  }
  auto big = tape.constant(Tensor<float>({2, 4, 9, 9}));
  EXPECT_THROW(o::conv2d(x, big, 1, 0), ShapeError);
}

TEST(Dense, Examples) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({1, 2}, {1, 2}));
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto zero = tape.constant(Tensor<double>({2}, 0.0));
  EXPECT_EQ(o::dense(x, eye, zero).value(), Tensor<double>({1, 2}, {1, 2}));

  auto w = tape.constant(Tensor<double>({2, 2}, {1, 1, -1, 1}));
  auto b = tape.constant(Tensor<double>({2}, {0.5, -0.5}));
  EXPECT_EQ(o::dense(x, w, b).value(), Tensor<double>({1, 2}, {3.5, 0.5}));

  auto xb = tape.constant(Tensor<double>({4, 16}));
  auto wb = tape.constant(Tensor<double>({8, 16}));
  auto bb = tape.constant(Tensor<double>({8}));
  EXPECT_EQ(o::dense(xb, wb, bb).shape(), (Shape{4, 8}));
  EXPECT_THROW(o::dense(xb, w, b), ShapeError);
}

TEST(InstanceNorm, Examples) {
  Tape<double> tape;
  auto ones = tape.constant(Tensor<double>({1}, 1.0));
  auto zeros = tape.constant(Tensor<double>({1}, 0.0));
  auto constant_plane = tape.constant(Tensor<double>({1, 1, 2, 2}, 3.0));
  for (double eps : {1e-5, 1e-1, 1.0}) {
    EXPECT_EQ(o::instance_norm(constant_plane, ones, zeros, eps).value(), Tensor<double>({1, 1, 2, 2}, 0.0));
  }

  auto plane = tape.constant(Tensor<double>({1, 1, 1, 2}, {1, 3}));
  auto y = o::instance_norm(plane, ones, zeros, 1e-12);
  EXPECT_NEAR(y.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(y.value()[1], 1.0, 1e-9);

  auto gamma = tape.constant(Tensor<double>({1}, 2.0));
  auto beta = tape.constant(Tensor<double>({1}, 1.0));
  auto z = o::instance_norm(plane, gamma, beta, 1e-12);
  EXPECT_NEAR(z.value()[0], -1.0, 1e-9);
  EXPECT_NEAR(z.value()[1], 3.0, 1e-9);
}

TEST(Elementwise, Examples) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::vector({-2.0, 3.0}));
  EXPECT_EQ(o::relu(x).value(), Tensor<double>::vector({0.0, 3.0}));
  EXPECT_EQ(o::tanh(tape.constant(Tensor<double>::scalar(0.0))).value().item(), 0.0);
  EXPECT_DOUBLE_EQ(o::lrelu(tape.constant(Tensor<double>::scalar(-1.0)), 0.2).value().item(), -0.2);
  EXPECT_THROW(o::add(x, tape.constant(Tensor<double>({3}))), ShapeError);
}

TEST(ReverseSweep, SumOfSquares) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1.0, 2.0}), true);
  auto f = o::sum(o::square(x));
  tape.backward(f);
  EXPECT_EQ(tape.grad(x), Tensor<double>::vector({2.0, 4.0}));
}

TEST(ReverseSweep, UnreachedLeafGetsZero) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1.0, 2.0}), true);
  auto z = tape.leaf(Tensor<double>::vector({5.0}), true);
  auto f = o::sum(o::square(z));
  tape.backward(f);
  EXPECT_EQ(tape.grad(x), Tensor<double>::vector({0.0, 0.0}));
}

TEST(ReverseSweep, TanhChainRuleAtZero) {
  Tape<double> tape;
  auto w = tape.leaf(Tensor<double>({1, 3}, 0.0), true);
  auto x = tape.constant(Tensor<double>({1, 3}, {0.5, -1.0, 2.0}));
  auto zero_bias = tape.constant(Tensor<double>({1}, 0.0));
  auto f = o::sum(o::tanh(o::dense(x, w, zero_bias)));
  tape.backward(f);
  EXPECT_EQ(tape.grad(w), Tensor<double>({1, 3}, {0.5, -1.0, 2.0}));
}

TEST(ReverseSweep, NonScalarSeedRejected) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1.0, 2.0}), true);
  EXPECT_THROW(tape.backward(o::square(x)), ShapeError);
}

TEST(ReverseSweep, LinearInSeed) {
  std::mt19937_64 rng(7);
  for (double c : {2.0, 0.25, -4.0, 0.3}) {
    Tape<double> tape;
    auto x = tape.leaf(random_tensor({2, 3, 6, 6}, rng), true);
    auto w = tape.leaf(random_tensor({4, 3, 3, 3}, rng), true);
    auto f = contract(o::tanh(o::conv2d(x, w, 1, 1)), 3);
    tape.backward(f);
    const auto gx = tape.grad(x);
    const auto gw = tape.grad(w);
    tape.backward(f, c);
    const auto gx_c = tape.grad(x);
    const auto gw_c = tape.grad(w);
    const bool power_of_two = std::exp2(std::round(std::log2(std::abs(c)))) == std::abs(c);
    for (int64_t i = 0; i < gx.numel(); ++i) {
      if (power_of_two) {
        EXPECT_EQ(gx_c[i], c * gx[i]);
      } else {
        EXPECT_NEAR(gx_c[i], c * gx[i], 1e-14 * (1 + std::abs(gx[i])));
      }
    }
    for (int64_t i = 0; i < gw.numel(); ++i) {
      if (power_of_two) {
        EXPECT_EQ(gw_c[i], c * gw[i]);
      }
    }
  }
}

TEST(ReverseSweep, TapeIsTopological) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::vector({1.0}), true);
  auto y = o::exp(o::square(x));
  auto z = o::add(y, x);
  for (int id = 0; id <= z.id; ++id) {
    for (int in : tape.inputs(id)) EXPECT_LT(in, id);
  }
}

TEST(GradCheck, LinearFunctionIsExact) {
  ScalarProgram linear = [](Tape<double>&, std::span<const Var<double>> in) {
    return o::sum(o::scale(in[0], 3.5));
  };
  std::mt19937_64 rng(1);
  auto r = finite_diff_check(linear, {random_tensor({5, 4}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-10);
  EXPECT_EQ(r.coords_checked, 20);
}

TEST(GradCheck, ConvTanhComposite) {
  ScalarProgram prog = [](Tape<double>&, std::span<const Var<double>> in) {
    return contract(o::tanh(o::conv2d(in[0], in[1], 1, 1)), 11);
  };
  std::mt19937_64 rng(2);
  auto r = finite_diff_check(prog, {random_tensor({2, 3, 5, 5}, rng), random_tensor({4, 3, 3, 3}, rng)});
  EXPECT_LT(r.max_rel_error, 1e-6);
}

TEST(GradCheck, DoubledGradientIsFlagged) {
  // x^2 with a backward that reports 4x instead of 2x.
  ScalarProgram buggy = [](Tape<double>& tape, std::span<const Var<double>> in) {
    const auto& xv = in[0].value();
    Tensor<double> y(xv.shape());
    for (int64_t i = 0; i < xv.numel(); ++i) y[i] = xv[i] * xv[i];
    const int ix = in[0].id;
    auto sq = tape.record("buggy_square", std::move(y), {ix}, [ix](Tape<double>& t, const Tensor<double>& g) {
      if (auto* gx = t.grad_for(ix)) {
        for (int64_t i = 0; i < g.numel(); ++i) (*gx)[i] += g[i] * 4.0 * t.value(ix)[i];
      }
    });
    return o::sum(sq);
  };
  auto r = finite_diff_check(buggy, {Tensor<double>::vector({0.7, -1.3, 2.0})});
  EXPECT_NEAR(r.max_rel_error, 1.0 / 3.0, 1e-6);
  EXPECT_GT(r.max_rel_error, 1e-4);
}

TEST(GradientSuite, EveryPrimitiveAndComposedGenerator) {
  const GradSuiteReport report = run_gradient_suite();
  ASSERT_EQ(report.entries.size(), 25u);
  for (const auto& e : report.entries) {
    EXPECT_EQ(e.trials, 25) << e.name;
    EXPECT_GT(e.coords, 0) << e.name;
    EXPECT_LT(e.worst, 1e-4) << e.name;
  }
  EXPECT_EQ(report.entries.back().name, "generator");
}
