// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "gansearch/discriminator.hpp"
#include "gansearch/generator.hpp"
#include "gansearch/ops.hpp"

using namespace gansearch;
namespace o = gansearch::ops;

namespace {

template <typename T>
Tensor<T> random_image(Shape shape, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(-1.0, 1.0);
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(d(rng));
  return t;
}

template <typename T>
void randomize_arch(Generator<T>& g, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> d(0.0, 1.0);
  for (auto& m : g.masks()) {
    for (auto& v : m.v.value.data()) v = static_cast<T>(d(rng));
  }
  for (auto& b : g.blocks()) {
    if (b.gate) {
      b.gate->alpha.value[0] = static_cast<T>(d(rng));
      b.gate->alpha.value[1] = static_cast<T>(d(rng));
    }
  }
}

SupernetConfig small_config() {
  SupernetConfig c;
  c.base_width = 4;
  c.blocks = 2;
  c.image_size = 16;
  return c;
}

template <typename T>
Var<T> weighted_sum(Var<T> y, uint64_t seed) {
  return o::sum(o::mul(y, y.tape->constant(random_image<T>(y.shape(), seed))));
}

}  // namespace

TEST(BinarizeMask, ThresholdIsStrict) {
  auto b = binarize_mask(Tensor<double>::vector({1.0, 0.3, 0.5}), 0.5);
  EXPECT_EQ(b, Tensor<double>::vector({1.0, 0.0, 0.0}));
}

TEST(BinarizeMask, InitializationKeepsEverything) {
  auto m = make_width_mask<float>("m", 8);
  EXPECT_FLOAT_EQ(m.threshold, 0.5f);
  EXPECT_EQ(binarize_mask(m.v.value, m.threshold), Tensor<float>({8}, 1.0f));
}

TEST(BinarizeMask, MinimumWidthKeepsArgmax) {
  EXPECT_EQ(binarize_mask(Tensor<double>::vector({0.1, 0.4, 0.2, 0.4}), 0.5),
            Tensor<double>::vector({0.0, 1.0, 0.0, 0.0}));
  EXPECT_EQ(binarize_mask(Tensor<double>::vector({-1.0, -1.0}), 0.5), Tensor<double>::vector({1.0, 0.0}));
}

TEST(MaskApply, IdentityAndZeroing) {
  Tape<double> tape;
  auto x = tape.constant(random_image<double>({2, 2, 3, 3}, 1));
  auto ones = tape.constant(Tensor<double>::vector({1.0, 1.0}));
  EXPECT_EQ(mask_apply(x, ones).value(), x.value());

  auto half = tape.constant(Tensor<double>::vector({1.0, 0.0}));
  auto y = mask_apply(x, half).value();
  for (int64_t b = 0; b < 2; ++b) {
    for (int64_t p = 0; p < 9; ++p) {
      EXPECT_EQ(y[(b * 2 + 0) * 9 + p], x.value()[(b * 2 + 0) * 9 + p]);
      EXPECT_EQ(y[(b * 2 + 1) * 9 + p], 0.0);
    }
  }
  EXPECT_THROW(mask_apply(x, tape.constant(Tensor<double>::vector({1.0, 0.0, 1.0}))), ShapeError);
}

TEST(MaskApply, PrunedChannelWeightsGetZeroGradient) {
  Tape<double> tape;
  auto x = tape.constant(random_image<double>({1, 3, 6, 6}, 2));
  auto w = tape.leaf(random_image<double>({4, 3, 3, 3}, 3), true);
  auto b = tape.constant(Tensor<double>::vector({1.0, 0.0, 1.0, 0.0}));
  auto loss = weighted_sum(o::tanh(mask_apply(o::conv2d(x, w, 1, 1), b)), 4);
  tape.backward(loss);
  const auto gw = tape.grad(w);
  for (int64_t c : {1, 3}) {
    for (int64_t i = 0; i < 27; ++i) EXPECT_EQ(gw[c * 27 + i], 0.0);
  }
  double kept_norm = 0.0;
  for (int64_t i = 0; i < 27; ++i) kept_norm += std::abs(gw[i]);
  EXPECT_GT(kept_norm, 0.0);
}

TEST(GateSelect, Examples) {
  EXPECT_EQ(gate_select(0.3, 0.9), (std::pair{0, 1}));
  EXPECT_EQ(gate_select(0.9, 0.3), (std::pair{1, 0}));
  EXPECT_EQ(gate_select(0.5, 0.5), (std::pair{0, 1}));
  auto gate = make_block_gate<float>("g");
  EXPECT_TRUE(gate.conv_active());
}

TEST(SupernetConfig, Validation) {
  SupernetConfig c;
  EXPECT_NO_THROW(c.validate());
  c.image_size = 30;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = SupernetConfig{};
  c.up_stages = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

class BlockForwardTest : public ::testing::Test {
 protected:
  Generator<double> g = Generator<double>::supernet(small_config(), "G", 5);
  Tensor<double> a = random_image<double>({1, 16, 4, 4}, 6);
};

TEST_F(BlockForwardTest, SkipGateIsIdentity) {
  Tape<double> tape;
  Binding<double> bind(tape, false, false);
  auto x = tape.constant(a);
  GateVars<double> skip{tape.constant(Tensor<double>::scalar(1.0)), tape.constant(Tensor<double>::scalar(0.0))};
  auto y = block_forward<double>(x, g.blocks()[0], bind, nullptr, nullptr, &skip);
  EXPECT_EQ(y.value(), a);
}

TEST_F(BlockForwardTest, ConvGateIsResidualPath) {
  Tape<double> tape;
  Binding<double> bind(tape, false, false);
  auto x = tape.constant(a);
  GateVars<double> conv{tape.constant(Tensor<double>::scalar(0.0)), tape.constant(Tensor<double>::scalar(1.0))};
  auto gated = block_forward<double>(x, g.blocks()[0], bind, nullptr, nullptr, &conv);
  auto plain = block_forward<double>(x, g.blocks()[0], bind, nullptr, nullptr, nullptr);
  EXPECT_EQ(gated.value(), plain.value());
}

TEST_F(BlockForwardTest, WidthMismatchRejected) {
  Tape<double> tape;
  Binding<double> bind(tape, false, false);
  auto x = tape.constant(random_image<double>({1, 8, 4, 4}, 7));
  EXPECT_THROW(block_forward<double>(x, g.blocks()[0], bind, nullptr, nullptr, nullptr), ShapeError);
}

TEST_F(BlockForwardTest, GateGradientEqualsBetaGradient) {
  // Route 1: alpha -> gate_ste -> beta.
  Tape<double> t1;
  Binding<double> b1(t1, false, true);
  auto gates = gate_ste(b1(g.blocks()[0].gate->alpha));
  auto y1 = block_forward<double>(t1.constant(a), g.blocks()[0], b1, nullptr, nullptr, &gates);
  t1.backward(weighted_sum(y1, 9));
  const auto g_alpha = b1.grad(g.blocks()[0].gate->alpha);

  // Route 2: beta as leaves.
  Tape<double> t2;
  Binding<double> b2(t2, false, false);
  GateVars<double> leaves{t2.leaf(Tensor<double>::scalar(0.0), true), t2.leaf(Tensor<double>::scalar(1.0), true)};
  auto y2 = block_forward<double>(t2.constant(a), g.blocks()[0], b2, nullptr, nullptr, &leaves);
  t2.backward(weighted_sum(y2, 9));
  EXPECT_EQ(g_alpha[0], t2.grad(leaves.beta1)[0]);
  EXPECT_EQ(g_alpha[1], t2.grad(leaves.beta2)[0]);
  EXPECT_NE(g_alpha[0], 0.0);
}

TEST(GeneratorForward, DeskShapeAndRange) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 1);
  auto y = g.infer(random_image<float>({1, 3, 32, 32}, 2));
  ASSERT_EQ(y.shape(), (Shape{1, 3, 32, 32}));
  for (float v : y.data()) {
    EXPECT_GT(v, -1.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(GeneratorForward, IndivisibleSizeRejected) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 1);
  EXPECT_THROW(g.infer(random_image<float>({1, 3, 30, 30}, 2)), ShapeError);
  EXPECT_THROW(g.infer(random_image<float>({1, 1, 32, 32}, 2)), ShapeError);
}

TEST(GeneratorForward, InitialMachineryIsTransparent) {
  SupernetConfig plain = small_config();
  plain.prune_encoder = plain.prune_trunk = plain.prune_blocks = plain.prune_decoder = false;
  plain.search_depth = false;
  auto searchable = Generator<double>::supernet(small_config(), "G", 3);
  auto fixed = Generator<double>::supernet(plain, "G", 3);
  EXPECT_TRUE(searchable.searchable());
  EXPECT_FALSE(fixed.searchable());
  const auto x = random_image<double>({2, 3, 16, 16}, 4);
  EXPECT_EQ(searchable.infer(x), fixed.infer(x));
}

TEST(GeneratorForward, AllSkipEqualsTrunkRemoved) {
  auto g = Generator<double>::supernet(small_config(), "G", 3);
  for (auto& b : g.blocks()) b.gate->alpha.value = Tensor<double>::vector({1.0, 0.0});
  const auto x = random_image<double>({1, 3, 16, 16}, 4);

  Tape<double> tape;
  Binding<double> bind(tape, false, false);
  auto a = tape.constant(x);
  for (const auto& u : g.encoder()) a = unit_forward<double>(u, a, bind, nullptr);
  for (const auto& u : g.decoder()) a = unit_forward<double>(u, a, bind, nullptr);
  a = unit_forward<double>(g.head(), a, bind, nullptr);
  EXPECT_EQ(g.infer(x), a.value());
}

TEST(GeneratorForward, SteIdentityForMasks) {
  auto g = Generator<double>::supernet(small_config(), "G", 11);
  std::mt19937_64 rng(12);
  randomize_arch(g, rng);
  const auto x = random_image<double>({1, 3, 16, 16}, 13);

  Tape<double> t1;
  Binding<double> b1(t1, false, true);
  t1.backward(weighted_sum(g.forward(t1.constant(x), b1, ArchMode::ste), 14));

  Tape<double> t2;
  Binding<double> b2(t2, false, false);
  ArchInputs<double> leaves = g.arch_inputs(b2, ArchMode::pinned);
  for (auto& m : leaves.masks) m = t2.leaf(m.value(), true);
  for (auto& gt : leaves.gates) gt = GateVars<double>{t2.leaf(gt->beta1.value(), true), t2.leaf(gt->beta2.value(), true)};
  t2.backward(weighted_sum(g.forward(t2.constant(x), b2, leaves), 14));

  for (size_t s = 0; s < g.masks().size(); ++s) {
    EXPECT_EQ(b1.grad(g.masks()[s].v), t2.grad(leaves.masks[s])) << g.masks()[s].v.name;
  }
  for (size_t i = 0; i < g.blocks().size(); ++i) {
    const auto ga = b1.grad(g.blocks()[i].gate->alpha);
    EXPECT_EQ(ga[0], t2.grad(leaves.gates[i]->beta1)[0]);
    EXPECT_EQ(ga[1], t2.grad(leaves.gates[i]->beta2)[0]);
  }
}

TEST(GeneratorForward, PrunedWeightsZeroGradientAndRevertible) {
  auto g = Generator<double>::supernet(small_config(), "G", 21);
  const auto x = random_image<double>({1, 3, 16, 16}, 22);
  const auto y_full = g.infer(x);

  // Prune channel 1 of the first up stage.
  auto& up = g.decoder()[0];
  auto& mask = g.masks()[static_cast<size_t>(up.mask_slot)];
  const auto weights_before = up.weight.value;
  mask.v.value[1] = 0.2;

  Tape<double> tape;
  Binding<double> bind(tape, true, true);
  tape.backward(weighted_sum(g.forward(tape.constant(x), bind), 23));
  const auto gw = bind.grad(up.weight);
  const int64_t per_out = gw.numel() / up.c_out();
  for (int64_t i = 0; i < per_out; ++i) EXPECT_EQ(gw[per_out + i], 0.0);
  EXPECT_EQ(bind.grad(*up.gamma)[1], 0.0);
  EXPECT_NE(g.infer(x), y_full);

  mask.v.value[1] = 0.9;
  EXPECT_EQ(up.weight.value, weights_before);
  EXPECT_EQ(g.infer(x), y_full);
}

TEST(Extraction, PopcountWidth) {
  SupernetConfig c = small_config();
  c.base_width = 2;  // first down stage has 4 channels
  auto g = Generator<float>::supernet(c, "G", 1);
  auto& mask = g.masks()[static_cast<size_t>(g.encoder()[1].mask_slot)];
  mask.v.value = Tensor<float>::vector({1.0f, 0.1f, 0.9f, 0.7f});
  auto ex = extract_architecture(g);
  EXPECT_EQ(ex.descriptor.stages[1].c_out, 3);
  EXPECT_EQ(ex.descriptor.stages[2].c_in, 3);
}

TEST(Extraction, SkippedBlockRemovedFromMacs) {
  auto g = Generator<float>::supernet(small_config(), "G", 1);
  const auto full = g.describe();
  g.blocks()[1].gate->alpha.value = Tensor<float>::vector({0.9f, 0.3f});
  auto ex = extract_architecture(g);
  EXPECT_FALSE(ex.descriptor.blocks[1].active);
  EXPECT_TRUE(ex.descriptor.blocks[1].widths.empty());
  EXPECT_EQ(ex.compact.blocks().size(), 1u);
  const int64_t trunk = g.config()->trunk_width();
  const int64_t block_macs = 2 * trunk * trunk * 9 * 4 * 4;
  EXPECT_EQ(ex.descriptor.macs, full.macs - block_macs);
}

TEST(Extraction, CompactMatchesMaskedSupernet) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 31);
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 5; ++trial) {
    randomize_arch(g, rng);
    auto ex = extract_architecture(g);
    EXPECT_EQ(ex.compact.describe(), ex.descriptor);
    const auto x = random_image<float>({1, 3, 32, 32}, 33 + trial);
    const auto ys = g.infer(x);
    const auto yc = ex.compact.infer(x);
    float worst = 0.0f;
    for (int64_t i = 0; i < ys.numel(); ++i) worst = std::max(worst, std::abs(ys[i] - yc[i]));
    EXPECT_LT(worst, 1e-5f);
  }
}

TEST(Extraction, ExactAtDoublePrecisionWithoutPruning) {
  auto g = Generator<double>::supernet(small_config(), "G", 41);
  auto ex = extract_architecture(g);
  const auto x = random_image<double>({1, 3, 16, 16}, 42);
  EXPECT_EQ(g.infer(x), ex.compact.infer(x));
}

TEST(CountMacs, HandComputed) {
  LayerCost conv{LayerCost::Kind::conv, 3, 8, 3, 16, 16};
  LayerCost dense{LayerCost::Kind::dense, 100, 10, 1, 1, 1};
  LayerCost mask{LayerCost::Kind::mask, 8, 8, 1, 16, 16};
  EXPECT_EQ(count_macs(std::vector<LayerCost>{conv}), 55296);
  EXPECT_EQ(count_macs(std::vector<LayerCost>{dense}), 1000);
  EXPECT_EQ(count_macs(std::vector<LayerCost>{conv, mask}), 55296);
}

TEST(CountMacs, DeskSupernet) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 1);
  // stem 3->16 k7 @32, down 16->32 @16, down 32->64 @8, 4 blocks of two
  // 64->64 k3 @8, up 64->32 @16, up 32->16 @32, head 16->3 k7 @32.
  const int64_t expected = 3 * 16 * 49 * 1024 + 16 * 32 * 9 * 256 + 32 * 64 * 9 * 64 + 4 * 2 * 64 * 64 * 9 * 64 +
                           64 * 32 * 9 * 256 + 32 * 16 * 9 * 1024 + 16 * 3 * 49 * 1024;
  EXPECT_EQ(g.describe().macs, expected);
}

TEST(CountMacs, MonotoneUnderSingleActivation) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 1);
  std::mt19937_64 rng(51);
  for (int trial = 0; trial < 200; ++trial) {
    randomize_arch(g, rng);
    const int64_t before = g.describe().macs;
    std::uniform_int_distribution<size_t> pick(0, g.masks().size() + g.blocks().size() - 1);
    const size_t which = pick(rng);
    if (which < g.masks().size()) {
      auto& v = g.masks()[which].v.value;
      std::uniform_int_distribution<int64_t> ch(0, v.numel() - 1);
      v[ch(rng)] = 0.9f;
    } else {
      g.blocks()[which - g.masks().size()].gate->alpha.value = Tensor<float>::vector({0.0f, 1.0f});
    }
    EXPECT_GE(g.describe().macs, before);
  }
}

TEST(Descriptor, JsonRoundTrip) {
  auto g = Generator<float>::supernet(SupernetConfig{}, "G", 1);
  std::mt19937_64 rng(3);
  randomize_arch(g, rng);
  auto d = g.describe();
  d.predicted_latency_ms = 0.8125;
  const auto text = to_json(d);
  EXPECT_EQ(descriptor_from_json(text), d);
  EXPECT_EQ(to_json(descriptor_from_json(text)), text);
}

TEST(Descriptor, ZeroBlocksIsValid) {
  SupernetConfig c;
  c.blocks = 0;
  auto d = Generator<float>::supernet(c, "G", 1).describe();
  auto loaded = descriptor_from_json(to_json(d));
  EXPECT_TRUE(loaded.blocks.empty());
}

TEST(Descriptor, ValidationErrors) {
  auto d = Generator<float>::supernet(SupernetConfig{}, "G", 1).describe();
  auto bad = d;
  bad.macs += 1;
  EXPECT_THROW(validate(bad), DescriptorError);
  bad = d;
  bad.stages[2].c_in = 5;
  EXPECT_THROW(validate(bad), DescriptorError);
  bad = d;
  bad.blocks[0].widths = {0, 64};
  EXPECT_THROW(validate(bad), DescriptorError);
  std::string text = to_json(d);
  text.insert(text.find("\"macs\""), "\"extra\": 1, ");
  EXPECT_THROW(descriptor_from_json(text), DescriptorError);
}

TEST(Discriminator, PatchOutputShape) {
  Discriminator<float> d(3, 16, "D", 1);
  auto y = d.infer(random_image<float>({2, 3, 32, 32}, 1));
  EXPECT_EQ(y.shape(), (Shape{2, 1, 2, 2}));
  EXPECT_EQ(d.parameters().size(), 10u);
}
