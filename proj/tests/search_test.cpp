// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "gansearch/rng.hpp"
#include "gansearch/search.hpp"
#include "gansearch/weights.hpp"

using namespace gansearch;
namespace fs = std::filesystem;

namespace {

const SpeedModel& model() {
  static const SpeedModel m = [] {
    auto configs = sample_block_configs(600, BenchSpace{}, 7);
    SpeedTrainConfig tc;
    tc.epochs = 80;
    return train_speed_model(synth_latency_dataset(configs, OracleCoeffs{}, 0.0, 11), tc);
  }();
  return m;
}

SearchConfig small_config() {
  SearchConfig c;
  c.seed = 9;
  c.supernet.image_size = 16;
  c.supernet.base_width = 4;
  c.supernet.down_stages = 1;
  c.supernet.up_stages = 1;
  c.supernet.blocks = 2;
  c.discriminator_width = 4;
  c.iterations = 10;
  c.checkpoint_every = 4;
  c.latency_weight = 5.0;
  return c;
}

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gansearch_search_" + name);
  fs::remove_all(p);
  return p.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<Tensor<float>> snapshot(SearchState& s) {
  std::vector<Tensor<float>> out;
  for (const Param<float>* p : s.all_params()) out.push_back(p->value);
  return out;
}

bool bitwise_equal(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.data().data(), b.data().data(), a.data().size() * sizeof(float)) == 0;
}

}  // namespace

TEST(Schedule, ConstantThenLinearDecay) {
  EXPECT_EQ(lr_at(0, 2e-4, 200000), 2e-4);
  EXPECT_EQ(lr_at(99999, 2e-4, 200000), 2e-4);
  EXPECT_EQ(lr_at(100000, 2e-4, 200000), 2e-4);
  EXPECT_DOUBLE_EQ(lr_at(150000, 2e-4, 200000), 1e-4);
  EXPECT_EQ(lr_at(200000, 2e-4, 200000), 0.0);
  double prev = lr_at(0, 1.0, 1000);
  for (int64_t i = 1; i <= 1000; ++i) {
    const double lr = lr_at(i, 1.0, 1000);
    EXPECT_LE(lr, prev);
    prev = lr;
  }
}

TEST(Schedule, RejectsOddTotalAndOutOfRange) {
  EXPECT_THROW(lr_at(0, 1.0, 7), std::invalid_argument);
  EXPECT_THROW(lr_at(-1, 1.0, 8), std::invalid_argument);
  EXPECT_THROW(lr_at(9, 1.0, 8), std::invalid_argument);
}

TEST(SearchConfigCheck, RejectsBadValues) {
  auto bad = [](auto mutate) {
    SearchConfig c = small_config();
    mutate(c);
    EXPECT_THROW(c.validate(), ConfigError);
  };
  bad([](SearchConfig& c) { c.iterations = 11; });
  bad([](SearchConfig& c) { c.budget_ms = 0.0; });
  bad([](SearchConfig& c) { c.loss.cam_enabled = true; });
  bad([](SearchConfig& c) { c.latency_weight = -1; });
  bad([](SearchConfig& c) { c.batch_size = 0; });
  bad([](SearchConfig& c) { c.supernet.blocks = -1; });
  bad([](SearchConfig& c) { c.supernet.image_size = 8; });
  EXPECT_NO_THROW(small_config().validate());
}

TEST(Dataset, DeterministicAndInRange) {
  TwoStyleDataset a(8, 3), b(8, 3), c(8, 4);
  const Tensor<float> x = a.image(Domain::x, 17);
  EXPECT_TRUE(bitwise_equal(x, b.image(Domain::x, 17)));
  EXPECT_FALSE(bitwise_equal(x, c.image(Domain::x, 17)));
  EXPECT_EQ(x.shape(), (Shape{3, 8, 8}));
  for (float v : a.batch(Domain::y, 0, 4).data()) {
    EXPECT_GE(v, -1.0f);
    EXPECT_LE(v, 1.0f);
  }
}

class SearchStep : public ::testing::Test {
 protected:
  SearchConfig cfg = small_config();
  TwoStyleDataset data{16, 5};
  SearchState st = build_search_state(cfg);

  void SetUp() override { set_budget(st, cfg, model()); }
};

TEST_F(SearchStep, RecordIsFiniteAndDecomposes) {
  for (int i = 0; i < 3; ++i) {
    const StepRecord r = search_step(st, training_batch(data, uint64_t(i), 1), cfg, &model());
    EXPECT_EQ(r.iteration, i);
    for (double v : {r.report.total, r.t_pred, r.latency_loss, r.search_total, r.d_loss}) EXPECT_TRUE(std::isfinite(v));
    EXPECT_NEAR(r.search_total, r.report.total + r.latency_loss, 1e-4 * std::abs(r.search_total));
    EXPECT_NEAR(r.latency_loss, cfg.latency_weight * std::max(0.0, r.t_pred - st.budget_ms), 1e-5);
  }
  EXPECT_EQ(st.iteration, 3);
  EXPECT_EQ(st.history.size(), 3u);
}

TEST_F(SearchStep, BudgetIsFractionOfInitialPrediction) {
  EXPECT_GT(st.initial_t_pred, 0.0);
  EXPECT_DOUBLE_EQ(st.budget_ms, 0.4 * st.initial_t_pred);
  cfg.budget_ms = 123.0;
  set_budget(st, cfg, model());
  EXPECT_EQ(st.budget_ms, 123.0);
}

TEST_F(SearchStep, InactiveHingeHasZeroLatencyLoss) {
  st.budget_ms = st.initial_t_pred * 10;
  const StepRecord r = search_step(st, training_batch(data, 0, 1), cfg, &model());
  EXPECT_EQ(r.latency_loss, 0.0);
  EXPECT_EQ(r.search_total, r.report.total);
}

TEST_F(SearchStep, FrozenArchitectureIsBitwiseUnchanged) {
  cfg.freeze_arch = true;
  std::vector<Tensor<float>> before;
  for (const Param<float>* p : st.arch_params()) before.push_back(p->value);
  for (int i = 0; i < 3; ++i) search_step(st, training_batch(data, uint64_t(i), 1), cfg, &model());
  const auto after = st.arch_params();
  ASSERT_EQ(after.size(), before.size());
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bitwise_equal(before[i], after[i]->value)) << after[i]->name;
}

TEST_F(SearchStep, FrozenSteMatchesPinnedForNetworkWeights) {
  cfg.freeze_arch = true;
  SearchState pinned = st;
  for (int i = 0; i < 3; ++i) {
    const Batch b = training_batch(data, uint64_t(i), 1);
    const StepRecord a = search_step(st, b, cfg, &model(), ArchMode::ste);
    const StepRecord p = search_step(pinned, b, cfg, &model(), ArchMode::pinned);
    EXPECT_EQ(a.search_total, p.search_total);
  }
  const auto x = snapshot(st), y = snapshot(pinned);
  for (size_t i = 0; i < x.size(); ++i) EXPECT_TRUE(bitwise_equal(x[i], y[i]));
}

TEST_F(SearchStep, ArchitectureMovesWhenTrained) {
  std::vector<Tensor<float>> before;
  for (const Param<float>* p : st.arch_params()) before.push_back(p->value);
  search_step(st, training_batch(data, 0, 1), cfg, &model());
  bool moved = false;
  const auto after = st.arch_params();
  for (size_t i = 0; i < before.size(); ++i) moved |= !bitwise_equal(before[i], after[i]->value);
  EXPECT_TRUE(moved);
}

TEST_F(SearchStep, NonFiniteStepLeavesStateUntouched) {
  search_step(st, training_batch(data, 0, 1), cfg, &model());
  const auto before = snapshot(st);
  const auto m = st.opt_net.first_moments();
  Batch b = training_batch(data, 1, 1);
  b.x.data()[0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(search_step(st, b, cfg, &model()), NonFiniteError);
  const auto after = snapshot(st);
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bitwise_equal(before[i], after[i]));
  for (size_t i = 0; i < m.size(); ++i) EXPECT_TRUE(bitwise_equal(m[i], st.opt_net.first_moments()[i]));
  EXPECT_EQ(st.iteration, 1);
  EXPECT_EQ(st.opt_d.steps(), 1);
  EXPECT_EQ(st.history.size(), 1u);
}

TEST_F(SearchStep, WithoutModelThereIsNoLatencyTerm) {
  const StepRecord r = search_step(st, training_batch(data, 0, 1), cfg, nullptr);
  EXPECT_EQ(r.t_pred, 0.0);
  EXPECT_EQ(r.search_total, r.report.total);
}

TEST(RunSearch, RejectsUntrainedModel) {
  EXPECT_THROW(run_search(small_config(), SpeedModel{}, TwoStyleDataset(16, 1)), std::invalid_argument);
}

TEST(RunSearch, TwoRunsAreByteIdentical) {
  const SearchConfig cfg = small_config();
  const std::string a = temp_dir("det_a"), b = temp_dir("det_b");
  const TwoStyleDataset data(16, derive_seed(cfg.seed, 5));
  run_search(cfg, model(), data, {a, "{}\n", {}});
  run_search(cfg, model(), data, {b, "{}\n", {}});
  for (const char* f : {"log.txt", "arch.json", "weights.bin", "config.json", "checkpoints/iter_000004/weights.bin",
                        "checkpoints/iter_000010/optimizer.bin"}) {
    const std::string x = slurp(fs::path(a) / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(fs::path(b) / f)) << f;
  }
  EXPECT_FALSE(fs::exists(fs::path(a) / "checkpoints/iter_000012"));
  std::ifstream log(fs::path(a) / "log.txt");
  int lines = 0;
  for (std::string line; std::getline(log, line);) {
    EXPECT_EQ(line.rfind("iter=" + std::to_string(lines) + " ", 0), 0u);
    ++lines;
  }
  EXPECT_EQ(lines, 10);
}

TEST(RunSearch, CheckpointRoundTripResumesIdentically) {
  SearchConfig cfg = small_config();
  const TwoStyleDataset data(16, 2);
  SearchState st = build_search_state(cfg);
  set_budget(st, cfg, model());
  for (int i = 0; i < 3; ++i) search_step(st, training_batch(data, uint64_t(i), 1), cfg, &model());
  const std::string dir = temp_dir("ckpt");
  save_checkpoint(st, dir, &model(), "");
  SearchState back = load_checkpoint(dir, cfg);
  EXPECT_EQ(back.iteration, 3);
  EXPECT_EQ(back.budget_ms, st.budget_ms);
  const auto x = snapshot(st), y = snapshot(back);
  for (size_t i = 0; i < x.size(); ++i) EXPECT_TRUE(bitwise_equal(x[i], y[i]));
  const StepRecord r1 = search_step(st, training_batch(data, 3, 1), cfg, &model());
  const StepRecord r2 = search_step(back, training_batch(data, 3, 1), cfg, &model());
  EXPECT_EQ(format_record(r1), format_record(r2));
  const auto x2 = snapshot(st), y2 = snapshot(back);
  for (size_t i = 0; i < x2.size(); ++i) EXPECT_TRUE(bitwise_equal(x2[i], y2[i]));
}

TEST(RunSearch, MissingCheckpointFileIsReported) {
  const std::string dir = temp_dir("missing");
  fs::create_directories(dir);
  try {
    load_model_dir(dir, small_config());
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("arch.json"), std::string::npos);
  }
}

TEST(Finetune, ZeroIterationsKeepsWeightsAndArchitecture) {
  SearchConfig cfg = small_config();
  const TwoStyleDataset data(16, 2);
  const SearchResult res = run_search(cfg, model(), data);
  SearchState ft = finetune_state(res.state);
  const auto before = snapshot(ft);
  finetune(ft, cfg, 0, data, 10);
  const auto after = snapshot(ft);
  for (size_t i = 0; i < before.size(); ++i) EXPECT_TRUE(bitwise_equal(before[i], after[i]));
  EXPECT_EQ(ft.g.describe().macs, res.descriptor.macs);
}

TEST(Finetune, TrainingKeepsTheDescriptor) {
  SearchConfig cfg = small_config();
  const TwoStyleDataset data(16, 2);
  const SearchResult res = run_search(cfg, model(), data);
  SearchState ft = finetune_state(res.state);
  std::ostringstream log;
  finetune(ft, cfg, 4, data, 10, &log);
  EXPECT_EQ(ft.iteration, 4);
  EXPECT_FALSE(ft.g.searchable());
  ArchDescriptor d = ft.g.describe();
  d.predicted_latency_ms = res.descriptor.predicted_latency_ms;
  EXPECT_EQ(d, res.descriptor);
  EXPECT_NE(log.str().find("iter=3 "), std::string::npos);
}

TEST(Export, RoundTripMatchesEvaluation) {
  SearchConfig cfg = small_config();
  const TwoStyleDataset data(16, derive_seed(cfg.seed, 5));
  const std::string dir = temp_dir("export");
  const SearchResult res = run_search(cfg, model(), data, {dir, "", {}});
  const SearchState loaded = load_model_dir(dir, cfg);
  const SearchState compact = finetune_state(res.state);
  const EvalReport a = evaluate(loaded, cfg, data, 1000, 3, &model());
  const EvalReport b = evaluate(compact, cfg, data, 1000, 3, &model());
  EXPECT_EQ(a.losses.total, b.losses.total);
  EXPECT_EQ(a.macs, res.descriptor.macs);
  EXPECT_GE(a.reduction, 1.0);
  EXPECT_DOUBLE_EQ(a.reduction, double(a.supernet_macs) / double(a.macs));
  EXPECT_NEAR(*a.t_pred_ms, *res.descriptor.predicted_latency_ms, 1e-12);
  EXPECT_NEAR(mean_cycle_loss(loaded, data, 1000, 3), a.losses.cyc, 1e-5);
}

TEST(Weights, RoundTripIsBitwise) {
  WeightsFile f;
  f.entries.push_back({"a.weight", {2, 3}, {1.5f, -0.0f, 3e-38f, 7.f, -2.f, 0.1f}});
  f.entries.push_back({"b", {1}, {42.f}});
  const std::string bytes = serialize_weights(f);
  EXPECT_EQ(bytes.substr(0, 8), std::string(kWeightsMagic));
  EXPECT_EQ(parse_weights(bytes), f);
}

TEST(Weights, CorruptFilesAreRejectedWithOffsets) {
  WeightsFile f;
  f.entries.push_back({"w", {4}, {1, 2, 3, 4}});
  const std::string bytes = serialize_weights(f);
  try {
    parse_weights(bytes.substr(0, bytes.size() - 3));
    FAIL();
  } catch (const WeightsFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("payload truncated"), std::string::npos) << e.what();
  }
  std::string bad = bytes;
  bad[0] = 'X';
  try {
    parse_weights(bad);
    FAIL();
  } catch (const WeightsFormatError& e) {
    EXPECT_NE(std::string(e.what()).find("offset 0"), std::string::npos) << e.what();
  }
}

TEST(Weights, RestoreRequiresEveryParameter) {
  SearchState st = build_search_state(small_config());
  WeightsFile f = collect_weights<float>(st.all_params());
  f.entries.pop_back();
  EXPECT_THROW(restore_weights<float>(f, st.all_params()), WeightsFormatError);
}
