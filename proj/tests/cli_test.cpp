// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "gansearch/cli.hpp"
#include "gansearch/runconfig.hpp"

using namespace gansearch;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
  std::map<std::string, std::string> kv;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  Result r{run_cli(args, out, err), out.str(), err.str(), {}};
  std::istringstream lines(r.out);
  for (std::string line; std::getline(lines, line);) {
    const auto eq = line.find('=');
    if (eq != std::string::npos && line.find(' ') == std::string::npos) r.kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return r;
}

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("gansearch_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

std::string write(const fs::path& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
  return path.string();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kSmallConfig = R"({
  "seed": 4,
  "output_dir": "run",
  "supernet": {"image_size": 16, "base_width": 4, "down_stages": 1, "up_stages": 1, "blocks": 2},
  "discriminator_width": 4,
  "latency": {"weight": 5.0},
  "schedule": {"iterations": 6, "checkpoint_every": 3},
  "speed": {"samples": 400, "train": {"epochs": 40}},
  "eval": {"samples": 3}
})";

void expect_error_line(const Result& r, const std::string& kind) {
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(r.err.rfind("error kind=" + kind + " ", 0), 0u) << r.err;
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
}

}  // namespace

TEST(RunConfigParse, DefaultsAndCanonicalEcho) {
  const RunConfig c = parse_run_config("{}", "/base");
  EXPECT_EQ(c.output_dir, "/base/out");
  EXPECT_EQ(c.search.iterations, 5000);
  EXPECT_EQ(c.search.base_lr, 2e-4);
  EXPECT_EQ(c.search.supernet.image_size, 32);
  const std::string echo = run_config_to_json(c);
  EXPECT_EQ(run_config_to_json(parse_run_config(echo, "/elsewhere")), echo);
}

TEST(RunConfigParse, NestedValuesAndRelativePaths) {
  const RunConfig c = parse_run_config(
      R"({"seed": 11, "speed": {"csv": "data/lat.csv", "model": "/abs/m.json", "oracle": {"c1": 1e-7}},
          "loss": {"convention": "paper_eq1", "lambda3": 0.5}, "latency": {"budget_ms": 0.25}})",
      "/cfg");
  EXPECT_EQ(c.search.seed, 11u);
  EXPECT_EQ(*c.speed.csv, "/cfg/data/lat.csv");
  EXPECT_EQ(*c.speed_model, "/abs/m.json");
  EXPECT_EQ(c.speed.oracle.c1, 1e-7);
  EXPECT_EQ(c.speed.oracle.c0, OracleCoeffs{}.c0);
  EXPECT_EQ(c.search.convention, GanConvention::paper_eq1);
  EXPECT_EQ(c.search.loss.lambda3, 0.5);
  EXPECT_EQ(*c.search.budget_ms, 0.25);
}

TEST(RunConfigParse, RejectsUnknownKeysAndBadValues) {
  auto rejects = [](const std::string& text, const std::string& needle) {
    try {
      parse_run_config(text, "/");
      ADD_FAILURE() << text;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  rejects(R"({"sead": 1})", "unknown key 'sead'");
  rejects(R"({"supernet": {"width": 8}})", "unknown key 'supernet.width'");
  rejects(R"({"speed": {"train": {"epoch": 8}}})", "unknown key 'speed.train.epoch'");
  rejects(R"({"schedule": {"iterations": 2.5}})", "'schedule.iterations': expected an integer");
  rejects(R"({"schedule": {"iterations": 7}})", "even");
  rejects(R"({"seed": -1})", "non-negative");
  rejects(R"({"loss": {"convention": "wgan"}})", "wgan");
  rejects(R"({"loss": {"cam_enabled": true}})", "cam_enabled");
  rejects(R"({"latency": {"budget_ms": -3}})", "budget_ms");
  rejects(R"({"speed": {"oracle": {"c0": 0}}})", "c0");
  rejects(R"({"supernet": 3})", "expected an object");
  rejects("{", "not valid JSON");
}

TEST(Cli, UsageErrorsAreOneLine) {
  expect_error_line(run({}), "usage");
  expect_error_line(run({"fly"}), "usage");
  expect_error_line(run({"eval"}), "usage");
  const Result r = run({"eval", "--checkpoint", "/nonexistent/dir"});
  expect_error_line(r, "runtime");
  EXPECT_NE(r.err.find("arch.json"), std::string::npos);
}

TEST(Cli, ConfigErrorsAreOneLine) {
  const std::string dir = temp_dir("badcfg");
  const Result r = run({"bench-gen", "--config", write(fs::path(dir) / "c.json", R"({"speed": {"extra": 1}})")});
  expect_error_line(r, "config");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("speed.extra"), std::string::npos);
}

TEST(Cli, CsvErrorsAreReported) {
  const std::string dir = temp_dir("badcsv");
  write(fs::path(dir) / "lat.csv", "block_kind,c_in,c_out,h_in,w_in,kernel,stride,latency_ms\nconv_stage,1,2,3\n");
  const Result r =
      run({"train-speed", "--config", write(fs::path(dir) / "c.json", R"({"speed": {"csv": "lat.csv"}})")});
  expect_error_line(r, "csv");
  EXPECT_NE(r.err.find("lat.csv:2"), std::string::npos) << r.err;
}

TEST(Cli, TrainSpeedReportsHeldOutError) {
  const std::string dir = temp_dir("speed");
  const Result r = run({"train-speed", "--out", dir});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\nheldout_mean_rel_err<=0.05\n"), std::string::npos) << r.out;
  EXPECT_LE(std::stod(r.kv.at("heldout_mean_rel_err")), 0.05);
  EXPECT_TRUE(fs::exists(fs::path(dir) / "speed_model.json"));
}

TEST(Cli, BenchGenPassesCsvThrough) {
  const std::string dir = temp_dir("bench");
  ASSERT_EQ(run({"bench-gen", "--out", dir + "/a"}).code, 0);
  const std::string csv = slurp(fs::path(dir) / "a" / "latency.csv");
  const std::string cfg = write(fs::path(dir) / "c.json", R"({"speed": {"csv": "a/latency.csv"}})");
  const Result r = run({"bench-gen", "--config", cfg, "--out", dir + "/b"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.kv.at("source"), "csv");
  EXPECT_EQ(slurp(fs::path(dir) / "b" / "latency.csv"), csv);
}

TEST(Cli, SearchExportEvalPipeline) {
  const std::string dir = temp_dir("pipeline");
  const std::string cfg = write(fs::path(dir) / "c.json", kSmallConfig);
  const Result s = run({"search", "--config", cfg});
  ASSERT_EQ(s.code, 0) << s.err;
  const fs::path out = fs::path(dir) / "run";
  for (const char* f : {"config.json", "log.txt", "arch.json", "weights.bin", "speed_model.json",
                        "checkpoints/iter_000003/optimizer.bin", "checkpoints/iter_000006/state.json"}) {
    EXPECT_TRUE(fs::exists(out / f)) << f;
  }

  const Result e = run({"export", "--config", cfg, "--checkpoint", (out / "checkpoints/iter_000006").string()});
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_EQ(e.kv.at("export"), (out / "export").string());
  EXPECT_EQ(e.kv.at("macs"), s.kv.at("macs"));

  const Result v = run({"eval", "--config", cfg, "--checkpoint", (out / "export").string()});
  ASSERT_EQ(v.code, 0) << v.err;
  EXPECT_EQ(v.kv.at("macs"), e.kv.at("macs"));
  EXPECT_EQ(v.kv.at("t_pred_ms"), s.kv.at("t_pred_ms"));
  for (const char* k : {"reduction", "cycle_l1", "identity_l1", "gan_x", "gan_y", "d_y_real", "d_y_fake"}) {
    EXPECT_TRUE(v.kv.count(k)) << k;
  }

  const Result sup = run({"eval", "--config", cfg, "--checkpoint", (out / "checkpoints/iter_000003").string()});
  ASSERT_EQ(sup.code, 0) << sup.err;
  EXPECT_GE(std::stod(sup.kv.at("reduction")), 1.0);
}

TEST(Cli, EchoedConfigReproducesTheRun) {
  const std::string dir = temp_dir("echo");
  const std::string cfg = write(fs::path(dir) / "c.json", kSmallConfig);
  ASSERT_EQ(run({"search", "--config", cfg, "--seed", "21"}).code, 0);
  const fs::path first = fs::path(dir) / "run";
  const std::string echo = (first / "config.json").string();
  EXPECT_NE(slurp(echo).find("\"seed\": 21"), std::string::npos);
  const Result again = run({"search", "--config", echo, "--out", dir + "/rerun"});
  ASSERT_EQ(again.code, 0) << again.err;
  for (const char* f : {"log.txt", "arch.json", "weights.bin"}) {
    EXPECT_EQ(slurp(first / f), slurp(fs::path(dir) / "rerun" / f)) << f;
  }
}

TEST(Cli, SearchDoesNotModifyItsInputs) {
  const std::string dir = temp_dir("inputs");
  ASSERT_EQ(run({"train-speed", "--out", dir}).code, 0);
  const std::string model = (fs::path(dir) / "speed_model.json").string();
  const std::string before = slurp(model);
  const std::string cfg = write(fs::path(dir) / "c.json", std::string(kSmallConfig).replace(
                                                              std::string(kSmallConfig).find("\"samples\": 400"), 14,
                                                              "\"model\": \"speed_model.json\""));
  const std::string cfg_text = slurp(cfg);
  const Result r = run({"search", "--config", cfg});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.kv.count("heldout_mean_rel_err"), 0u);
  EXPECT_EQ(slurp(model), before);
  EXPECT_EQ(slurp(cfg), cfg_text);
}
