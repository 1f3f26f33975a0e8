// SPDX-License-Identifier: Apache-2.0
#include "gansearch/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "gansearch/gradsuite.hpp"
#include "gansearch/rng.hpp"
#include "gansearch/runconfig.hpp"
#include "gansearch/search.hpp"
#include "gansearch/weights.hpp"

namespace gansearch {
namespace {

namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::string out;
  std::optional<uint64_t> seed;
  std::string checkpoint;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

RunConfig effective_config(const Options& o) {
  RunConfig c = o.config.empty() ? parse_run_config("{}", fs::current_path().string()) : load_run_config(o.config);
  if (o.seed) c.search.seed = *o.seed;
  if (!o.out.empty()) c.output_dir = fs::absolute(o.out).lexically_normal().string();
  return c;
}

std::string require_checkpoint(const Options& o) {
  if (o.checkpoint.empty()) throw UsageError("--checkpoint is required");
  return o.checkpoint;
}

std::vector<LatencySample> latency_samples(const RunConfig& c) {
  if (c.speed.csv) return ingest_latency_csv(*c.speed.csv);
  const auto configs = sample_block_configs(size_t(c.speed.samples), BenchSpace{}, c.speed.sample_seed);
  return synth_latency_dataset(configs, c.speed.oracle, c.speed.noise_std, derive_seed(c.speed.sample_seed, 1));
}

std::string default_model_path(const RunConfig& c) { return (fs::path(c.output_dir) / "speed_model.json").string(); }

void report_speed(const SpeedModel& m, std::ostream& out) {
  out << "train_samples=" << m.train_samples << "\n";
  out << "heldout_samples=" << m.heldout_samples << "\n";
  out << "heldout_mean_rel_err=" << fmt(m.heldout_mean_rel_err) << "\n";
  out << (m.heldout_mean_rel_err <= 0.05 ? "heldout_mean_rel_err<=0.05" : "heldout_mean_rel_err>0.05") << "\n";
}

SpeedModel train_and_save(const RunConfig& c, const std::string& path, std::ostream& out) {
  const SpeedModel m = train_speed_model(latency_samples(c), c.speed_train);
  fs::create_directories(fs::absolute(path).parent_path());
  save_speed_model(m, path);
  report_speed(m, out);
  out << "speed_model=" << path << "\n";
  return m;
}

std::optional<SpeedModel> find_model(const RunConfig& c) {
  if (c.speed_model) return load_speed_model(*c.speed_model);
  if (fs::exists(default_model_path(c))) return load_speed_model(default_model_path(c));
  return std::nullopt;
}

void print_eval(const EvalReport& r, std::ostream& out) {
  out << "samples=" << r.samples << "\n";
  out << "macs=" << r.macs << "\n";
  out << "supernet_macs=" << r.supernet_macs << "\n";
  out << "reduction=" << fmt(r.reduction) << "\n";
  out << "t_pred_ms=" << (r.t_pred_ms ? fmt(*r.t_pred_ms) : "na") << "\n";
  out << "gan_x=" << fmt(r.losses.gan_x) << "\n";
  out << "gan_y=" << fmt(r.losses.gan_y) << "\n";
  out << "cycle_l1=" << fmt(r.losses.cyc) << "\n";
  out << "identity_l1=" << fmt(r.losses.id) << "\n";
  out << "total=" << fmt(r.losses.total) << "\n";
  out << "d_y_real=" << fmt(r.d_y_real) << "\n";
  out << "d_y_fake=" << fmt(r.d_y_fake) << "\n";
}

int cmd_bench_gen(const Options& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const auto samples = latency_samples(c);
  fs::create_directories(c.output_dir);
  const std::string path = (fs::path(c.output_dir) / "latency.csv").string();
  write_latency_csv(path, samples);
  out << "source=" << (c.speed.csv ? "csv" : "oracle") << "\n";
  out << "samples=" << samples.size() << "\n";
  out << "latency_csv=" << path << "\n";
  return 0;
}

int cmd_train_speed(const Options& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  train_and_save(c, c.speed_model.value_or(default_model_path(c)), out);
  return 0;
}

int cmd_search(const Options& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  fs::create_directories(c.output_dir);
  const std::string echo = run_config_to_json(c);
  std::ofstream(fs::path(c.output_dir) / "config.json", std::ios::binary) << echo;
  SpeedModel model;
  if (c.speed_model && fs::exists(*c.speed_model)) {
    model = load_speed_model(*c.speed_model);
  } else {
    model = train_and_save(c, c.speed_model.value_or(default_model_path(c)), out);
  }
  const TwoStyleDataset data(c.search.supernet.image_size, derive_seed(c.search.seed, 5));
  const SearchResult res = run_search(c.search, model, data, {c.output_dir, echo, {}});
  out << "iterations=" << res.state.iteration << "\n";
  out << "initial_t_pred_ms=" << fmt(res.state.initial_t_pred) << "\n";
  out << "budget_ms=" << fmt(res.state.budget_ms) << "\n";
  out << "t_pred_ms=" << fmt(*res.descriptor.predicted_latency_ms) << "\n";
  out << "macs=" << res.descriptor.macs << "\n";
  out << "export=" << c.output_dir << "\n";
  if (c.finetune_iterations > 0) {
    SearchState ft = finetune_state(res.state);
    const fs::path dir = fs::path(c.output_dir) / "finetune";
    fs::create_directories(dir);
    std::ofstream log(dir / "log.txt", std::ios::binary);
    const uint64_t offset = uint64_t(c.search.iterations * c.search.batch_size);
    finetune(ft, c.search, c.finetune_iterations, data, offset, &log);
    save_export(ft, res.descriptor, dir.string(), echo);
    out << "finetune_iterations=" << c.finetune_iterations << "\n";
    out << "finetune_export=" << dir.string() << "\n";
  }
  return 0;
}

int cmd_export(const Options& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const SearchState st = load_model_dir(require_checkpoint(o), c.search);
  const std::string dir = o.out.empty() ? (fs::path(c.output_dir) / "export").string() : c.output_dir;
  SearchState compact = st.g.searchable() ? finetune_state(st) : st;
  ArchDescriptor d = compact.g.describe();
  if (const auto m = find_model(c)) d.predicted_latency_ms = predicted_latency(*m, d);
  save_export(compact, d, dir, run_config_to_json(c));
  out << "macs=" << d.macs << "\n";
  out << "t_pred_ms=" << (d.predicted_latency_ms ? fmt(*d.predicted_latency_ms) : "na") << "\n";
  out << "export=" << dir << "\n";
  return 0;
}

int cmd_eval(const Options& o, std::ostream& out) {
  const RunConfig c = effective_config(o);
  const SearchState st = load_model_dir(require_checkpoint(o), c.search);
  const auto model = find_model(c);
  const TwoStyleDataset data(c.search.supernet.image_size, derive_seed(c.search.seed, 5));
  print_eval(evaluate(st, c.search, data, c.eval_offset, c.eval_samples, model ? &*model : nullptr), out);
  return 0;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  GradSuiteOptions opt;
  if (o.seed) opt.seed = *o.seed;
  const GradSuiteReport r = run_gradient_suite(opt);
  for (const auto& e : r.entries) {
    out << "check=" << e.name << " trials=" << e.trials << " coords=" << e.coords << " worst_rel_err=" << fmt(e.worst)
        << "\n";
  }
  out << "worst_rel_err=" << fmt(r.worst()) << "\n";
  const bool ok = r.worst() < 1e-4;
  out << (ok ? "gradcheck=pass" : "gradcheck=fail") << "\n";
  return ok ? 0 : 1;
}

std::string kind_of(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const CsvError*>(&e)) return "csv";
  if (dynamic_cast<const InsufficientDataError*>(&e)) return "insufficient_data";
  if (dynamic_cast<const WeightsFormatError*>(&e)) return "weights_format";
  if (dynamic_cast<const DescriptorError*>(&e)) return "descriptor";
  if (dynamic_cast<const NonFiniteError*>(&e)) return "non_finite";
  if (dynamic_cast<const std::filesystem::filesystem_error*>(&e)) return "io";
  return "runtime";
}

std::string one_line(std::string s) {
  for (char& ch : s) {
    if (ch == '\n' || ch == '\r') ch = ' ';
    if (ch == '"') ch = '\'';
  }
  return s;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& command, const std::string& msg) {
  err << "error kind=" << kind << " command=" << (command.empty() ? "none" : command) << " message=\"" << one_line(msg)
      << "\"\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Latency-driven architecture search for image-translation generators", "gansearch"};
  app.require_subcommand(1);
  Options o;
  uint64_t seed = 0;
  struct Command {
    const char* name;
    const char* help;
    int (*run)(const Options&, std::ostream&);
    bool checkpoint;
  };
  const Command commands[] = {
      {"bench-gen", "Write a latency CSV (oracle samples, or the configured CSV passed through)", cmd_bench_gen, false},
      {"train-speed", "Fit the speed model and report its held-out error", cmd_train_speed, false},
      {"search", "Run the architecture search and export the result", cmd_search, false},
      {"export", "Extract the compact generator from a checkpoint", cmd_export, true},
      {"eval", "Report MACs, predicted latency and losses on a held-out stream", cmd_eval, true},
      {"gradcheck", "Run the finite-difference gradient suite", cmd_gradcheck, false},
  };
  std::vector<std::pair<CLI::App*, const Command*>> subs;
  for (const Command& c : commands) {
    CLI::App* sub = app.add_subcommand(c.name, c.help);
    sub->add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--out", o.out, "Output directory (overrides output_dir)");
    sub->add_option("--seed", seed, "Seed (overrides the config)");
    if (c.checkpoint) sub->add_option("--checkpoint", o.checkpoint, "Checkpoint or export directory")->required();
    subs.emplace_back(sub, &c);
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  std::string command;
  try {
    app.parse(rev);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    for (const auto& [sub, c] : subs) {
      if (sub->parsed()) command = c->name;
    }
    report_error(err, "usage", command, e.what());
    return 2;
  }
  for (const auto& [sub, c] : subs) {
    if (!sub->parsed()) continue;
    command = c->name;
    if (sub->count("--seed") > 0) o.seed = seed;
    try {
      return c->run(o, out);
    } catch (const std::exception& e) {
      const std::string kind = kind_of(e);
      report_error(err, kind, command, e.what());
      return kind == "usage" || kind == "config" ? 2 : 1;
    }
  }
  report_error(err, "usage", command, "no command given");
  return 2;
}

}  // namespace gansearch
