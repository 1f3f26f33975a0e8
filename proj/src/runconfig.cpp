// SPDX-License-Identifier: Apache-2.0
#include "gansearch/runconfig.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace gansearch {
namespace {

using Json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// One JSON object; every key read must be declared, everything else is rejected.
class Section {
 public:
  Section(const Json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(where() + "expected an object");
  }

  template <typename V>
  void read(const char* key, V& dst) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    assign(*it, key, dst);
  }

  template <typename V>
  void read(const char* key, std::optional<V>& dst) {
    seen_.insert(key);
    auto it = obj_.find(key);
    if (it == obj_.end()) return;
    if (it->is_null()) {
      dst.reset();
      return;
    }
    V v{};
    assign(*it, key, v);
    dst = std::move(v);
  }

  Section child(const char* key) {
    seen_.insert(key);
    auto it = obj_.find(key);
    return Section(it == obj_.end() ? empty() : *it, path_ + key + ".");
  }

  void finish() const {
    for (auto it = obj_.begin(); it != obj_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key '" + path_ + it.key() + "'");
    }
  }

 private:
  static const Json& empty() {
    static const Json e = Json::object();
    return e;
  }

  std::string where() const { return path_.empty() ? "config: " : "'" + path_.substr(0, path_.size() - 1) + "': "; }

  [[noreturn]] void type_error(const char* key, const char* want) const {
    throw ConfigError("'" + path_ + key + "': expected " + want);
  }

  void assign(const Json& v, const char* key, bool& dst) const {
    if (!v.is_boolean()) type_error(key, "true or false");
    dst = v.get<bool>();
  }
  void assign(const Json& v, const char* key, double& dst) const {
    if (!v.is_number()) type_error(key, "a number");
    dst = v.get<double>();
    if (!std::isfinite(dst)) type_error(key, "a finite number");
  }
  void assign(const Json& v, const char* key, int64_t& dst) const {
    if (!v.is_number_integer()) type_error(key, "an integer");
    dst = v.get<int64_t>();
  }
  void assign(const Json& v, const char* key, int& dst) const {
    int64_t w = 0;
    assign(v, key, w);
    if (w < INT32_MIN || w > INT32_MAX) type_error(key, "a 32-bit integer");
    dst = int(w);
  }
  void assign(const Json& v, const char* key, uint64_t& dst) const {
    if (!v.is_number_unsigned()) type_error(key, "a non-negative integer");
    dst = v.get<uint64_t>();
  }
  void assign(const Json& v, const char* key, std::string& dst) const {
    if (!v.is_string()) type_error(key, "a string");
    dst = v.get<std::string>();
  }

  const Json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string resolve(const std::string& path, const std::string& base_dir) {
  if (path.empty()) throw ConfigError("empty path");
  fs::path p(path);
  if (p.is_relative() && !base_dir.empty()) p = fs::path(base_dir) / p;
  return p.lexically_normal().string();
}

void validate(const RunConfig& c) {
  c.search.validate();
  if (!(c.speed.oracle.c0 > 0) || !(c.speed.oracle.c1 >= 0) || !(c.speed.oracle.c2 >= 0)) {
    throw ConfigError("'speed.oracle': c0 must be > 0, c1 and c2 >= 0");
  }
  if (!(c.speed.noise_std >= 0)) throw ConfigError("'speed.noise_std' must be >= 0");
  if (c.speed.samples < 1) throw ConfigError("'speed.samples' must be >= 1");
  const SpeedTrainConfig& t = c.speed_train;
  if (!(t.split > 0 && t.split < 1)) throw ConfigError("'speed.train.split' must be in (0, 1)");
  if (t.epochs < 1 || t.hidden_layers < 1 || t.hidden_units < 1 || t.batch_size < 1) {
    throw ConfigError("'speed.train': epochs, hidden_layers, hidden_units and batch_size must be >= 1");
  }
  if (!(t.lr > 0)) throw ConfigError("'speed.train.lr' must be > 0");
  if (c.finetune_iterations < 0 || c.finetune_iterations % 2 != 0) {
    throw ConfigError("'finetune.iterations' must be even and >= 0");
  }
  if (c.eval_samples < 1) throw ConfigError("'eval.samples' must be >= 1");
}

}  // namespace

RunConfig parse_run_config(const std::string& text, const std::string& base_dir) {
  Json doc;
  try {
    doc = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  RunConfig c;
  SearchConfig& s = c.search;
  Section root(doc, "");
  root.read("seed", s.seed);
  root.read("output_dir", c.output_dir);

  Section net = root.child("supernet");
  SupernetConfig& n = s.supernet;
  net.read("input_channels", n.input_channels);
  net.read("image_size", n.image_size);
  net.read("base_width", n.base_width);
  net.read("down_stages", n.down_stages);
  net.read("up_stages", n.up_stages);
  net.read("blocks", n.blocks);
  net.read("prune_encoder", n.prune_encoder);
  net.read("prune_trunk", n.prune_trunk);
  net.read("prune_blocks", n.prune_blocks);
  net.read("prune_decoder", n.prune_decoder);
  net.read("search_depth", n.search_depth);
  net.read("mask_threshold", n.mask_threshold);
  net.finish();

  root.read("discriminator_width", s.discriminator_width);

  Section loss = root.child("loss");
  loss.read("lambda1", s.loss.lambda1);
  loss.read("lambda2", s.loss.lambda2);
  loss.read("lambda3", s.loss.lambda3);
  loss.read("lambda4", s.loss.lambda4);
  loss.read("cam_enabled", s.loss.cam_enabled);
  std::string convention = to_string(s.convention);
  loss.read("convention", convention);
  s.convention = gan_convention_from_string(convention);
  loss.finish();

  Section lat = root.child("latency");
  lat.read("budget_ms", s.budget_ms);
  lat.read("budget_fraction", s.budget_fraction);
  lat.read("weight", s.latency_weight);
  lat.read("warmup", s.latency_warmup);
  lat.finish();

  Section sched = root.child("schedule");
  sched.read("iterations", s.iterations);
  sched.read("base_lr", s.base_lr);
  sched.read("arch_lr", s.arch_lr);
  sched.read("batch_size", s.batch_size);
  sched.read("checkpoint_every", s.checkpoint_every);
  sched.read("freeze_arch", s.freeze_arch);
  sched.finish();

  Section speed = root.child("speed");
  speed.read("csv", c.speed.csv);
  speed.read("model", c.speed_model);
  Section oracle = speed.child("oracle");
  oracle.read("c0", c.speed.oracle.c0);
  oracle.read("c1", c.speed.oracle.c1);
  oracle.read("c2", c.speed.oracle.c2);
  oracle.finish();
  speed.read("noise_std", c.speed.noise_std);
  speed.read("samples", c.speed.samples);
  speed.read("sample_seed", c.speed.sample_seed);
  Section train = speed.child("train");
  train.read("split", c.speed_train.split);
  train.read("epochs", c.speed_train.epochs);
  train.read("lr", c.speed_train.lr);
  train.read("seed", c.speed_train.seed);
  train.read("hidden_layers", c.speed_train.hidden_layers);
  train.read("hidden_units", c.speed_train.hidden_units);
  train.read("batch_size", c.speed_train.batch_size);
  train.finish();
  speed.finish();

  Section ft = root.child("finetune");
  ft.read("iterations", c.finetune_iterations);
  ft.finish();

  Section ev = root.child("eval");
  ev.read("offset", c.eval_offset);
  ev.read("samples", c.eval_samples);
  ev.finish();
  root.finish();

  if (c.speed.csv) c.speed.csv = resolve(*c.speed.csv, base_dir);
  if (c.speed_model) c.speed_model = resolve(*c.speed_model, base_dir);
  c.output_dir = resolve(c.output_dir, base_dir);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), fs::absolute(fs::path(path)).parent_path().string());
}

std::string run_config_to_json(const RunConfig& c) {
  const SearchConfig& s = c.search;
  const SupernetConfig& n = s.supernet;
  auto opt = [](const auto& v) { return v ? Json(*v) : Json(nullptr); };
  Json doc;
  doc["seed"] = s.seed;
  doc["output_dir"] = c.output_dir;
  doc["supernet"] = {{"input_channels", n.input_channels}, {"image_size", n.image_size},
                     {"base_width", n.base_width},         {"down_stages", n.down_stages},
                     {"up_stages", n.up_stages},           {"blocks", n.blocks},
                     {"prune_encoder", n.prune_encoder},   {"prune_trunk", n.prune_trunk},
                     {"prune_blocks", n.prune_blocks},     {"prune_decoder", n.prune_decoder},
                     {"search_depth", n.search_depth},     {"mask_threshold", n.mask_threshold}};
  doc["discriminator_width"] = s.discriminator_width;
  doc["loss"] = {{"lambda1", s.loss.lambda1},         {"lambda2", s.loss.lambda2},
                 {"lambda3", s.loss.lambda3},         {"lambda4", s.loss.lambda4},
                 {"cam_enabled", s.loss.cam_enabled}, {"convention", to_string(s.convention)}};
  doc["latency"] = {{"budget_ms", opt(s.budget_ms)},
                    {"budget_fraction", s.budget_fraction},
                    {"weight", s.latency_weight},
                    {"warmup", s.latency_warmup}};
  doc["schedule"] = {{"iterations", s.iterations},   {"base_lr", s.base_lr},
                     {"arch_lr", s.arch_lr},         {"batch_size", s.batch_size},
                     {"checkpoint_every", s.checkpoint_every}, {"freeze_arch", s.freeze_arch}};
  doc["speed"] = {{"csv", opt(c.speed.csv)},
                  {"model", opt(c.speed_model)},
                  {"oracle", {{"c0", c.speed.oracle.c0}, {"c1", c.speed.oracle.c1}, {"c2", c.speed.oracle.c2}}},
                  {"noise_std", c.speed.noise_std},
                  {"samples", c.speed.samples},
                  {"sample_seed", c.speed.sample_seed},
                  {"train",
                   {{"split", c.speed_train.split},
                    {"epochs", c.speed_train.epochs},
                    {"lr", c.speed_train.lr},
                    {"seed", c.speed_train.seed},
                    {"hidden_layers", c.speed_train.hidden_layers},
                    {"hidden_units", c.speed_train.hidden_units},
                    {"batch_size", c.speed_train.batch_size}}}};
  doc["finetune"] = {{"iterations", c.finetune_iterations}};
  doc["eval"] = {{"offset", c.eval_offset}, {"samples", c.eval_samples}};
  return doc.dump(2) + "\n";
}

std::string default_run_config_json() {
  RunConfig c;
  c.output_dir = "out";
  return run_config_to_json(c);
}

}  // namespace gansearch
