// SPDX-License-Identifier: Apache-2.0
#include "gansearch/search.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "gansearch/ops.hpp"
#include "gansearch/rng.hpp"
#include "gansearch/weights.hpp"
#include "json.hpp"

namespace gansearch {
namespace fs = std::filesystem;

namespace {

using Json = nlohmann::ordered_json;

std::vector<Param<float>*> split_params(Generator<float>& g, bool arch) {
  std::vector<Param<float>*> out;
  for (Param<float>* p : g.parameters()) {
    if (p->arch == arch) out.push_back(p);
  }
  return out;
}

std::vector<Tensor<float>> grads_of(const Binding<float>& bind, const std::vector<Param<float>*>& params) {
  std::vector<Tensor<float>> out;
  out.reserve(params.size());
  for (const Param<float>* p : params) out.push_back(bind.grad(*p));
  return out;
}

void require_finite(double v, const std::string& what, int64_t iter) {
  if (!std::isfinite(v)) {
    throw NonFiniteError("iteration " + std::to_string(iter) + ": " + what + " is not finite; step aborted");
  }
}

void require_finite(const std::vector<Tensor<float>>& ts, const std::vector<Param<float>*>& params,
                    const std::string& what, int64_t iter) {
  for (size_t i = 0; i < ts.size(); ++i) {
    for (float v : ts[i].data()) {
      if (!std::isfinite(v)) {
        throw NonFiniteError("iteration " + std::to_string(iter) + ": " + what + " of " + params[i]->name +
                             " is not finite; step aborted");
      }
    }
  }
}

SupernetConfig fixed_width(SupernetConfig c) {
  c.prune_encoder = c.prune_trunk = c.prune_blocks = c.prune_decoder = false;
  c.search_depth = false;
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path);
}

void append_moments(WeightsFile& file, const std::string& group, const Adam<float>& opt,
                    const std::vector<Param<float>*>& params) {
  for (size_t i = 0; i < params.size(); ++i) {
    const auto& m = opt.first_moments()[i];
    const auto& v = opt.second_moments()[i];
    file.entries.push_back({group + ".m/" + params[i]->name, m.shape(), {m.data().begin(), m.data().end()}});
    file.entries.push_back({group + ".v/" + params[i]->name, v.shape(), {v.data().begin(), v.data().end()}});
  }
}

void restore_moments(const WeightsFile& file, const std::string& group, Adam<float>& opt,
                     const std::vector<Param<float>*>& params) {
  for (size_t i = 0; i < params.size(); ++i) {
    for (auto [kind, dst] : {std::pair{".m/", &opt.first_moments()[i]}, std::pair{".v/", &opt.second_moments()[i]}}) {
      const std::string name = group + kind + params[i]->name;
      const WeightEntry* e = file.find(name);
      if (e == nullptr || e->shape != dst->shape()) throw WeightsFormatError("optimizer state missing " + name);
      *dst = Tensor<float>(e->shape, e->data);
    }
  }
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

void SearchConfig::validate() const {
  try {
    supernet.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("supernet: ") + e.what());
  }
  loss.validate();
  if (loss.cam_enabled) throw ConfigError("cam_enabled: no CAM term is available to the search loop");
  if (discriminator_width < 1) throw ConfigError("discriminator_width must be >= 1");
  if (supernet.image_size < (int64_t{1} << Discriminator<float>::kLayers)) {
    throw ConfigError("supernet.image_size must be >= " + std::to_string(1 << Discriminator<float>::kLayers) +
                      " for the discriminator");
  }
  if (budget_ms && !(*budget_ms > 0)) throw ConfigError("budget_ms must be > 0");
  if (!(budget_fraction > 0)) throw ConfigError("budget_fraction must be > 0");
  if (!(latency_weight >= 0)) throw ConfigError("latency_weight must be >= 0");
  if (latency_warmup < 0) throw ConfigError("latency_warmup must be >= 0");
  if (iterations < 0 || iterations % 2 != 0) throw ConfigError("iterations must be even and >= 0");
  if (!(base_lr >= 0) || !(arch_lr >= 0)) throw ConfigError("learning rates must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

double lr_at(int64_t iter, double base_lr, int64_t total) {
  if (total < 0 || total % 2 != 0) throw std::invalid_argument("lr_at: total must be even and >= 0");
  if (iter < 0 || iter > total) throw std::invalid_argument("lr_at: iter outside [0, total]");
  const int64_t half = total / 2;
  if (iter < half) return base_lr;
  return base_lr * (1.0 - double(iter - half) / double(half));
}

std::string format_record(const StepRecord& r) {
  const LossReport& l = r.report;
  return "iter=" + std::to_string(r.iteration) + " gan_x=" + fmt(l.gan_x) + " gan_y=" + fmt(l.gan_y) +
         " cyc=" + fmt(l.cyc) + " id=" + fmt(l.id) + " cam=" + fmt(l.cam) + " total=" + fmt(l.total) +
         " t_pred=" + fmt(r.t_pred) + " latency_loss=" + fmt(r.latency_loss) + " d_loss=" + fmt(r.d_loss);
}

std::vector<Param<float>*> SearchState::network_params() {
  auto out = split_params(g, false);
  const auto fp = split_params(f, false);
  out.insert(out.end(), fp.begin(), fp.end());
  return out;
}

std::vector<Param<float>*> SearchState::arch_params() { return split_params(g, true); }

std::vector<Param<float>*> SearchState::discriminator_params() {
  auto out = d_x.parameters();
  const auto y = d_y.parameters();
  out.insert(out.end(), y.begin(), y.end());
  return out;
}

std::vector<Param<float>*> SearchState::all_params() {
  auto out = g.parameters();
  for (auto* group : {&f}) {
    const auto p = group->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  const auto d = discriminator_params();
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::vector<const Param<float>*> SearchState::all_params() const {
  auto mut = const_cast<SearchState*>(this)->all_params();
  return {mut.begin(), mut.end()};
}

void SearchState::reset_optimizers() {
  opt_net = Adam<float>(network_params(), kSearchAdam);
  opt_arch = Adam<float>(arch_params(), kSearchAdam);
  opt_d = Adam<float>(discriminator_params(), kSearchAdam);
}

SearchState build_search_state(const SearchConfig& config) {
  config.validate();
  SearchState s;
  s.g = Generator<float>::supernet(config.supernet, "G", derive_seed(config.seed, 1));
  s.f = Generator<float>::supernet(fixed_width(config.supernet), "F", derive_seed(config.seed, 2));
  const int64_t ch = config.supernet.input_channels;
  s.d_x = Discriminator<float>(ch, config.discriminator_width, "DX", derive_seed(config.seed, 3));
  s.d_y = Discriminator<float>(ch, config.discriminator_width, "DY", derive_seed(config.seed, 4));
  s.reset_optimizers();
  return s;
}

void set_budget(SearchState& state, const SearchConfig& config, const SpeedModel& model) {
  if (!model.trained()) throw std::invalid_argument("a trained speed model is required");
  state.initial_t_pred = predicted_latency(model, state.g.describe());
  state.budget_ms = config.budget_ms ? *config.budget_ms : config.budget_fraction * state.initial_t_pred;
}

StepRecord search_step(SearchState& st, const Batch& batch, const SearchConfig& config, const SpeedModel* model,
                       ArchMode mode) {
  const int64_t iter = st.iteration;
  const std::vector<Param<float>*> net = st.network_params();
  const std::vector<Param<float>*> arch = st.arch_params();
  const std::vector<Param<float>*> disc = st.discriminator_params();
  const bool train_arch = !config.freeze_arch && mode == ArchMode::ste && !arch.empty();
  const double lr = lr_at(std::min(iter, config.iterations), config.base_lr, config.iterations);

  Tape<float> tg;
  Binding<float> bg(tg, true, train_arch);
  Binding<float> bf(tg, true, false);
  const ArchInputs<float> ag = st.g.arch_inputs(bg, mode);
  const ArchInputs<float> af = st.f.arch_inputs(bf, ArchMode::pinned);
  const Var<float> x = tg.constant(batch.x);
  const Var<float> y = tg.constant(batch.y);
  const Var<float> fake_y = st.g.forward(x, bg, ag);
  const Var<float> rec_x = st.f.forward(fake_y, bf, af);
  const Var<float> fake_x = st.f.forward(y, bf, af);
  const Var<float> rec_y = st.g.forward(fake_x, bg, ag);
  const Var<float> id_y = st.g.forward(y, bg, ag);
  const Var<float> id_x = st.f.forward(x, bf, af);

  Tape<float> td;
  Binding<float> bd(td, true, false);
  const auto adv_y = lsgan_losses(st.d_y.forward(td.constant(batch.y), bd),
                                  st.d_y.forward(td.constant(fake_y.value()), bd), config.convention);
  const auto adv_x = lsgan_losses(st.d_x.forward(td.constant(batch.x), bd),
                                  st.d_x.forward(td.constant(fake_x.value()), bd), config.convention);
  const Var<float> d_loss = ops::add(adv_x.discriminator, adv_y.discriminator);
  require_finite(d_loss.value().item(), "discriminator loss", iter);
  td.backward(d_loss);
  const auto d_grads = grads_of(bd, disc);
  require_finite(d_grads, disc, "gradient", iter);
  auto staged_d = st.opt_d.stage(disc, d_grads, lr);
  require_finite(staged_d.values, disc, "updated value", iter);

  Discriminator<float> dx_next = st.d_x, dy_next = st.d_y;
  {
    auto px = dx_next.parameters(), py = dy_next.parameters();
    for (size_t i = 0; i < px.size(); ++i) px[i]->value = staged_d.values[i];
    for (size_t i = 0; i < py.size(); ++i) py[i]->value = staged_d.values[px.size() + i];
  }
  Binding<float> bd_next(tg, false, false);
  LossTerms<float> terms{lsgan_generator_term(dx_next.forward(fake_x, bd_next), config.convention),
                         lsgan_generator_term(dy_next.forward(fake_y, bd_next), config.convention),
                         cycle_loss(x, rec_x, y, rec_y), identity_loss(id_y, y, id_x, x), std::nullopt};
  const Var<float> objective = total_objective(terms, config.loss);
  Var<float> search_total = objective;
  StepRecord rec;
  rec.iteration = iter;
  if (model != nullptr) {
    const double weight = iter < config.latency_warmup ? 0.0 : config.latency_weight;
    const auto lat = model_latency_loss(st.g, ag, tg, *model, st.budget_ms, weight);
    rec.t_pred = lat.t_pred.value().item();
    rec.latency_loss = lat.loss.value().item();
    search_total = ops::add(objective, lat.loss);
  }
  rec.report = make_report(LossValues{terms.gan_x.value().item(), terms.gan_y.value().item(),
                                      terms.cyc.value().item(), terms.id.value().item(), 0.0},
                           config.loss);
  rec.report.total = objective.value().item();
  rec.search_total = search_total.value().item();
  rec.d_loss = d_loss.value().item();
  require_finite(rec.search_total, "search loss", iter);

  tg.backward(search_total);
  const size_t n_g = split_params(st.g, false).size();
  std::vector<Tensor<float>> net_grads = grads_of(bg, {net.begin(), net.begin() + std::ptrdiff_t(n_g)});
  for (Tensor<float>& t : grads_of(bf, {net.begin() + std::ptrdiff_t(n_g), net.end()})) net_grads.push_back(std::move(t));
  require_finite(net_grads, net, "gradient", iter);
  auto staged_net = st.opt_net.stage(net, net_grads, lr);
  require_finite(staged_net.values, net, "updated value", iter);
  std::optional<Adam<float>::Staged> staged_arch;
  if (train_arch) {
    const auto arch_grads = grads_of(bg, arch);
    require_finite(arch_grads, arch, "gradient", iter);
    staged_arch = st.opt_arch.stage(arch, arch_grads, config.arch_lr);
    require_finite(staged_arch->values, arch, "updated value", iter);
  }

  st.opt_d.commit(disc, std::move(staged_d));
  st.opt_net.commit(net, std::move(staged_net));
  if (staged_arch) st.opt_arch.commit(arch, std::move(*staged_arch));
  st.iteration = iter + 1;
  st.history.push_back(rec);
  return rec;
}

Batch training_batch(const TwoStyleDataset& data, uint64_t step, int64_t batch_size, uint64_t offset) {
  const uint64_t start = offset + step * uint64_t(batch_size);
  return {data.batch(Domain::x, start, batch_size), data.batch(Domain::y, start, batch_size)};
}

SearchResult run_search(const SearchConfig& config, const SpeedModel& model, const TwoStyleDataset& data,
                        const RunOptions& options) {
  config.validate();
  if (!model.trained()) throw std::invalid_argument("run_search: a trained speed model is required");
  if (data.image_size() != config.supernet.image_size) {
    throw ConfigError("dataset image size does not match supernet.image_size");
  }
  SearchResult result;
  SearchState& st = result.state;
  st = build_search_state(config);
  set_budget(st, config, model);

  std::ofstream log;
  const bool write = !options.out_dir.empty();
  if (write) {
    fs::create_directories(options.out_dir);
    log.open(fs::path(options.out_dir) / "log.txt", std::ios::binary);
    if (!log) throw std::runtime_error("cannot write log in " + options.out_dir);
  }
  auto checkpoint = [&] {
    char name[32];
    std::snprintf(name, sizeof name, "iter_%06lld", static_cast<long long>(st.iteration));
    save_checkpoint(st, (fs::path(options.out_dir) / "checkpoints" / name).string(), &model, options.config_echo);
  };
  for (int64_t it = 0; it < config.iterations; ++it) {
    const StepRecord rec = search_step(st, training_batch(data, uint64_t(it), config.batch_size), config, &model);
    if (options.on_step) options.on_step(st, rec);
    if (write) {
      log << format_record(rec) << '\n';
      if (config.checkpoint_every > 0 && st.iteration % config.checkpoint_every == 0) checkpoint();
    }
  }
  result.extraction = extract_architecture(st.g);
  result.extraction.descriptor.predicted_latency_ms = predicted_latency(model, result.extraction.descriptor);
  result.descriptor = result.extraction.descriptor;
  if (write) {
    log.flush();
    if (config.checkpoint_every == 0 || st.iteration % config.checkpoint_every != 0) checkpoint();
    SearchState compact = finetune_state(st);
    save_export(compact, result.descriptor, options.out_dir, options.config_echo);
  }
  return result;
}

void save_checkpoint(const SearchState& state, const std::string& dir, const SpeedModel* model,
                     const std::string& config_echo) {
  fs::create_directories(dir);
  auto& st = const_cast<SearchState&>(state);
  save_weights(collect_weights<float>(state.all_params()), (fs::path(dir) / "weights.bin").string());
  ArchDescriptor arch = state.g.describe();
  if (model != nullptr) arch.predicted_latency_ms = predicted_latency(*model, arch);
  save_descriptor(arch, (fs::path(dir) / "arch.json").string());
  WeightsFile opt;
  append_moments(opt, "network", state.opt_net, st.network_params());
  append_moments(opt, "arch", state.opt_arch, st.arch_params());
  append_moments(opt, "discriminator", state.opt_d, st.discriminator_params());
  save_weights(opt, (fs::path(dir) / "optimizer.bin").string());
  Json doc;
  doc["iteration"] = state.iteration;
  doc["budget_ms"] = state.budget_ms;
  doc["initial_t_pred_ms"] = state.initial_t_pred;
  doc["optimizer_steps"] = {{"network", state.opt_net.steps()},
                            {"arch", state.opt_arch.steps()},
                            {"discriminator", state.opt_d.steps()}};
  write_file((fs::path(dir) / "state.json").string(), doc.dump(2) + "\n");
  if (!config_echo.empty()) write_file((fs::path(dir) / "config.json").string(), config_echo);
}

SearchState load_checkpoint(const std::string& dir, const SearchConfig& config) {
  SearchState st = build_search_state(config);
  const WeightsFile w = load_weights((fs::path(dir) / "weights.bin").string());
  restore_weights<float>(w, st.all_params());
  const WeightsFile opt = load_weights((fs::path(dir) / "optimizer.bin").string());
  restore_moments(opt, "network", st.opt_net, st.network_params());
  restore_moments(opt, "arch", st.opt_arch, st.arch_params());
  restore_moments(opt, "discriminator", st.opt_d, st.discriminator_params());
  try {
    const Json doc = Json::parse(read_file((fs::path(dir) / "state.json").string()));
    st.iteration = doc.at("iteration").get<int64_t>();
    st.budget_ms = doc.at("budget_ms").get<double>();
    st.initial_t_pred = doc.at("initial_t_pred_ms").get<double>();
    const Json& steps = doc.at("optimizer_steps");
    st.opt_net.set_steps(steps.at("network").get<int64_t>());
    st.opt_arch.set_steps(steps.at("arch").get<int64_t>());
    st.opt_d.set_steps(steps.at("discriminator").get<int64_t>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(dir + "/state.json: " + e.what());
  }
  return st;
}

void save_export(const SearchState& state, const ArchDescriptor& descriptor, const std::string& dir,
                 const std::string& config_echo) {
  fs::create_directories(dir);
  save_descriptor(descriptor, (fs::path(dir) / "arch.json").string());
  save_weights(collect_weights<float>(state.all_params()), (fs::path(dir) / "weights.bin").string());
  if (!config_echo.empty()) write_file((fs::path(dir) / "config.json").string(), config_echo);
}

SearchState load_export(const std::string& dir, const SearchConfig& config) {
  SearchState st = build_search_state(config);
  const ArchDescriptor arch = load_descriptor((fs::path(dir) / "arch.json").string());
  st.g = Generator<float>::from_descriptor(arch, "G");
  restore_weights<float>(load_weights((fs::path(dir) / "weights.bin").string()), st.all_params());
  st.reset_optimizers();
  if (arch.predicted_latency_ms) st.initial_t_pred = *arch.predicted_latency_ms;
  return st;
}

SearchState load_model_dir(const std::string& dir, const SearchConfig& config) {
  if (!fs::exists(fs::path(dir) / "arch.json") || !fs::exists(fs::path(dir) / "weights.bin")) {
    throw std::runtime_error("missing checkpoint file in " + dir + " (need arch.json and weights.bin)");
  }
  if (fs::exists(fs::path(dir) / "state.json")) return load_checkpoint(dir, config);
  return load_export(dir, config);
}

SearchState finetune_state(const SearchState& searched) {
  SearchState out;
  out.g = extract_architecture(searched.g).compact;
  out.f = searched.f;
  out.d_x = searched.d_x;
  out.d_y = searched.d_y;
  out.budget_ms = searched.budget_ms;
  out.initial_t_pred = searched.initial_t_pred;
  out.reset_optimizers();
  return out;
}

void finetune(SearchState& state, const SearchConfig& config, int64_t iterations, const TwoStyleDataset& data,
              uint64_t data_offset, std::ostream* log) {
  if (state.g.searchable()) throw std::invalid_argument("finetune expects an extracted (mask-free) generator");
  SearchConfig ft = config;
  ft.iterations = iterations;
  ft.freeze_arch = true;
  ft.validate();
  state.iteration = 0;
  for (int64_t it = 0; it < iterations; ++it) {
    const StepRecord rec = search_step(state, training_batch(data, uint64_t(it), ft.batch_size, data_offset), ft, nullptr);
    if (log != nullptr) *log << format_record(rec) << '\n';
  }
}

EvalReport evaluate(const SearchState& state, const SearchConfig& config, const TwoStyleDataset& data,
                    uint64_t offset, int64_t count, const SpeedModel* model) {
  if (count < 1) throw std::invalid_argument("evaluate: count must be >= 1");
  EvalReport r;
  r.samples = count;
  const ArchDescriptor arch = state.g.describe();
  r.macs = arch.macs;
  r.supernet_macs = Generator<float>::supernet(config.supernet, "G", 0).describe().macs;
  r.reduction = double(r.supernet_macs) / double(r.macs);
  if (model != nullptr) r.t_pred_ms = predicted_latency(*model, arch);
  LossValues sum;
  for (int64_t i = 0; i < count; ++i) {
    const Tensor<float> xs = data.batch(Domain::x, offset + uint64_t(i), 1);
    const Tensor<float> ys = data.batch(Domain::y, offset + uint64_t(i), 1);
    Tape<float> tape;
    Binding<float> b(tape, false, false);
    const auto ag = state.g.arch_inputs(b, ArchMode::pinned);
    const auto af = state.f.arch_inputs(b, ArchMode::pinned);
    const Var<float> x = tape.constant(xs), y = tape.constant(ys);
    const Var<float> fake_y = state.g.forward(x, b, ag), fake_x = state.f.forward(y, b, af);
    const Var<float> dy_fake = state.d_y.forward(fake_y, b);
    sum.gan_x += lsgan_generator_term(state.d_x.forward(fake_x, b), config.convention).value().item();
    sum.gan_y += lsgan_generator_term(dy_fake, config.convention).value().item();
    sum.cyc += cycle_loss(x, state.f.forward(fake_y, b, af), y, state.g.forward(fake_x, b, ag)).value().item();
    sum.id += identity_loss(state.g.forward(y, b, ag), y, state.f.forward(x, b, af), x).value().item();
    r.d_y_real += ops::mean(state.d_y.forward(y, b)).value().item();
    r.d_y_fake += ops::mean(dy_fake).value().item();
  }
  const double n = double(count);
  r.losses = make_report(LossValues{sum.gan_x / n, sum.gan_y / n, sum.cyc / n, sum.id / n, 0.0}, config.loss);
  r.d_y_real /= n;
  r.d_y_fake /= n;
  return r;
}

double mean_cycle_loss(const SearchState& state, const TwoStyleDataset& data, uint64_t offset, int64_t count) {
  double sum = 0;
  for (int64_t i = 0; i < count; ++i) {
    Tape<float> tape;
    Binding<float> b(tape, false, false);
    const auto ag = state.g.arch_inputs(b, ArchMode::pinned);
    const auto af = state.f.arch_inputs(b, ArchMode::pinned);
    const Var<float> x = tape.constant(data.batch(Domain::x, offset + uint64_t(i), 1));
    const Var<float> y = tape.constant(data.batch(Domain::y, offset + uint64_t(i), 1));
    sum += cycle_loss(x, state.f.forward(state.g.forward(x, b, ag), b, af), y,
                      state.g.forward(state.f.forward(y, b, af), b, ag))
               .value()
               .item();
  }
  return sum / double(count);
}

}  // namespace gansearch
