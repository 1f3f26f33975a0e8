// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "gansearch/dataset.hpp"
#include "gansearch/discriminator.hpp"
#include "gansearch/ganloss.hpp"
#include "gansearch/generator.hpp"
#include "gansearch/optim.hpp"
#include "gansearch/speed.hpp"

namespace gansearch {

struct SearchConfig {
  uint64_t seed = 0;
  SupernetConfig supernet;  // image size lives here
  int64_t discriminator_width = 16;
  LossWeights loss;
  GanConvention convention = GanConvention::standard_lsgan;
  std::optional<double> budget_ms;  // absolute budget; overrides budget_fraction
  double budget_fraction = 0.4;     // of the initial supernet T_pred
  double latency_weight = 15.0;     // loss units per ms over budget
  int64_t latency_warmup = 0;       // iterations before the latency term is enabled
  int64_t iterations = 5000;
  double base_lr = 2e-4;
  double arch_lr = 1e-3;
  int64_t batch_size = 1;
  int64_t checkpoint_every = 1000;  // 0: final checkpoint only
  bool freeze_arch = false;

  /// Throws ConfigError.
  void validate() const;
};

/// base_lr for iter < total/2, then linear decay to 0 at iter == total.
double lr_at(int64_t iter, double base_lr, int64_t total);

/// Adam betas for every parameter group.
inline constexpr AdamConfig kSearchAdam{0.5, 0.999, 1e-8};

struct Batch {
  Tensor<float> x;
  Tensor<float> y;
};

/// Values observed before the update of that iteration.
struct StepRecord {
  int64_t iteration = 0;
  LossReport report;          // generator objective L
  double t_pred = 0;          // 0 when no speed model is attached
  double latency_loss = 0;
  double search_total = 0;    // L + latency loss as evaluated on the tape
  double d_loss = 0;
};

/// One log line: iter, components, total, T_pred, latency loss, D loss.
std::string format_record(const StepRecord& r);

class NonFiniteError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// G (x -> y) carries the masks and gates; F (y -> x) has the same layout at
/// full width. Parameters are named G.*, F.*, DX.*, DY.*.
struct SearchState {
  Generator<float> g;
  Generator<float> f;
  Discriminator<float> d_x;
  Discriminator<float> d_y;
  Adam<float> opt_net;
  Adam<float> opt_arch;
  Adam<float> opt_d;
  int64_t iteration = 0;
  double budget_ms = 0;
  double initial_t_pred = 0;
  std::vector<StepRecord> history;

  std::vector<Param<float>*> network_params();
  std::vector<Param<float>*> arch_params();
  std::vector<Param<float>*> discriminator_params();
  std::vector<Param<float>*> all_params();
  std::vector<const Param<float>*> all_params() const;
  /// Fresh optimizer state for the current parameter groups.
  void reset_optimizers();
};

SearchState build_search_state(const SearchConfig& config);
/// Records the supernet's current T_pred and sets the budget from the config.
void set_budget(SearchState& state, const SearchConfig& config, const SpeedModel& model);

/// One discriminator update on the adversarial terms, then one generator and
/// architecture update on L + latency loss against the updated
/// discriminators. Nothing is modified if any loss, gradient or updated value
/// is non-finite. `model` may be null (no latency term). ArchMode::pinned
/// feeds the current binarization as constants and freezes v and alpha.
StepRecord search_step(SearchState& state, const Batch& batch, const SearchConfig& config, const SpeedModel* model,
                       ArchMode mode = ArchMode::ste);

Batch training_batch(const TwoStyleDataset& data, uint64_t step, int64_t batch_size, uint64_t offset = 0);

struct RunOptions {
  std::string out_dir;      // empty: nothing written
  std::string config_echo;  // copied into every checkpoint as config.json
  std::function<void(const SearchState&, const StepRecord&)> on_step;  // after every committed step
};

struct SearchResult {
  ArchDescriptor descriptor;  // with predicted_latency_ms
  Extraction<float> extraction;
  SearchState state;
};

/// Runs config.iterations search steps on consecutive batches. With an
/// output directory: log.txt, checkpoints/iter_NNNNNN/, and the exported
/// model (arch.json, weights.bin, config.json).
SearchResult run_search(const SearchConfig& config, const SpeedModel& model, const TwoStyleDataset& data,
                        const RunOptions& options = {});

/// Checkpoint directory: weights.bin, arch.json, optimizer.bin, state.json
/// and, when given, config.json.
void save_checkpoint(const SearchState& state, const std::string& dir, const SpeedModel* model,
                     const std::string& config_echo);
SearchState load_checkpoint(const std::string& dir, const SearchConfig& config);

/// Compact model directory: arch.json, weights.bin (G compact, F, DX, DY),
/// config.json.
void save_export(const SearchState& state, const ArchDescriptor& descriptor, const std::string& dir,
                 const std::string& config_echo);
SearchState load_export(const std::string& dir, const SearchConfig& config);
/// Either kind of directory.
SearchState load_model_dir(const std::string& dir, const SearchConfig& config);

/// Extracted G with F and the discriminators carried over and fresh optimizers.
SearchState finetune_state(const SearchState& searched);
/// Trains the compact model on L alone; the architecture does not change.
/// Batches continue from `data_offset`.
void finetune(SearchState& state, const SearchConfig& config, int64_t iterations, const TwoStyleDataset& data,
              uint64_t data_offset, std::ostream* log = nullptr);

struct EvalReport {
  int64_t samples = 0;
  int64_t macs = 0;
  int64_t supernet_macs = 0;
  double reduction = 0;  // supernet_macs / macs
  std::optional<double> t_pred_ms;
  LossReport losses;
  double d_y_real = 0;  // mean D_Y score on real y
  double d_y_fake = 0;  // mean D_Y score on G(x)
};

/// Pinned-architecture forward passes on `count` images starting at `offset`.
EvalReport evaluate(const SearchState& state, const SearchConfig& config, const TwoStyleDataset& data,
                    uint64_t offset, int64_t count, const SpeedModel* model);

/// Mean cycle loss over a fixed stream.
double mean_cycle_loss(const SearchState& state, const TwoStyleDataset& data, uint64_t offset, int64_t count);

}  // namespace gansearch
