#pragma once

// Joint-objective training loop, evaluation and experiment artifacts.
//
// One step: encode both views, contrastive loss against the bank as it was
// before the step, gate against the bank's current centers, fuse, classify,
// L = CE + lambda * CMCL, backward, AdamW, then EMA-refresh the batch's slots.
// The bank is refreshed even when the contrastive term is disabled because
// the gate reads its centers.

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cvcrf/config.hpp"
#include "cvcrf/data.hpp"
#include "cvcrf/memory_bank.hpp"
#include "cvcrf/metrics.hpp"
#include "cvcrf/model.hpp"
#include "cvcrf/parameters.hpp"

namespace cvcrf {

struct StepLosses {
  double total = 0.0;
  double ce = 0.0;
  double cmcl = 0.0;          // 0 when the term is disabled
  double gate_entropy = 0.0;  // 0 without the gate
};

struct LossTerms {
  Tensor total;
  Tensor ce;
  Tensor cmcl;  // undefined when disabled
  ForwardOutput forward;
};

struct EpochStats {
  std::size_t epoch = 0;
  std::size_t steps = 0;
  double loss = 0.0;
  double ce = 0.0;
  double cmcl = 0.0;
  double gate_entropy = 0.0;
};

/// Everything a step mutates, copied out for best-epoch selection.
struct TrainState {
  std::vector<std::vector<double>> parameters;
  std::uint64_t optimizer_steps = 0;
  std::vector<std::vector<double>> first_moments;
  std::vector<std::vector<double>> second_moments;
  std::optional<MemoryBank> bank;
  std::size_t epoch = 0;
};

class Trainer {
 public:
  /// Generates the dataset (seeded by config.seed), splits it, fits the
  /// spacing normalizer on the training part, builds the model and fills the
  /// bank with one inference pass of the untrained encoder.
  explicit Trainer(TrainConfig config);

  /// Loss graph for `batch` against the current bank and `centers`. No update.
  LossTerms compute_loss(std::span<const std::size_t> batch, const ClassCenters& centers) const;
  LossTerms compute_loss(std::span<const std::size_t> batch) const;

  /// Throws NumericError naming the batch and loss terms if the loss is not finite.
  StepLosses train_step(std::span<const std::size_t> batch);
  /// One pass over the shuffled training part; advances epoch().
  EpochStats train_epoch();

  /// Gate uses the bank's centers; nothing is updated. Throws on an empty part.
  MetricsReport evaluate(std::span<const std::size_t> part, const std::string& split_name) const;
  MetricsReport evaluate(const std::string& split_name) const;
  std::vector<int> predict(std::span<const std::size_t> part) const;

  /// Mean over `part` of the cosine between each view's z and its class's
  /// mean z (computed from the same fresh embeddings), averaged over views.
  double mean_center_cosine(std::span<const std::size_t> part) const;

  /// Rows: index,label,split,z_long[d],z_trans[d],z_fused[F] for every sample.
  void export_embeddings(const std::string& path) const;

  TrainState snapshot() const;
  void restore(const TrainState& state);

  const std::vector<std::size_t>& part(const std::string& split_name) const;

  const TrainConfig& config() const noexcept { return config_; }
  const Dataset& data() const noexcept { return data_; }
  const DatasetSplit& splits() const noexcept { return split_; }
  const SpacingNormalizer& normalizer() const noexcept { return normalizer_; }
  CvcModel& model() noexcept { return model_; }
  const CvcModel& model() const noexcept { return model_; }
  AdamW& optimizer() noexcept { return optimizer_; }
  const AdamW& optimizer() const noexcept { return optimizer_; }
  MemoryBank& bank() { return *bank_; }
  const MemoryBank& bank() const { return *bank_; }
  std::size_t epoch() const noexcept { return epoch_; }
  void set_epoch(std::size_t epoch) noexcept { epoch_ = epoch; }

 private:
  std::pair<Tensor, Tensor> view_batches(std::span<const std::size_t> batch) const;
  std::vector<int> labels_of(std::span<const std::size_t> batch) const;
  void init_bank();

  TrainConfig config_;
  Dataset data_;
  DatasetSplit split_;
  SpacingNormalizer normalizer_;
  CvcModel model_;
  AdamW optimizer_;
  std::optional<MemoryBank> bank_;
  std::size_t epoch_ = 0;
};

struct ExperimentOptions {
  std::string out_dir;  // empty: no files are written
  bool write_checkpoint = true;
  bool write_embeddings = true;
  /// Called after every epoch with the train stats and validation report.
  std::function<void(const EpochStats&, const MetricsReport&)> on_epoch;
};

struct ExperimentResult {
  std::size_t best_epoch = 0;
  MetricsReport best_val;
  MetricsReport test;
  std::vector<EpochStats> history;
  double train_center_cosine = 0.0;
  std::string metrics_csv;  // exact contents written to metrics.csv
};

/// Trains for config.epochs, keeps the state with the best validation score
/// (earliest on ties), reports the test split from that state and writes
/// metrics.csv, diagnostics.csv, checkpoint.bin and embeddings.csv.
ExperimentResult run_experiment(const TrainConfig& config, const ExperimentOptions& options = {});

/// The six table rows: full, no_cmcl, no_dsam, no_moe, long, trans.
std::vector<std::pair<std::string, TrainConfig>> ablation_variants(const TrainConfig& base);

/// Runs every variant into out_dir/<name>/ and writes out_dir/grid.csv.
std::vector<std::pair<std::string, ExperimentResult>> run_ablation_grid(const TrainConfig& base,
                                                                        const std::string& out_dir);

}  // namespace cvcrf
