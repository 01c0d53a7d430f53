#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "ccaps/adam.hpp"
#include "ccaps/checkpoint.hpp"
#include "ccaps/config.hpp"
#include "ccaps/dataset.hpp"
#include "ccaps/losses.hpp"
#include "ccaps/model.hpp"

namespace ccaps::train {

/// Both Siamese branches of one step, stacked branch-major: clouds[0, B) are
/// branch a and clouds[B, 2B) branch b. Aligned mode keeps branch a only.
struct StepBatch {
  std::vector<data::PointCloud> clouds;
  std::vector<geo::RigidTransform> transform_a, transform_b;
  std::size_t pairs = 0;
  bool two_branches = true;
};

/// Subsamples every base cloud to cfg.points and draws its pair of poses.
StepBatch make_step_batch(std::span<const data::PointCloud* const> base, geo::Rng& rng, const TrainConfig& cfg);

/// Forward pass and the weighted loss of one batch (graph attached).
loss::TotalLoss step_loss(const model::CapsuleModel& model, const StepBatch& batch, const TrainConfig& cfg);

/// Uniform random subset of `count` points (order preserved); the cloud
/// itself when it already has exactly `count`.
data::PointCloud subsample(const data::PointCloud& pc, std::size_t count, geo::Rng& rng);

struct EpochStats {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  loss::LossReport mean;
  std::size_t warnings = 0;
};

/// Flags loss terms that jump above 50x the median of their recent history.
class SpikeMonitor {
 public:
  explicit SpikeMonitor(double factor = 50.0, std::size_t window = 100, std::size_t min_history = 10)
      : factor_(factor), window_(window), min_history_(min_history) {}
  /// Names of the terms that spiked; the report then joins the history.
  std::vector<std::string> observe(const loss::LossReport& r);

 private:
  double factor_;
  std::size_t window_, min_history_;
  std::vector<std::vector<double>> history_;
};

class Trainer {
 public:
  Trainer(const TrainConfig& cfg, const data::Dataset& train_set);

  /// One pass over the training split. Throws NumericError on a non-finite
  /// loss after writing the offending batch to `dump_dir` (when non-empty).
  EpochStats run_epoch(std::ostream* log = nullptr, const std::filesystem::path& dump_dir = {});

  std::size_t epoch() const { return epoch_; }
  const TrainConfig& config() const { return cfg_; }
  model::CapsuleModel& model() { return *model_; }
  const model::CapsuleModel& model() const { return *model_; }
  const ad::AdamState& optimizer() const { return adam_; }
  const std::vector<EpochStats>& history() const { return history_; }

  CheckpointData snapshot() const;
  /// Restores parameters, batch-norm statistics, optimizer state, epoch and
  /// history. The checkpoint's config hash must match this trainer's.
  void restore(const CheckpointData& ck);

 private:
  TrainConfig cfg_;
  const data::Dataset& data_;
  std::unique_ptr<model::CapsuleModel> model_;
  ad::AdamState adam_;
  data::BatchIterator batches_;
  SpikeMonitor monitor_;
  std::size_t epoch_ = 0;
  std::vector<EpochStats> history_;
};

std::string format_loss_csv(const std::vector<EpochStats>& history);

/// Parameters and batch-norm statistics of a model (no optimizer state).
CheckpointData model_snapshot(const model::CapsuleModel& model, const TrainConfig& cfg, std::size_t epoch);

struct LoadedModel {
  TrainConfig config;
  std::string config_hash;
  std::size_t epoch = 0;
  std::unique_ptr<model::CapsuleModel> model;
};

LoadedModel load_model(const CheckpointData& ck);
LoadedModel load_model(const std::filesystem::path& path);

struct RunOptions {
  std::filesystem::path out_dir;
  bool resume = false;
  /// Stop after this many epochs in this call (0: run to cfg.epochs).
  std::size_t max_epochs = 0;
  std::ostream* log = nullptr;
};

/// Trains to cfg.epochs writing <out>/config.ini, <out>/losses.csv and
/// <out>/checkpoint.ccap (refreshed after every epoch).
std::vector<EpochStats> run_training(const TrainConfig& cfg, const data::Dataset& train_set, const RunOptions& opt);

}  // namespace ccaps::train
