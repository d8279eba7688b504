#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "diffcod/augment.hpp"
#include "diffcod/checkpoint.hpp"
#include "diffcod/model.hpp"
#include "diffcod/objectives.hpp"
#include "diffcod/schedule.hpp"

namespace diffcod {

struct TrainConfig {
  int T = kDefaultTimesteps;
  double beta_start = kDefaultBetaStart;
  double beta_end = kDefaultBetaEnd;
  double learning_rate = 1e-4;
  int batch_size = 16;
  int image_size = 64;
  long max_steps = 5000;
  ObjectiveOptions objective;
  AugmentConfig augment;
  std::uint64_t seed = 7;
  long checkpoint_interval = 1000;
  double grad_clip = 1.0;
  ModelConfig model;

  /// Throws ConfigError on invalid values.
  void validate() const;
};

/// Schedule, optimization and architecture keys.
KeyValues to_key_values(const TrainConfig& config);
/// Reads the keys present in `kv`; the rest keep their defaults.
TrainConfig train_config_from(const KeyValues& kv);

/// Model, optimizer and schedule for one training run. Randomness for step s
/// is derived from (seed, s), so the state after a step depends only on the
/// state before it and the batch.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& config);

  /// images [B, 3, H, W] in [0, 1], masks [B, 1, H, W] in {0, 1}. Throws
  /// DivergenceError (leaving the state untouched) on a non-finite loss.
  LossBreakdown train_step(const Tensor<float>& images, const Tensor<float>& masks);

  Checkpoint checkpoint() const;
  /// Loads parameters, moments and the step counter. Throws ConfigError if
  /// the tensors do not match this model.
  void restore(const Checkpoint& checkpoint);

  long step() const { return step_; }
  const TrainConfig& config() const { return config_; }
  const NoiseSchedule& schedule() const { return schedule_; }
  DiffCodModel<float>& model() { return *model_; }
  const DiffCodModel<float>& model() const { return *model_; }

 private:
  TrainConfig config_;
  NoiseSchedule schedule_;
  std::unique_ptr<DiffCodModel<float>> model_;
  std::unique_ptr<nn::Adam<float>> adam_;
  long step_ = 0;
};

struct TrainRunOptions {
  std::filesystem::path checkpoint_path;  // empty: no files written
  std::filesystem::path loss_log;         // empty: no log
  std::function<void(long step, const LossBreakdown&)> on_step;
};

/// Indices of the samples used at `step`: epochs are permutations seeded by
/// (seed, epoch), consumed batch_size at a time.
std::vector<std::size_t> batch_indices(std::uint64_t seed, long step, int batch_size,
                                       std::size_t dataset_size);

/// Runs from `resume` (or a fresh initialization) until config.max_steps,
/// writing a checkpoint every checkpoint_interval steps and at the end.
Checkpoint train(const std::vector<ImageMaskPair>& dataset, const TrainConfig& config,
                 const TrainRunOptions& options = {}, const Checkpoint* resume = nullptr);

}  // namespace diffcod
