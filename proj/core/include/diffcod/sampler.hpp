#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "diffcod/checkpoint.hpp"
#include "diffcod/model.hpp"
#include "diffcod/schedule.hpp"
#include "diffcod/trainer.hpp"

namespace diffcod {

struct LoadedModel {
  TrainConfig config;
  NoiseSchedule schedule;
  std::unique_ptr<DiffCodModel<float>> model;
};

/// Rebuilds the model described by the checkpoint's config snapshot and
/// loads its parameters.
LoadedModel load_model(const Checkpoint& checkpoint);

struct SampleOptions {
  /// Respaced step count; 0 means the full schedule.
  int num_steps = 0;
  std::uint64_t seed = 0;
  /// Parent-schedule timesteps at which to record pred_y0.
  std::vector<int> trace_at;
};

template <typename T>
struct SampleTrace {
  /// Requested timesteps, in decreasing order, and the matching pred_y0
  /// snapshots in probability space.
  std::vector<int> snapshot_steps;
  std::vector<Tensor<T>> snapshots;
  /// Final mask in [0, 1], [N, 1, H, W].
  Tensor<T> mask;
};

/// Ancestral sampling from y_T ~ N(0, I). Conditioning runs once; the
/// denoiser sees parent-schedule timesteps. A snapshot is taken at the
/// retained step nearest each requested timestep.
template <typename T>
SampleTrace<T> sample(const DiffCodModel<T>& model, const NoiseSchedule& schedule,
                      const Tensor<T>& images, const SampleOptions& options);

enum class EnsembleMode { mean, vote };

/// Seed of ensemble member k; member 0 uses the base seed itself.
std::uint64_t member_seed(std::uint64_t seed, int k);

/// Pixelwise mean (or strict-majority vote of masks binarized at 0.5) over
/// `num_samples` chains.
template <typename T>
Tensor<T> sample_ensemble(const DiffCodModel<T>& model, const NoiseSchedule& schedule,
                          const Tensor<T>& images, int num_steps, int num_samples,
                          std::uint64_t seed, EnsembleMode mode = EnsembleMode::mean);

/// 1 where mask >= threshold, else 0.
template <typename T>
Tensor<T> binarize(const Tensor<T>& mask, double threshold);

}  // namespace diffcod
