#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "diffcod/schedule.hpp"
#include "diffcod/tensor.hpp"

namespace diffcod {

enum class MaskSpace { diffusion, probability };

/// Batched single-channel mask [N, 1, H, W]. Diffusion-space values are
/// nominally in [-1, 1]; probability-space values are clamped to [0, 1].
template <typename T>
struct MaskTensor {
  Tensor<T> data;
  MaskSpace space = MaskSpace::diffusion;

  static MaskTensor in_diffusion_space(Tensor<T> data);
  static MaskTensor in_probability_space(Tensor<T> data);

  /// p = (d + 1) / 2, clamped.
  MaskTensor to_probability() const;
  /// d = 2p - 1.
  MaskTensor to_diffusion() const;
};

namespace diffusion {

/// Gaussian parameters of q(y_{t-1} | y_t, y_0).
template <typename T>
struct Posterior {
  Tensor<T> mean;
  Tensor<T> variance;
  Tensor<T> log_variance;
};

/// Reverse-step parameters of p(y_{t-1} | y_t).
template <typename T>
struct ReverseStepOutput {
  Tensor<T> mean;
  Tensor<T> variance;
  Tensor<T> log_variance;
  Tensor<T> pred_y0;
};

/// Timesteps are 1-based, one per batch element.
using Timesteps = std::vector<int>;

/// sqrt(abar_t) * y0 + sqrt(1 - abar_t) * eps, per batch element.
template <typename T>
Tensor<T> q_sample(const Tensor<T>& y0, const Timesteps& t, const Tensor<T>& eps,
                   const NoiseSchedule& schedule);

/// The marginal with non-square-root noise coefficient (1 - abar_t) * eps.
/// Exists only to compare against the standard form in tests.
template <typename T>
Tensor<T> q_sample_literal(const Tensor<T>& y0, const Timesteps& t, const Tensor<T>& eps,
                           const NoiseSchedule& schedule);

/// Applies y_s = sqrt(alpha_s) y_{s-1} + sqrt(1 - alpha_s) eps_s for s = 1..t
/// with fresh noise drawn from a generator seeded by `seed`.
template <typename T>
Tensor<T> q_sample_iterative(const Tensor<T>& y0, int t, std::uint64_t seed,
                             const NoiseSchedule& schedule);

/// (y_t - sqrt(1 - abar_t) eps) / sqrt(abar_t), clamped to [-1, 1] when `clip`.
template <typename T>
Tensor<T> predict_y0_from_eps(const Tensor<T>& yt, const Timesteps& t, const Tensor<T>& eps,
                              const NoiseSchedule& schedule, bool clip = true);

template <typename T>
Posterior<T> q_posterior(const Tensor<T>& y0, const Tensor<T>& yt, const Timesteps& t,
                         const NoiseSchedule& schedule);

/// `v` is the variance interpolation fraction in [0, 1]:
/// log_var = v log beta_t + (1 - v) log posterior_var_t.
template <typename T>
ReverseStepOutput<T> p_mean_variance(const Tensor<T>& eps, const Tensor<T>& v,
                                     const Tensor<T>& yt, const Timesteps& t,
                                     const NoiseSchedule& schedule);

/// mean + exp(log_var / 2) z; no noise is injected at t = 1.
template <typename T>
Tensor<T> p_sample_step(const ReverseStepOutput<T>& step, const Timesteps& t,
                        std::mt19937_64& rng);

template <typename T>
Tensor<T> p_sample_step(const Tensor<T>& eps, const Tensor<T>& v, const Tensor<T>& yt,
                        const Timesteps& t, const NoiseSchedule& schedule, std::mt19937_64& rng);

/// Per-element variational bound term in nats: KL(q || p) for t > 1 and the
/// discretized decoder NLL at t = 1.
template <typename T>
Tensor<T> vlb_terms(const Tensor<T>& y0, const Tensor<T>& yt, const Timesteps& t,
                    const Tensor<T>& eps, const Tensor<T>& v, const NoiseSchedule& schedule);

/// Per-element KL(q(y_T | y_0) || N(0, I)) in nats; constant w.r.t. the model.
template <typename T>
Tensor<T> prior_kl(const Tensor<T>& y0, const NoiseSchedule& schedule);

}  // namespace diffusion
}  // namespace diffcod
