#pragma once

#include "diffcod/denoiser.hpp"
#include "diffcod/diffusion.hpp"

namespace diffcod {

struct LossBreakdown {
  double simple = 0;
  double vlb = 0;
  double static_term = 0;
  double total = 0;
};

/// total = simple + lambda_vlb * vlb + static_term.
LossBreakdown loss_total(double simple, double vlb, double static_term, double lambda_vlb);

struct ObjectiveOptions {
  double lambda_vlb = 1e-3;
  bool use_simple = true;
  bool use_vlb = true;
  bool use_static = true;
  /// Stop the vlb gradient from reaching the eps path.
  bool detach_vlb_mean = true;
};

/// Mean squared error between predicted and true noise.
template <typename T>
ag::Var<T> loss_simple(const ag::Var<T>& eps_pred, const Tensor<T>& eps_true);

/// Mean of the per-element variational bound terms. With `detach_mean` the
/// reverse-step mean is built from a detached eps so only `v` is trained.
template <typename T>
ag::Var<T> loss_vlb(const Tensor<T>& y0, const Tensor<T>& yt, const diffusion::Timesteps& t,
                    const DenoiserOutput<T>& out, const NoiseSchedule& schedule,
                    bool detach_mean = true);

/// Mean squared error between the static mask and y0, both in [0, 1].
template <typename T>
ag::Var<T> loss_static(const ag::Var<T>& static_mask, const Tensor<T>& y0_prob);

template <typename T>
struct Objective {
  ag::Var<T> total;
  LossBreakdown breakdown;
};

/// Assembles the weighted objective from whichever components are enabled;
/// disabled components report 0.
template <typename T>
Objective<T> hybrid_objective(const Tensor<T>& y0, const Tensor<T>& yt, const Tensor<T>& eps,
                              const diffusion::Timesteps& t, const DenoiserOutput<T>& out,
                              const ag::Var<T>& static_mask, const NoiseSchedule& schedule,
                              const ObjectiveOptions& options);

}  // namespace diffcod
