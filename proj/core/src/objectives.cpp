#include "diffcod/objectives.hpp"

#include <cmath>

namespace diffcod {

LossBreakdown loss_total(double simple, double vlb, double static_term, double lambda_vlb) {
  return {simple, vlb, static_term, simple + lambda_vlb * vlb + static_term};
}

template <typename T>
ag::Var<T> loss_simple(const ag::Var<T>& eps_pred, const Tensor<T>& eps_true) {
  return ag::mse(eps_pred, ag::Var<T>(eps_true));
}

template <typename T>
ag::Var<T> loss_vlb(const Tensor<T>& y0, const Tensor<T>& yt, const diffusion::Timesteps& t,
                    const DenoiserOutput<T>& out, const NoiseSchedule& schedule,
                    bool detach_mean) {
  require_same_shape(y0, yt, "loss_vlb");
  require_same_shape(y0, out.eps.value(), "loss_vlb");
  const std::size_t batch = t.size();
  if (y0.shape().empty() || static_cast<std::size_t>(y0.dim(0)) != batch) {
    throw ShapeError("loss_vlb: need one timestep per batch element");
  }
  const std::size_t per = y0.size() / batch;
  std::vector<double> eps_factor(batch), c0(batch), zero(batch, 0.0);
  std::vector<double> lv_scale(batch), lv_shift(batch);
  std::vector<bool> first(batch);
  Tensor<T> yt_term(y0.shape()), mean_yt_term(y0.shape());
  for (std::size_t b = 0; b < batch; ++b) {
    const double ab = schedule.alpha_bar(t[b]);
    const double inv = 1.0 / std::sqrt(ab);
    eps_factor[b] = -std::sqrt(1.0 - ab) * inv;
    c0[b] = schedule.posterior_mean_coef_y0(t[b]);
    const double c1 = schedule.posterior_mean_coef_yt(t[b]);
    const double max_log = std::log(schedule.beta(t[b]));
    const double min_log = schedule.posterior_log_variance_clipped(t[b]);
    lv_scale[b] = max_log - min_log;
    lv_shift[b] = min_log;
    first[b] = t[b] == 1;
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      yt_term[i] = static_cast<T>(yt[i] * inv);
      mean_yt_term[i] = static_cast<T>(c1 * yt[i]);
    }
  }
  // Same route as p_mean_variance: clamp pred_y0, then the posterior mean.
  const ag::Var<T> eps = detach_mean ? ag::detach(out.eps) : out.eps;
  auto pred_y0 = ag::add(ag::affine_per_batch(eps, eps_factor, zero), ag::Var<T>(yt_term));
  pred_y0 = ag::clamp(pred_y0, T(-1), T(1));
  const auto mean = ag::add(ag::affine_per_batch(pred_y0, c0, zero), ag::Var<T>(mean_yt_term));
  const auto log_var = ag::affine_per_batch(out.v, lv_scale, lv_shift);

  const auto truth = diffusion::q_posterior(y0, yt, t, schedule);
  return ag::mean_all(
      ag::gaussian_vlb(mean, log_var, truth.mean, truth.log_variance, y0, first));
}

template <typename T>
ag::Var<T> loss_static(const ag::Var<T>& static_mask, const Tensor<T>& y0_prob) {
  return ag::mse(static_mask, ag::Var<T>(y0_prob));
}

template <typename T>
Objective<T> hybrid_objective(const Tensor<T>& y0, const Tensor<T>& yt, const Tensor<T>& eps,
                              const diffusion::Timesteps& t, const DenoiserOutput<T>& out,
                              const ag::Var<T>& static_mask, const NoiseSchedule& schedule,
                              const ObjectiveOptions& options) {
  ag::Var<T> total;
  auto accumulate = [&total](const ag::Var<T>& term) {
    total = total.defined() ? ag::add(total, term) : term;
  };
  double simple = 0, vlb = 0, stat = 0;
  if (options.use_simple) {
    const auto l = loss_simple(out.eps, eps);
    simple = l.value()[0];
    accumulate(l);
  }
  if (options.use_vlb) {
    const auto l = loss_vlb(y0, yt, t, out, schedule, options.detach_vlb_mean);
    vlb = l.value()[0];
    if (options.lambda_vlb != 0) accumulate(ag::scale(l, static_cast<T>(options.lambda_vlb)));
  }
  if (options.use_static) {
    Tensor<T> y0_prob(y0.shape());
    for (std::size_t i = 0; i < y0.size(); ++i) y0_prob[i] = (y0[i] + T(1)) / T(2);
    const auto l = loss_static(static_mask, y0_prob);
    stat = l.value()[0];
    accumulate(l);
  }
  if (!total.defined()) throw ConfigError("all loss components are disabled");
  return {total, loss_total(simple, options.use_vlb ? vlb : 0.0, stat, options.lambda_vlb)};
}

#define DIFFCOD_INSTANTIATE_OBJECTIVES(T)                                                      \
  template ag::Var<T> loss_simple(const ag::Var<T>&, const Tensor<T>&);                        \
  template ag::Var<T> loss_vlb(const Tensor<T>&, const Tensor<T>&, const diffusion::Timesteps&, \
                               const DenoiserOutput<T>&, const NoiseSchedule&, bool);          \
  template ag::Var<T> loss_static(const ag::Var<T>&, const Tensor<T>&);                        \
  template Objective<T> hybrid_objective(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, \
                                         const diffusion::Timesteps&, const DenoiserOutput<T>&, \
                                         const ag::Var<T>&, const NoiseSchedule&,              \
                                         const ObjectiveOptions&);

DIFFCOD_INSTANTIATE_OBJECTIVES(float)
DIFFCOD_INSTANTIATE_OBJECTIVES(double)

#undef DIFFCOD_INSTANTIATE_OBJECTIVES

}  // namespace diffcod
