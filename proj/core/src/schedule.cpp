#include "diffcod/schedule.hpp"

#include <cmath>
#include <string>

#include "diffcod/errors.hpp"

namespace diffcod {

NoiseSchedule::NoiseSchedule(std::vector<double> betas, std::vector<int> original_indices,
                             bool respaced, std::vector<double> alpha_bars)
    : betas_(std::move(betas)), original_indices_(std::move(original_indices)), respaced_(respaced) {
  const std::size_t n = betas_.size();
  if (n == 0) throw ConfigError("noise schedule needs at least one step");
  for (double b : betas_) {
    if (!(b > 0.0 && b < 1.0)) throw ConfigError("beta out of (0, 1): " + std::to_string(b));
  }
  if (original_indices_.empty()) {
    original_indices_.resize(n);
    for (std::size_t i = 0; i < n; ++i) original_indices_[i] = static_cast<int>(i + 1);
  } else if (original_indices_.size() != n) {
    throw ConfigError("original_indices length does not match betas");
  }

  if (!alpha_bars.empty() && alpha_bars.size() != n) {
    throw ConfigError("alpha_bars length does not match betas");
  }
  alphas_.resize(n);
  alpha_bars_.resize(n);
  alpha_bars_prev_.resize(n);
  posterior_variance_.resize(n);
  posterior_log_var_.resize(n);
  coef_y0_.resize(n);
  coef_yt_.resize(n);

  double running = 1.0;
  for (std::size_t i = 0; i < n; ++i) {
    alphas_[i] = 1.0 - betas_[i];
    alpha_bars_prev_[i] = running;
    running = alpha_bars.empty() ? running * alphas_[i] : alpha_bars[i];
    alpha_bars_[i] = running;
  }
  for (std::size_t i = 0; i < n; ++i) {
    const double ab = alpha_bars_[i];
    const double ab_prev = alpha_bars_prev_[i];
    posterior_variance_[i] = betas_[i] * (1.0 - ab_prev) / (1.0 - ab);
    coef_y0_[i] = betas_[i] * std::sqrt(ab_prev) / (1.0 - ab);
    coef_yt_[i] = (1.0 - ab_prev) * std::sqrt(alphas_[i]) / (1.0 - ab);
  }
  for (std::size_t i = 0; i < n; ++i) {
    double v = posterior_variance_[i];
    if (i == 0) {
      // A single-step schedule has no t = 2; fall back to beta_1.
      v = n > 1 ? posterior_variance_[1] : betas_[0];
    }
    posterior_log_var_[i] = std::log(v);
  }
}

void NoiseSchedule::check_timestep(int t) const {
  if (t < 1 || t > T()) {
    throw IndexError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(T()) + "]");
  }
}

NoiseSchedule make_linear_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw ConfigError("T must be >= 1, got " + std::to_string(T));
  if (!(beta_start > 0.0 && beta_start < 1.0) || !(beta_end > 0.0 && beta_end < 1.0)) {
    throw ConfigError("beta bounds must lie in (0, 1)");
  }
  if (beta_start > beta_end) throw ConfigError("beta_start must not exceed beta_end");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(i) / (T - 1);
    betas[static_cast<std::size_t>(i)] = beta_start + (beta_end - beta_start) * frac;
  }
  return NoiseSchedule(std::move(betas));
}

std::vector<int> respaced_timesteps(int T, int num_steps) {
  if (num_steps < 1 || num_steps > T) {
    throw ConfigError("respaced step count " + std::to_string(num_steps) + " outside [1, " +
                      std::to_string(T) + "]");
  }
  std::vector<int> steps(static_cast<std::size_t>(num_steps));
  if (num_steps == 1) {
    steps[0] = T;
    return steps;
  }
  const double stride = static_cast<double>(T - 1) / (num_steps - 1);
  for (int i = 0; i < num_steps; ++i) {
    steps[static_cast<std::size_t>(i)] = 1 + static_cast<int>(std::lround(i * stride));
  }
  return steps;
}

NoiseSchedule respace(const NoiseSchedule& schedule, int num_steps) {
  if (schedule.respaced()) throw ConfigError("cannot respace an already respaced schedule");
  const auto steps = respaced_timesteps(schedule.T(), num_steps);
  std::vector<double> betas;
  std::vector<double> alpha_bars;
  betas.reserve(steps.size());
  alpha_bars.reserve(steps.size());
  double prev = 1.0;
  for (int t : steps) {
    const double ab = schedule.alpha_bar(t);
    betas.push_back(1.0 - ab / prev);
    alpha_bars.push_back(ab);
    prev = ab;
  }
  return NoiseSchedule(std::move(betas), steps, true, std::move(alpha_bars));
}

}  // namespace diffcod
