#pragma once

#include <vector>

namespace diffcod {

/// Precomputed forward-process tables. Public accessors take 1-based
/// timesteps t in [1, T]; the raw vectors are 0-based (index t - 1).
/// All tables are double precision regardless of model precision.
class NoiseSchedule {
 public:
  /// Builds every derived table from a beta sequence. `original_indices`
  /// maps each step to its parent timestep (empty means identity).
  /// `alpha_bars`, when given, is taken verbatim instead of the running
  /// product (respacing copies the parent's values so they match exactly).
  NoiseSchedule(std::vector<double> betas, std::vector<int> original_indices = {},
                bool respaced = false, std::vector<double> alpha_bars = {});

  int T() const { return static_cast<int>(betas_.size()); }
  bool respaced() const { return respaced_; }

  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const { return alpha_bars_[index(t)]; }
  /// alpha_bar at t - 1, with alpha_bar(0) = 1.
  double alpha_bar_prev(int t) const { return alpha_bars_prev_[index(t)]; }
  double posterior_variance(int t) const { return posterior_variance_[index(t)]; }
  /// log posterior variance, with t = 1 using the t = 2 value to avoid -inf.
  double posterior_log_variance_clipped(int t) const { return posterior_log_var_[index(t)]; }
  double posterior_mean_coef_y0(int t) const { return coef_y0_[index(t)]; }
  double posterior_mean_coef_yt(int t) const { return coef_yt_[index(t)]; }
  int original_index(int t) const { return original_indices_[index(t)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }
  const std::vector<double>& posterior_variances() const { return posterior_variance_; }
  const std::vector<double>& posterior_mean_coefs_y0() const { return coef_y0_; }
  const std::vector<double>& posterior_mean_coefs_yt() const { return coef_yt_; }
  const std::vector<int>& original_indices() const { return original_indices_; }

  /// Throws IndexError unless 1 <= t <= T.
  void check_timestep(int t) const;

 private:
  std::size_t index(int t) const {
    check_timestep(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
  std::vector<double> alpha_bars_prev_;
  std::vector<double> posterior_variance_;
  std::vector<double> posterior_log_var_;
  std::vector<double> coef_y0_;
  std::vector<double> coef_yt_;
  std::vector<int> original_indices_;
  bool respaced_ = false;
};

inline constexpr double kDefaultBetaStart = 1e-4;
inline constexpr double kDefaultBetaEnd = 0.02;
inline constexpr int kDefaultTimesteps = 1000;

/// Betas interpolated linearly from beta_start to beta_end inclusive.
NoiseSchedule make_linear_schedule(int T, double beta_start = kDefaultBetaStart,
                                   double beta_end = kDefaultBetaEnd);

/// Evenly strided parent timesteps (1-based, always including 1 and T).
std::vector<int> respaced_timesteps(int T, int num_steps);

/// Schedule over a subset of parent timesteps whose alpha_bar values equal
/// the parent's at the retained steps.
NoiseSchedule respace(const NoiseSchedule& schedule, int num_steps);

}  // namespace diffcod
