#include "diffcod/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "diffcod/gaussian.hpp"

namespace diffcod {

namespace {

void require_mask(const Shape& s, const char* what) {
  if (s.size() != 4 || s[1] != 1) {
    throw ShapeError(std::string(what) + ": mask must be [N, 1, H, W], got " + to_string(s));
  }
}

std::size_t per_item(const Shape& s, const diffusion::Timesteps& t, const char* what) {
  if (s.empty() || static_cast<std::size_t>(s[0]) != t.size()) {
    throw ShapeError(std::string(what) + ": need one timestep per batch element");
  }
  return numel(s) / static_cast<std::size_t>(s[0]);
}

template <typename T>
T clamp_unit(double v) {
  return static_cast<T>(std::clamp(v, -1.0, 1.0));
}

}  // namespace

template <typename T>
MaskTensor<T> MaskTensor<T>::in_diffusion_space(Tensor<T> data) {
  require_mask(data.shape(), "MaskTensor");
  return MaskTensor{std::move(data), MaskSpace::diffusion};
}

template <typename T>
MaskTensor<T> MaskTensor<T>::in_probability_space(Tensor<T> data) {
  require_mask(data.shape(), "MaskTensor");
  for (auto& v : data.span()) v = std::clamp(v, T(0), T(1));
  return MaskTensor{std::move(data), MaskSpace::probability};
}

template <typename T>
MaskTensor<T> MaskTensor<T>::to_probability() const {
  if (space == MaskSpace::probability) return *this;
  Tensor<T> out(data.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (data[i] + T(1)) / T(2);
  return in_probability_space(std::move(out));
}

template <typename T>
MaskTensor<T> MaskTensor<T>::to_diffusion() const {
  if (space == MaskSpace::diffusion) return *this;
  Tensor<T> out(data.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = T(2) * data[i] - T(1);
  return MaskTensor{std::move(out), MaskSpace::diffusion};
}

namespace diffusion {

template <typename T>
Tensor<T> q_sample(const Tensor<T>& y0, const Timesteps& t, const Tensor<T>& eps,
                   const NoiseSchedule& schedule) {
  require_same_shape(y0, eps, "q_sample");
  const std::size_t per = per_item(y0.shape(), t, "q_sample");
  Tensor<T> out(y0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double ab = schedule.alpha_bar(t[b]);
    const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<T>(a * y0[i] + s * eps[i]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> q_sample_literal(const Tensor<T>& y0, const Timesteps& t, const Tensor<T>& eps,
                           const NoiseSchedule& schedule) {
  require_same_shape(y0, eps, "q_sample_literal");
  const std::size_t per = per_item(y0.shape(), t, "q_sample_literal");
  Tensor<T> out(y0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double ab = schedule.alpha_bar(t[b]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<T>(std::sqrt(ab) * y0[i] + (1.0 - ab) * eps[i]);
    }
  }
  return out;
}

template <typename T>
Tensor<T> q_sample_iterative(const Tensor<T>& y0, int t, std::uint64_t seed,
                             const NoiseSchedule& schedule) {
  schedule.check_timestep(t);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> y(y0.span().begin(), y0.span().end());
  for (int s = 1; s <= t; ++s) {
    const double a = std::sqrt(schedule.alpha(s));
    const double n = std::sqrt(1.0 - schedule.alpha(s));
    for (double& v : y) v = a * v + n * normal(rng);
  }
  Tensor<T> out(y0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(y[i]);
  return out;
}

template <typename T>
Tensor<T> predict_y0_from_eps(const Tensor<T>& yt, const Timesteps& t, const Tensor<T>& eps,
                              const NoiseSchedule& schedule, bool clip) {
  require_same_shape(yt, eps, "predict_y0_from_eps");
  const std::size_t per = per_item(yt.shape(), t, "predict_y0_from_eps");
  Tensor<T> out(yt.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double ab = schedule.alpha_bar(t[b]);
    const double inv = 1.0 / std::sqrt(ab), s = std::sqrt(1.0 - ab);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double v = (yt[i] - s * eps[i]) * inv;
      out[i] = clip ? clamp_unit<T>(v) : static_cast<T>(v);
    }
  }
  return out;
}

template <typename T>
Posterior<T> q_posterior(const Tensor<T>& y0, const Tensor<T>& yt, const Timesteps& t,
                         const NoiseSchedule& schedule) {
  require_same_shape(y0, yt, "q_posterior");
  const std::size_t per = per_item(y0.shape(), t, "q_posterior");
  Posterior<T> out{Tensor<T>(y0.shape()), Tensor<T>(y0.shape()), Tensor<T>(y0.shape())};
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double c0 = schedule.posterior_mean_coef_y0(t[b]);
    const double c1 = schedule.posterior_mean_coef_yt(t[b]);
    const auto var = static_cast<T>(schedule.posterior_variance(t[b]));
    const auto lv = static_cast<T>(schedule.posterior_log_variance_clipped(t[b]));
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out.mean[i] = static_cast<T>(c0 * y0[i] + c1 * yt[i]);
      out.variance[i] = var;
      out.log_variance[i] = lv;
    }
  }
  return out;
}

template <typename T>
ReverseStepOutput<T> p_mean_variance(const Tensor<T>& eps, const Tensor<T>& v,
                                     const Tensor<T>& yt, const Timesteps& t,
                                     const NoiseSchedule& schedule) {
  require_same_shape(eps, yt, "p_mean_variance");
  require_same_shape(v, yt, "p_mean_variance");
  const std::size_t per = per_item(yt.shape(), t, "p_mean_variance");
  ReverseStepOutput<T> out;
  out.pred_y0 = predict_y0_from_eps(yt, t, eps, schedule, true);
  out.mean = q_posterior(out.pred_y0, yt, t, schedule).mean;
  out.variance = Tensor<T>(yt.shape());
  out.log_variance = Tensor<T>(yt.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    const double max_log = std::log(schedule.beta(t[b]));
    const double min_log = schedule.posterior_log_variance_clipped(t[b]);
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double frac = std::clamp(static_cast<double>(v[i]), 0.0, 1.0);
      const double lv = frac * max_log + (1.0 - frac) * min_log;
      out.log_variance[i] = static_cast<T>(lv);
      out.variance[i] = static_cast<T>(std::exp(lv));
    }
  }
  return out;
}

template <typename T>
Tensor<T> p_sample_step(const ReverseStepOutput<T>& step, const Timesteps& t,
                        std::mt19937_64& rng) {
  const std::size_t per = per_item(step.mean.shape(), t, "p_sample_step");
  std::normal_distribution<double> normal;
  Tensor<T> out(step.mean.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      const double z = t[b] > 1 ? normal(rng) : 0.0;
      out[i] = static_cast<T>(step.mean[i] + std::exp(0.5 * step.log_variance[i]) * z);
    }
  }
  return out;
}

template <typename T>
Tensor<T> p_sample_step(const Tensor<T>& eps, const Tensor<T>& v, const Tensor<T>& yt,
                        const Timesteps& t, const NoiseSchedule& schedule, std::mt19937_64& rng) {
  return p_sample_step(p_mean_variance(eps, v, yt, t, schedule), t, rng);
}

template <typename T>
Tensor<T> vlb_terms(const Tensor<T>& y0, const Tensor<T>& yt, const Timesteps& t,
                    const Tensor<T>& eps, const Tensor<T>& v, const NoiseSchedule& schedule) {
  const std::size_t per = per_item(y0.shape(), t, "vlb_terms");
  const auto truth = q_posterior(y0, yt, t, schedule);
  const auto model = p_mean_variance(eps, v, yt, t, schedule);
  Tensor<T> out(y0.shape());
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = b * per; i < (b + 1) * per; ++i) {
      out[i] = static_cast<T>(
          t[b] == 1 ? gaussian::discretized_nll(y0[i], model.mean[i], model.log_variance[i])
                    : gaussian::normal_kl(truth.mean[i], truth.log_variance[i], model.mean[i],
                                          model.log_variance[i]));
    }
  }
  return out;
}

template <typename T>
Tensor<T> prior_kl(const Tensor<T>& y0, const NoiseSchedule& schedule) {
  const double ab = schedule.alpha_bar(schedule.T());
  const double lv = std::log(1.0 - ab);
  Tensor<T> out(y0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<T>(gaussian::normal_kl(std::sqrt(ab) * y0[i], lv, 0.0, 0.0));
  }
  return out;
}

#define DIFFCOD_INSTANTIATE_DIFFUSION(T)                                                        \
  template Tensor<T> q_sample(const Tensor<T>&, const Timesteps&, const Tensor<T>&,             \
                              const NoiseSchedule&);                                            \
  template Tensor<T> q_sample_literal(const Tensor<T>&, const Timesteps&, const Tensor<T>&,     \
                                      const NoiseSchedule&);                                    \
  template Tensor<T> q_sample_iterative(const Tensor<T>&, int, std::uint64_t,                   \
                                        const NoiseSchedule&);                                  \
  template Tensor<T> predict_y0_from_eps(const Tensor<T>&, const Timesteps&, const Tensor<T>&,  \
                                         const NoiseSchedule&, bool);                           \
  template Posterior<T> q_posterior(const Tensor<T>&, const Tensor<T>&, const Timesteps&,       \
                                    const NoiseSchedule&);                                      \
  template ReverseStepOutput<T> p_mean_variance(const Tensor<T>&, const Tensor<T>&,             \
                                                const Tensor<T>&, const Timesteps&,             \
                                                const NoiseSchedule&);                          \
  template Tensor<T> p_sample_step(const ReverseStepOutput<T>&, const Timesteps&,               \
                                   std::mt19937_64&);                                           \
  template Tensor<T> p_sample_step(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                   const Timesteps&, const NoiseSchedule&, std::mt19937_64&);   \
  template Tensor<T> vlb_terms(const Tensor<T>&, const Tensor<T>&, const Timesteps&,            \
                               const Tensor<T>&, const Tensor<T>&, const NoiseSchedule&);       \
  template Tensor<T> prior_kl(const Tensor<T>&, const NoiseSchedule&);

DIFFCOD_INSTANTIATE_DIFFUSION(float)
DIFFCOD_INSTANTIATE_DIFFUSION(double)

#undef DIFFCOD_INSTANTIATE_DIFFUSION

}  // namespace diffusion

template struct MaskTensor<float>;
template struct MaskTensor<double>;

}  // namespace diffcod
