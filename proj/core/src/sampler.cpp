#include "diffcod/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "diffcod/diffusion.hpp"
#include "diffcod/random.hpp"

namespace diffcod {

namespace {

// Retained step (1-based, respaced) whose parent timestep is nearest `t`;
// ties go to the later step.
int nearest_step(const NoiseSchedule& s, int t) {
  int best = 1;
  for (int i = 1; i <= s.T(); ++i) {
    const int d = std::abs(s.original_index(i) - t);
    const int bd = std::abs(s.original_index(best) - t);
    if (d < bd || (d == bd && s.original_index(i) > s.original_index(best))) best = i;
  }
  return best;
}

template <typename T>
Tensor<T> to_probability(const Tensor<T>& d) {
  Tensor<T> p(d.shape());
  for (std::size_t i = 0; i < d.size(); ++i) {
    p[i] = std::clamp((d[i] + T(1)) / T(2), T(0), T(1));
  }
  return p;
}

}  // namespace

LoadedModel load_model(const Checkpoint& ckpt) {
  auto config = train_config_from(ckpt.config);
  LoadedModel out{config, make_linear_schedule(config.T, config.beta_start, config.beta_end),
                  std::make_unique<DiffCodModel<float>>(config.model)};
  for (const auto& [name, var] : out.model->parameters().entries()) {
    const auto* t = ckpt.find(name);
    if (!t) throw ConfigError("checkpoint lacks parameter '" + name + "'");
    if (t->shape() != var.shape()) {
      throw ConfigError("checkpoint parameter '" + name + "' has shape " + to_string(t->shape()) +
                        ", model expects " + to_string(var.shape()));
    }
    auto v = var;
    v.value_mut() = *t;
  }
  return out;
}

template <typename T>
SampleTrace<T> sample(const DiffCodModel<T>& model, const NoiseSchedule& schedule,
                      const Tensor<T>& images, const SampleOptions& options) {
  if (options.num_steps < 0 || options.num_steps > schedule.T()) {
    throw ConfigError("requested " + std::to_string(options.num_steps) +
                      " sampling steps but the schedule has T = " + std::to_string(schedule.T()));
  }
  const Shape& is = images.shape();
  if (is.size() != 4 || is[1] != 3) throw ShapeError("images must be [N, 3, H, W]");
  const NoiseSchedule steps = options.num_steps == 0 || options.num_steps == schedule.T()
                                  ? schedule
                                  : respace(schedule, options.num_steps);

  std::vector<std::pair<int, int>> wanted;  // (requested t, retained step)
  for (int t : options.trace_at) {
    schedule.check_timestep(t);
    wanted.emplace_back(t, nearest_step(steps, t));
  }
  std::sort(wanted.begin(), wanted.end(), [](auto a, auto b) { return a.first > b.first; });

  ag::NoGradGuard no_grad;
  const int n = is[0];
  const Shape mask_shape{n, 1, is[2], is[3]};
  std::mt19937_64 rng(options.seed);
  std::normal_distribution<double> normal;
  Tensor<T> yt(mask_shape);
  for (auto& v : yt.span()) v = static_cast<T>(normal(rng));

  const ag::Var<T> image(images);
  const auto feature = model.condition(image);
  SampleTrace<T> trace;
  Tensor<T> pred_y0;
  for (int i = steps.T(); i >= 1; --i) {
    const diffusion::Timesteps parent_t(static_cast<std::size_t>(n), steps.original_index(i));
    const diffusion::Timesteps step_t(static_cast<std::size_t>(n), i);
    const auto out = model.denoise(image, ag::Var<T>(yt), parent_t, feature);
    const auto step = diffusion::p_mean_variance(out.eps.value(), out.v.value(), yt, step_t, steps);
    for (const auto& [t, at] : wanted) {
      if (at == i) {
        trace.snapshot_steps.push_back(t);
        trace.snapshots.push_back(to_probability(step.pred_y0));
      }
    }
    pred_y0 = step.pred_y0;
    yt = diffusion::p_sample_step(step, step_t, rng);
  }
  trace.mask = to_probability(pred_y0);
  return trace;
}

std::uint64_t member_seed(std::uint64_t seed, int k) {
  return k == 0 ? seed : derive_seed(seed, {static_cast<std::uint64_t>(k)});
}

template <typename T>
Tensor<T> sample_ensemble(const DiffCodModel<T>& model, const NoiseSchedule& schedule,
                          const Tensor<T>& images, int num_steps, int num_samples,
                          std::uint64_t seed, EnsembleMode mode) {
  if (num_samples < 1) throw ConfigError("ensemble size must be at least 1");
  Tensor<T> acc;
  for (int k = 0; k < num_samples; ++k) {
    SampleOptions opts;
    opts.num_steps = num_steps;
    opts.seed = member_seed(seed, k);
    auto mask = sample(model, schedule, images, opts).mask;
    if (num_samples == 1) return mask;
    if (mode == EnsembleMode::vote) mask = binarize(mask, 0.5);
    if (k == 0) {
      acc = std::move(mask);
    } else {
      for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += mask[i];
    }
  }
  for (auto& v : acc.span()) {
    v = mode == EnsembleMode::mean ? v / static_cast<T>(num_samples)
                                   : (2 * v > static_cast<T>(num_samples) ? T(1) : T(0));
  }
  return acc;
}

template <typename T>
Tensor<T> binarize(const Tensor<T>& mask, double threshold) {
  if (!(threshold >= 0 && threshold <= 1)) throw ConfigError("threshold must be in [0, 1]");
  Tensor<T> out(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = mask[i] >= threshold ? T(1) : T(0);
  return out;
}

#define DIFFCOD_INSTANTIATE_SAMPLER(T)                                                         \
  template SampleTrace<T> sample(const DiffCodModel<T>&, const NoiseSchedule&, const Tensor<T>&, \
                                 const SampleOptions&);                                        \
  template Tensor<T> sample_ensemble(const DiffCodModel<T>&, const NoiseSchedule&,             \
                                     const Tensor<T>&, int, int, std::uint64_t, EnsembleMode); \
  template Tensor<T> binarize(const Tensor<T>&, double);

DIFFCOD_INSTANTIATE_SAMPLER(float)
DIFFCOD_INSTANTIATE_SAMPLER(double)

#undef DIFFCOD_INSTANTIATE_SAMPLER

}  // namespace diffcod
