#include "diffcod/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>

#include "diffcod/random.hpp"

namespace diffcod {

namespace {

enum Stream : std::uint64_t { kStepNoise = 1, kAugment = 2, kEpoch = 3 };

std::string flag(bool b) { return b ? "true" : "false"; }

int first_non_finite(const Tensor<float>& t, int batch) {
  const std::size_t per = t.size() / static_cast<std::size_t>(batch);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) return static_cast<int>(i / per);
  }
  return -1;
}

}  // namespace

void TrainConfig::validate() const {
  if (T < 1) throw ConfigError("T must be at least 1");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (image_size < 32 || image_size % 32 != 0) {
    throw ConfigError("image_size must be a positive multiple of 32");
  }
  if (max_steps < 0) throw ConfigError("max_steps must be nonnegative");
  if (!(learning_rate > 0)) throw ConfigError("learning_rate must be positive");
  if (objective.lambda_vlb < 0) throw ConfigError("lambda_vlb must be nonnegative");
  if (checkpoint_interval < 0) throw ConfigError("checkpoint_interval must be nonnegative");
  if (!(grad_clip > 0)) throw ConfigError("grad_clip must be positive");
  if (!(augment.crop_min_scale > 0 && augment.crop_min_scale <= 1)) {
    throw ConfigError("crop_min_scale must be in (0, 1]");
  }
  if (!(augment.jitter >= 0 && augment.jitter < 1)) throw ConfigError("jitter must be in [0, 1)");
}

KeyValues to_key_values(const TrainConfig& c) {
  KeyValues kv = to_key_values(c.model);
  kv["T"] = std::to_string(c.T);
  kv["beta_start"] = format_real(c.beta_start);
  kv["beta_end"] = format_real(c.beta_end);
  kv["learning_rate"] = format_real(c.learning_rate);
  kv["batch_size"] = std::to_string(c.batch_size);
  kv["image_size"] = std::to_string(c.image_size);
  kv["max_steps"] = std::to_string(c.max_steps);
  kv["lambda_vlb"] = format_real(c.objective.lambda_vlb);
  kv["use_simple"] = flag(c.objective.use_simple);
  kv["use_vlb"] = flag(c.objective.use_vlb);
  kv["use_static"] = flag(c.objective.use_static);
  kv["augment_flip"] = flag(c.augment.flip);
  kv["augment_crop"] = flag(c.augment.crop);
  kv["augment_jitter"] = flag(c.augment.color_jitter);
  kv["crop_min_scale"] = format_real(c.augment.crop_min_scale);
  kv["jitter"] = format_real(c.augment.jitter);
  kv["seed"] = std::to_string(c.seed);
  kv["checkpoint_interval"] = std::to_string(c.checkpoint_interval);
  kv["grad_clip"] = format_real(c.grad_clip);
  return kv;
}

TrainConfig train_config_from(const KeyValues& kv) {
  TrainConfig c;
  c.model = model_config_from(kv);
  for (const auto& [k, v] : kv) {
    if (k == "T") c.T = static_cast<int>(parse_integer(k, v));
    else if (k == "beta_start") c.beta_start = parse_real(k, v);
    else if (k == "beta_end") c.beta_end = parse_real(k, v);
    else if (k == "learning_rate") c.learning_rate = parse_real(k, v);
    else if (k == "batch_size") c.batch_size = static_cast<int>(parse_integer(k, v));
    else if (k == "image_size") c.image_size = static_cast<int>(parse_integer(k, v));
    else if (k == "max_steps") c.max_steps = parse_integer(k, v);
    else if (k == "lambda_vlb") c.objective.lambda_vlb = parse_real(k, v);
    else if (k == "use_simple") c.objective.use_simple = parse_flag(k, v);
    else if (k == "use_vlb") c.objective.use_vlb = parse_flag(k, v);
    else if (k == "use_static") c.objective.use_static = parse_flag(k, v);
    else if (k == "augment_flip") c.augment.flip = parse_flag(k, v);
    else if (k == "augment_crop") c.augment.crop = parse_flag(k, v);
    else if (k == "augment_jitter") c.augment.color_jitter = parse_flag(k, v);
    else if (k == "crop_min_scale") c.augment.crop_min_scale = parse_real(k, v);
    else if (k == "jitter") c.augment.jitter = parse_real(k, v);
    else if (k == "seed") c.seed = static_cast<std::uint64_t>(parse_integer(k, v));
    else if (k == "checkpoint_interval") c.checkpoint_interval = parse_integer(k, v);
    else if (k == "grad_clip") c.grad_clip = parse_real(k, v);
  }
  c.augment.image_size = c.image_size;
  c.model.init_seed = c.seed;
  return c;
}

Trainer::Trainer(const TrainConfig& config)
    : config_(config),
      schedule_(make_linear_schedule(config.T, config.beta_start, config.beta_end)) {
  config_.validate();
  config_.augment.image_size = config_.image_size;
  model_ = std::make_unique<DiffCodModel<float>>(config_.model);
  nn::Adam<float>::Options opts;
  opts.learning_rate = config_.learning_rate;
  adam_ = std::make_unique<nn::Adam<float>>(model_->parameters().vars(), opts);
}

LossBreakdown Trainer::train_step(const Tensor<float>& images, const Tensor<float>& masks) {
  const Shape& is = images.shape();
  if (is.size() != 4 || is[1] != 3 || masks.shape() != Shape{is[0], 1, is[2], is[3]}) {
    throw ShapeError("train_step expects images [B, 3, H, W] and masks [B, 1, H, W], got " +
                     to_string(is) + " and " + to_string(masks.shape()));
  }
  const int batch = is[0];
  const long next = step_ + 1;
  std::mt19937_64 rng(derive_seed(config_.seed, {kStepNoise, static_cast<std::uint64_t>(next)}));
  std::uniform_int_distribution<int> pick_t(1, schedule_.T());
  std::normal_distribution<double> normal;
  diffusion::Timesteps t(static_cast<std::size_t>(batch));
  for (auto& v : t) v = pick_t(rng);
  Tensor<float> eps(masks.shape());
  for (auto& v : eps.span()) v = static_cast<float>(normal(rng));
  Tensor<float> y0(masks.shape());
  for (std::size_t i = 0; i < y0.size(); ++i) y0[i] = masks[i] >= 0.5f ? 1.0f : -1.0f;
  const auto yt = diffusion::q_sample(y0, t, eps, schedule_);

  const ag::Var<float> image(images);
  const auto feature = model_->condition(image);
  const auto static_mask = model_->static_mask(feature, is[2], is[3]);
  const auto out = model_->denoise(image, ag::Var<float>(yt), t, feature);
  const auto objective =
      hybrid_objective(y0, yt, eps, t, out, static_mask, schedule_, config_.objective);
  if (!std::isfinite(objective.breakdown.total)) {
    int culprit = first_non_finite(images, batch);
    if (culprit < 0) culprit = first_non_finite(out.eps.value(), batch);
    if (culprit < 0) culprit = first_non_finite(out.v.value(), batch);
    if (culprit < 0) culprit = first_non_finite(static_mask.value(), batch);
    throw DivergenceError("non-finite loss at step " + std::to_string(next) +
                              (culprit >= 0 ? " (batch element " + std::to_string(culprit) + ")"
                                            : std::string()),
                          next, culprit);
  }
  ag::backward(objective.total);
  nn::clip_grad_norm(model_->parameters().vars(), config_.grad_clip);
  adam_->step();
  adam_->zero_grad();
  step_ = next;
  return objective.breakdown;
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint ckpt;
  ckpt.step = step_;
  ckpt.config = to_key_values(config_);
  const auto& entries = model_->parameters().entries();
  for (const auto& [name, var] : entries) ckpt.tensors.emplace_back(name, var.value());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    ckpt.tensors.emplace_back("adam_m/" + entries[i].first, adam_->first_moments()[i]);
    ckpt.tensors.emplace_back("adam_v/" + entries[i].first, adam_->second_moments()[i]);
  }
  return ckpt;
}

void Trainer::restore(const Checkpoint& ckpt) {
  auto& entries = model_->parameters().entries();
  auto fetch = [&](const std::string& name, const Shape& shape) -> const Tensor<float>& {
    const auto* t = ckpt.find(name);
    if (!t) throw ConfigError("checkpoint lacks tensor '" + name + "'");
    if (t->shape() != shape) {
      throw ConfigError("checkpoint tensor '" + name + "' has shape " + to_string(t->shape()) +
                        ", model expects " + to_string(shape));
    }
    return *t;
  };
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto var = entries[i].second;
    const Shape shape = var.shape();
    var.value_mut() = fetch(entries[i].first, shape);
    if (ckpt.find("adam_m/" + entries[i].first)) {
      adam_->first_moments()[i] = fetch("adam_m/" + entries[i].first, shape);
      adam_->second_moments()[i] = fetch("adam_v/" + entries[i].first, shape);
    } else {
      adam_->first_moments()[i] = Tensor<float>(shape);
      adam_->second_moments()[i] = Tensor<float>(shape);
    }
  }
  step_ = ckpt.step;
  adam_->set_step_count(ckpt.step);
}

std::vector<std::size_t> batch_indices(std::uint64_t seed, long step, int batch_size,
                                       std::size_t dataset_size) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(batch_size));
  std::vector<std::size_t> perm;
  long cached_epoch = -1;
  for (int i = 0; i < batch_size; ++i) {
    const std::size_t position =
        static_cast<std::size_t>(step - 1) * static_cast<std::size_t>(batch_size) + i;
    const long epoch = static_cast<long>(position / dataset_size);
    if (epoch != cached_epoch) {
      perm.resize(dataset_size);
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      std::mt19937_64 rng(derive_seed(seed, {kEpoch, static_cast<std::uint64_t>(epoch)}));
      std::shuffle(perm.begin(), perm.end(), rng);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % dataset_size]);
  }
  return out;
}

Checkpoint train(const std::vector<ImageMaskPair>& dataset, const TrainConfig& config,
                 const TrainRunOptions& options, const Checkpoint* resume) {
  if (dataset.empty()) throw ConfigError("training dataset is empty");
  Trainer trainer(config);
  if (resume) trainer.restore(*resume);
  const auto& cfg = trainer.config();

  auto save = [&]() {
    if (!options.checkpoint_path.empty()) save_checkpoint(options.checkpoint_path, trainer.checkpoint());
  };
  std::ofstream log;
  if (!options.loss_log.empty()) {
    const bool append = resume && std::filesystem::exists(options.loss_log);
    log.open(options.loss_log, append ? std::ios::app : std::ios::trunc);
    if (!log) throw IoError("cannot write loss log " + options.loss_log.string());
    if (!append) log << "step,simple,vlb,static,total\n";
  }
  save();

  const int s = cfg.image_size;
  const int b = cfg.batch_size;
  while (trainer.step() < cfg.max_steps) {
    const long next = trainer.step() + 1;
    const auto indices = batch_indices(cfg.seed, next, b, dataset.size());
    Tensor<float> images({b, 3, s, s}), masks({b, 1, s, s});
    for (int i = 0; i < b; ++i) {
      std::mt19937_64 rng(derive_seed(
          cfg.seed, {kAugment, static_cast<std::uint64_t>(next), static_cast<std::uint64_t>(i)}));
      const auto pair = augment(dataset[indices[static_cast<std::size_t>(i)]], rng, cfg.augment);
      std::copy(pair.image.span().begin(), pair.image.span().end(),
                images.data() + static_cast<std::size_t>(i) * pair.image.size());
      std::copy(pair.mask.span().begin(), pair.mask.span().end(),
                masks.data() + static_cast<std::size_t>(i) * pair.mask.size());
    }
    const auto loss = trainer.train_step(images, masks);
    if (log) {
      char row[160];
      std::snprintf(row, sizeof row, "%ld,%.9g,%.9g,%.9g,%.9g\n", next, loss.simple, loss.vlb,
                    loss.static_term, loss.total);
      log << row;
    }
    if (options.on_step) options.on_step(next, loss);
    if (cfg.checkpoint_interval > 0 && next % cfg.checkpoint_interval == 0) save();
  }
  if (log) log.flush();
  save();
  return trainer.checkpoint();
}

}  // namespace diffcod
