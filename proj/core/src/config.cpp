#include "diffcod/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace diffcod {

const std::vector<KeySpec>& config_schema() {
  using K = KeyKind;
  static const std::vector<KeySpec> schema{
      {"T", K::integer, "diffusion steps"},
      {"beta_start", K::real, "first beta of the linear schedule"},
      {"beta_end", K::real, "last beta of the linear schedule"},
      {"learning_rate", K::real, "Adam learning rate (alias: lr)"},
      {"batch_size", K::integer, "training batch size"},
      {"image_size", K::integer, "square image size, multiple of 32 (alias: size)"},
      {"max_steps", K::integer, "training steps"},
      {"lambda_vlb", K::real, "weight of the variational bound term"},
      {"use_simple", K::flag, "include the noise-prediction loss"},
      {"use_vlb", K::flag, "include the variational bound loss"},
      {"use_static", K::flag, "include the static-mask loss"},
      {"augment_flip", K::flag, "random horizontal flips"},
      {"augment_crop", K::flag, "random crops"},
      {"augment_jitter", K::flag, "random brightness/contrast/saturation"},
      {"crop_min_scale", K::real, "smallest crop side as a fraction of the image"},
      {"jitter", K::real, "color jitter range"},
      {"seed", K::integer, "random seed"},
      {"checkpoint_interval", K::integer, "steps between checkpoints (0: only at the end)"},
      {"grad_clip", K::real, "global gradient-norm clip"},
      {"log_every", K::integer, "steps between progress lines (0: silent)"},
      {"encoder", K::text, "backbone name"},
      {"encoder_widths", K::int_list, "toy encoder widths (4 values)"},
      {"ff_width", K::integer, "feature-fusion branch width"},
      {"cond_width", K::integer, "conditioning / bottleneck width"},
      {"use_ff", K::flag, "three-branch feature fusion (false: stride-32 feature only)"},
      {"unet_widths", K::int_list, "denoiser level widths (5 values)"},
      {"use_iam", K::flag, "injection attention at the bottleneck (false: identity)"},
      {"iam_residual", K::flag, "add the attention output to the bottleneck"},
      {"iam_transpose", K::flag, "use M1 * M2^T instead of M1 * M2"},
      {"steps", K::integer, "sampling steps after respacing (0: full schedule)"},
      {"ensemble", K::integer, "samples per image"},
      {"ensemble_mode", K::text, "mean or vote"},
      {"trace", K::int_list, "timesteps at which to save pred_y0 snapshots"},
      {"count", K::integer, "synthetic pairs to generate"},
      {"contrast", K::real, "synthetic object/background contrast in (0, 1]"},
      {"octaves", K::integer, "value-noise octaves"},
      {"frequency", K::real, "value-noise base frequency"},
      {"blob_min", K::integer, "fewest objects per image"},
      {"blob_max", K::integer, "most objects per image"},
      {"radius_min", K::real, "smallest object semi-axis (fraction of size)"},
      {"radius_max", K::real, "largest object semi-axis (fraction of size)"},
      {"test_fraction", K::real, "held-out fraction written to test.txt"},
      {"alpha", K::real, "S-measure balance"},
      {"raw_metrics", K::flag, "skip min-max normalization in thresholded metrics"},
      {"data", K::text, "dataset root with Imgs/ and GT/"},
      {"manifest", K::text, "stem list restricting the dataset"},
      {"out", K::text, "output path"},
      {"checkpoint", K::text, "checkpoint to sample from"},
      {"resume", K::text, "checkpoint to resume training from"},
      {"loss_log", K::text, "loss CSV path"},
      {"images", K::text, "image directory or dataset root"},
      {"pred", K::text, "prediction directory"},
      {"gt", K::text, "ground-truth directory"},
      {"report", K::text, "metric CSV path"},
      {"json", K::text, "metric JSON path"},
  };
  return schema;
}

std::string canonical_key(const std::string& key) {
  if (key == "lr") return "learning_rate";
  if (key == "size") return "image_size";
  return key;
}

void RunConfig::require(const std::vector<std::string>& keys) const {
  for (const auto& k : keys) {
    if (!explicit_values.contains(k)) throw ConfigError("missing required key '" + k + "'");
  }
}

RunConfig build_config(const KeyValues& raw) {
  KeyValues values;
  for (const auto& [k, v] : raw) values[canonical_key(k)] = v;
  const auto& schema = config_schema();
  for (const auto& [k, v] : values) {
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const KeySpec& s) { return s.name == k; });
    if (it == schema.end()) throw ConfigError("unknown key '" + k + "'");
    switch (it->kind) {
      case KeyKind::integer: parse_integer(k, v); break;
      case KeyKind::real: parse_real(k, v); break;
      case KeyKind::flag: parse_flag(k, v); break;
      case KeyKind::int_list: parse_int_list(k, v); break;
      case KeyKind::text: break;
    }
  }

  RunConfig c;
  c.explicit_values = values;
  c.train = train_config_from(values);
  auto& s = c.synth;
  s.image_size = c.train.image_size;
  s.seed = c.train.seed;
  for (const auto& [k, v] : values) {
    if (k == "steps") c.sample.steps = static_cast<int>(parse_integer(k, v));
    else if (k == "ensemble") c.sample.ensemble = static_cast<int>(parse_integer(k, v));
    else if (k == "ensemble_mode") {
      if (v == "mean") c.sample.ensemble_mode = EnsembleMode::mean;
      else if (v == "vote") c.sample.ensemble_mode = EnsembleMode::vote;
      else throw ConfigError("key 'ensemble_mode': expected mean or vote, got '" + v + "'");
    }
    else if (k == "trace") c.sample.trace = parse_int_list(k, v);
    else if (k == "count") s.count = static_cast<int>(parse_integer(k, v));
    else if (k == "contrast") s.contrast = parse_real(k, v);
    else if (k == "octaves") s.octaves = static_cast<int>(parse_integer(k, v));
    else if (k == "frequency") s.frequency = parse_real(k, v);
    else if (k == "blob_min") s.blob_min = static_cast<int>(parse_integer(k, v));
    else if (k == "blob_max") s.blob_max = static_cast<int>(parse_integer(k, v));
    else if (k == "radius_min") s.radius_min = parse_real(k, v);
    else if (k == "radius_max") s.radius_max = parse_real(k, v);
    else if (k == "test_fraction") s.test_fraction = parse_real(k, v);
    else if (k == "alpha") c.metrics.alpha = parse_real(k, v);
    else if (k == "raw_metrics") c.metrics.normalize = !parse_flag(k, v);
    else if (k == "log_every") c.log_every = parse_integer(k, v);
    else if (k == "data") c.data = v;
    else if (k == "manifest") c.manifest = v;
    else if (k == "out") c.out = v;
    else if (k == "checkpoint") c.checkpoint = v;
    else if (k == "resume") c.resume = v;
    else if (k == "loss_log") c.loss_log = v;
    else if (k == "images") c.images = v;
    else if (k == "pred") c.pred = v;
    else if (k == "gt") c.gt = v;
    else if (k == "report") c.report = v;
    else if (k == "json") c.json = v;
  }
  if (c.sample.steps < 0) throw ConfigError("key 'steps': must be nonnegative");
  if (c.sample.ensemble < 1) throw ConfigError("key 'ensemble': must be at least 1");
  if (!(c.metrics.alpha >= 0 && c.metrics.alpha <= 1)) {
    throw ConfigError("key 'alpha': must be in [0, 1]");
  }
  c.train.validate();
  return c;
}

RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides) {
  KeyValues values;
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw IoError("cannot read config file " + file.string());
    std::ostringstream text;
    text << in.rdbuf();
    for (const auto& [k, v] : parse_key_values(text.str())) values[canonical_key(k)] = v;
  }
  for (const auto& [k, v] : overrides) values[canonical_key(k)] = v;
  return build_config(values);
}

}  // namespace diffcod
