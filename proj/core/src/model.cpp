#include "diffcod/model.hpp"

#include <random>

namespace diffcod {

namespace {

template <std::size_t N>
std::array<int, N> fixed_list(const std::string& key, const std::string& value) {
  const auto list = parse_int_list(key, value);
  if (list.size() != N) {
    throw ConfigError("key '" + key + "': expected " + std::to_string(N) + " values, got " +
                      std::to_string(list.size()));
  }
  std::array<int, N> out{};
  std::copy(list.begin(), list.end(), out.begin());
  return out;
}

}  // namespace

KeyValues to_key_values(const ModelConfig& config) {
  const auto& c = config.conditioning;
  const auto& d = config.denoiser;
  return {
      {"encoder", c.encoder},
      {"encoder_widths", format_int_list({c.encoder_widths.begin(), c.encoder_widths.end()})},
      {"ff_width", std::to_string(c.branch_width)},
      {"cond_width", std::to_string(c.cond_width)},
      {"use_ff", c.use_ff ? "true" : "false"},
      {"unet_widths", format_int_list({d.widths.begin(), d.widths.end()})},
      {"use_iam", d.use_iam ? "true" : "false"},
      {"iam_residual", d.iam_residual ? "true" : "false"},
      {"iam_transpose", d.iam_transpose ? "true" : "false"},
      {"seed", std::to_string(config.init_seed)},
  };
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig m;
  auto& c = m.conditioning;
  auto& d = m.denoiser;
  for (const auto& [key, value] : kv) {
    if (key == "encoder") c.encoder = value;
    else if (key == "encoder_widths") c.encoder_widths = fixed_list<4>(key, value);
    else if (key == "ff_width") c.branch_width = static_cast<int>(parse_integer(key, value));
    else if (key == "cond_width") c.cond_width = static_cast<int>(parse_integer(key, value));
    else if (key == "use_ff") c.use_ff = parse_flag(key, value);
    else if (key == "unet_widths") d.widths = fixed_list<5>(key, value);
    else if (key == "use_iam") d.use_iam = parse_flag(key, value);
    else if (key == "iam_residual") d.iam_residual = parse_flag(key, value);
    else if (key == "iam_transpose") d.iam_transpose = parse_flag(key, value);
    else if (key == "seed") m.init_seed = static_cast<std::uint64_t>(parse_integer(key, value));
  }
  d.bottleneck_width = c.cond_width;
  return m;
}

template <typename T>
DiffCodModel<T>::DiffCodModel(const ModelConfig& config) : config_(config) {
  config_.denoiser.bottleneck_width = config_.conditioning.cond_width;
  std::mt19937_64 rng(config_.init_seed);
  encoder_ = make_encoder<T>(config_.conditioning, store_, rng, "encoder");
  fusion_ = FeatureFusion<T>(store_, rng, "fusion", encoder_->channels(), config_.conditioning);
  static_head_ = StaticMaskHead<T>(store_, rng, "static_head", config_.conditioning.cond_width);
  denoiser_ = Denoiser<T>(store_, rng, "unet", config_.denoiser);
}

template <typename T>
FusedFeature<T> DiffCodModel<T>::condition(const ag::Var<T>& image) const {
  ++conditioning_calls_;
  return fusion_(extract_features(image, *encoder_));
}

template <typename T>
ag::Var<T> DiffCodModel<T>::static_mask(const FusedFeature<T>& feature, int height,
                                        int width) const {
  return static_head_(feature, height, width);
}

template <typename T>
DenoiserOutput<T> DiffCodModel<T>::denoise(const ag::Var<T>& image, const ag::Var<T>& yt,
                                           const std::vector<int>& t,
                                           const FusedFeature<T>& feature) const {
  return denoiser_(image, yt, t, feature);
}

template class DiffCodModel<float>;
template class DiffCodModel<double>;

}  // namespace diffcod
