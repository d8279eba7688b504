#include "diffcod/conditioning.hpp"

namespace diffcod {

namespace {

template <typename T>
ag::Var<T> conv_silu(const nn::Conv2d<T>& conv, const ag::Var<T>& x) {
  return ag::silu(conv(x));
}

}  // namespace

template <typename T>
ToyEncoder<T>::ToyEncoder(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                          const std::string& prefix, const std::array<int, 4>& widths)
    : widths_(widths) {
  for (int w : widths) {
    if (w < 1) throw ConfigError("encoder widths must be positive");
  }
  const std::string p = prefix + ".";
  convs_[0] = nn::Conv2d<T>::create(store, rng, p + "stem.0", 3, widths[0], 3, 2);
  convs_[1] = nn::Conv2d<T>::create(store, rng, p + "stem.1", widths[0], widths[0], 3, 2);
  for (int s = 1; s <= 3; ++s) {
    const std::string name = p + "stage" + std::to_string(s);
    convs_[2 * s] = nn::Conv2d<T>::create(store, rng, name + ".down", widths[s - 1], widths[s], 3, 2);
    convs_[2 * s + 1] = nn::Conv2d<T>::create(store, rng, name + ".conv", widths[s], widths[s], 3);
  }
}

template <typename T>
FeaturePyramid<T> ToyEncoder<T>::extract(const ag::Var<T>& image) const {
  auto h = conv_silu(convs_[1], conv_silu(convs_[0], image));
  std::array<ag::Var<T>, 3> out;
  for (int s = 1; s <= 3; ++s) {
    h = conv_silu(convs_[2 * s + 1], conv_silu(convs_[2 * s], h));
    out[s - 1] = h;
  }
  return {out[0], out[1], out[2]};
}

template <typename T>
std::unique_ptr<Encoder<T>> make_encoder(const ConditioningConfig& config,
                                         nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                         const std::string& prefix) {
  if (config.encoder == "toy") {
    return std::make_unique<ToyEncoder<T>>(store, rng, prefix, config.encoder_widths);
  }
  throw ConfigError("unknown encoder '" + config.encoder + "' (available: toy)");
}

template <typename T>
FeaturePyramid<T> extract_features(const ag::Var<T>& image, const Encoder<T>& encoder) {
  const Shape& s = image.shape();
  if (s.size() != 4 || s[1] != 3) {
    throw ShapeError("image must be [N, 3, H, W], got " + to_string(s));
  }
  if (s[2] % 32 != 0 || s[3] % 32 != 0 || s[2] == 0 || s[3] == 0) {
    throw ShapeError("image size must be divisible by 32, got " + std::to_string(s[2]) + "x" +
                     std::to_string(s[3]));
  }
  return encoder.extract(image);
}

template <typename T>
FeatureFusion<T>::FeatureFusion(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                const std::string& prefix, const std::array<int, 3>& in_channels,
                                const ConditioningConfig& config)
    : use_ff_(config.use_ff) {
  const int b = config.branch_width;
  const int c = config.cond_width;
  if (b < 1 || c < 1) throw ConfigError("fusion widths must be positive");
  const std::string p = prefix + ".";
  if (!use_ff_) {
    reduce_ = nn::Conv2d<T>::create(store, rng, p + "reduce", in_channels[2], c, 1);
    return;
  }
  // Strides bring x1 (stride 8) and x2 (stride 16) down to stride 32.
  const std::array<std::array<int, 2>, 3> strides{{{2, 2}, {1, 2}, {1, 1}}};
  for (int i = 0; i < 3; ++i) {
    const std::string name = p + "branch" + std::to_string(i + 1);
    branch_[2 * i] =
        nn::Conv2d<T>::create(store, rng, name + ".0", in_channels[i], b, 3, strides[i][0]);
    branch_[2 * i + 1] = nn::Conv2d<T>::create(store, rng, name + ".1", b, b, 3, strides[i][1]);
  }
  reduce_ = nn::Conv2d<T>::create(store, rng, p + "reduce", 3 * b, c, 1);
}

template <typename T>
FusedFeature<T> FeatureFusion<T>::operator()(const FeaturePyramid<T>& pyramid) const {
  if (!use_ff_) return {reduce_(pyramid.x3)};
  const std::array<const ag::Var<T>*, 3> xs{&pyramid.x1, &pyramid.x2, &pyramid.x3};
  std::array<ag::Var<T>, 3> outs;
  for (int i = 0; i < 3; ++i) {
    outs[i] = conv_silu(branch_[2 * i + 1], conv_silu(branch_[2 * i], *xs[i]));
  }
  return {reduce_(ag::concat_channels(ag::concat_channels(outs[0], outs[1]), outs[2]))};
}

template <typename T>
StaticMaskHead<T>::StaticMaskHead(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                  const std::string& prefix, int cond_width)
    : proj_(nn::Conv2d<T>::create(store, rng, prefix + ".proj", cond_width, 1, 1)) {}

template <typename T>
ag::Var<T> StaticMaskHead<T>::operator()(const FusedFeature<T>& feature, int height,
                                         int width) const {
  return ag::sigmoid(ag::resize_bilinear(proj_(feature.f), height, width));
}

#define DIFFCOD_INSTANTIATE_CONDITIONING(T)                                                  \
  template class ToyEncoder<T>;                                                              \
  template class FeatureFusion<T>;                                                           \
  template class StaticMaskHead<T>;                                                          \
  template std::unique_ptr<Encoder<T>> make_encoder(const ConditioningConfig&,               \
                                                    nn::ParameterStore<T>&, std::mt19937_64&, \
                                                    const std::string&);                     \
  template FeaturePyramid<T> extract_features(const ag::Var<T>&, const Encoder<T>&);

DIFFCOD_INSTANTIATE_CONDITIONING(float)
DIFFCOD_INSTANTIATE_CONDITIONING(double)

#undef DIFFCOD_INSTANTIATE_CONDITIONING

}  // namespace diffcod
