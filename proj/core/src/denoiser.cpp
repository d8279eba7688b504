#include "diffcod/denoiser.hpp"

#include <cmath>

namespace diffcod {

namespace {

void check_groups(int channels, int groups, const std::string& where) {
  if (channels % groups != 0) {
    throw ConfigError(where + ": " + std::to_string(channels) +
                      " channels not divisible into " + std::to_string(groups) + " groups");
  }
}

}  // namespace

template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& t, int width) {
  if (width < 2 || width % 2 != 0) throw ConfigError("time embedding width must be even");
  const int half = width / 2;
  Tensor<T> out({static_cast<int>(t.size()), width});
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      const double arg = t[b] * freq;
      out[b * width + i] = static_cast<T>(std::sin(arg));
      out[b * width + half + i] = static_cast<T>(std::cos(arg));
    }
  }
  return out;
}

template <typename T>
TimestepEmbedding<T>::TimestepEmbedding(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                        const std::string& prefix, int base_width)
    : base_width_(base_width),
      fc1_(nn::Linear<T>::create(store, rng, prefix + ".fc1", base_width, 4 * base_width)),
      fc2_(nn::Linear<T>::create(store, rng, prefix + ".fc2", 4 * base_width, 4 * base_width)) {}

template <typename T>
ag::Var<T> TimestepEmbedding<T>::operator()(const std::vector<int>& t) const {
  ag::Var<T> x(sinusoidal_embedding<T>(t, base_width_));
  return fc2_(ag::silu(fc1_(x)));
}

template <typename T>
ResBlock<T>::ResBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                      const std::string& prefix, int in_channels, int out_channels, int emb_width,
                      int groups) {
  check_groups(in_channels, groups, prefix);
  check_groups(out_channels, groups, prefix);
  norm1_ = nn::GroupNorm<T>::create(store, prefix + ".norm1", in_channels, groups);
  conv1_ = nn::Conv2d<T>::create(store, rng, prefix + ".conv1", in_channels, out_channels, 3);
  time_ = nn::Linear<T>::create(store, rng, prefix + ".time", emb_width, out_channels);
  norm2_ = nn::GroupNorm<T>::create(store, prefix + ".norm2", out_channels, groups);
  conv2_ = nn::Conv2d<T>::create(store, rng, prefix + ".conv2", out_channels, out_channels, 3);
  if (in_channels != out_channels) {
    skip_ = nn::Conv2d<T>::create(store, rng, prefix + ".skip", in_channels, out_channels, 1);
    has_skip_ = true;
  }
}

template <typename T>
ag::Var<T> ResBlock<T>::operator()(const ag::Var<T>& x, const ag::Var<T>& emb) const {
  auto h = conv1_(ag::silu(norm1_(x)));
  h = ag::add_channel_vector(h, time_(emb));
  h = conv2_(ag::silu(norm2_(h)));
  return ag::add(has_skip_ ? skip_(x) : x, h);
}

template <typename T>
Denoiser<T>::Denoiser(nn::ParameterStore<T>& store, std::mt19937_64& rng,
                      const std::string& prefix, const DenoiserConfig& config)
    : config_(config) {
  const auto& w = config.widths;
  const int g = config.groups;
  for (int c : w) {
    if (c < 1) throw ConfigError("UNet widths must be positive");
  }
  const std::string p = prefix + ".";
  time_ = TimestepEmbedding<T>(store, rng, p + "time", w[0]);
  const int e = time_.out_width();
  in_conv_ = nn::Conv2d<T>::create(store, rng, p + "in_conv", 4, w[0], 3);
  int ch = w[0];
  for (int l = 0; l < 5; ++l) {
    const std::string name = p + "down" + std::to_string(l);
    down_blocks_[l] = ResBlock<T>(store, rng, name + ".block", ch, w[l], e, g);
    downsample_[l] = nn::Conv2d<T>::create(store, rng, name + ".downsample", w[l], w[l], 3, 2);
    ch = w[l];
  }
  const int c = config.bottleneck_width;
  mid_ = ResBlock<T>(store, rng, p + "mid", ch, c, e, g);
  if (config.use_iam) iam_ = IAMParameters<T>::create(store, rng, p + "iam", c);
  ch = c;
  for (int l = 4; l >= 0; --l) {
    up_blocks_[l] = ResBlock<T>(store, rng, p + "up" + std::to_string(l), ch + w[l], w[l], e, g);
    ch = w[l];
  }
  out_norm_ = nn::GroupNorm<T>::create(store, p + "out_norm", w[0], g);
  out_conv_ = nn::Conv2d<T>::create(store, rng, p + "out_conv", w[0], 2, 3, 1, true);
}

template <typename T>
UNetState<T> Denoiser<T>::encode(const ag::Var<T>& image, const ag::Var<T>& yt,
                                 const std::vector<int>& t) const {
  const Shape& is = image.shape();
  const Shape& ys = yt.shape();
  if (is.size() != 4 || is[1] != 3 || ys.size() != 4 || ys[1] != 1 || is[0] != ys[0] ||
      is[2] != ys[2] || is[3] != ys[3]) {
    throw ShapeError("denoiser expects image [N, 3, H, W] and y_t [N, 1, H, W], got " +
                     to_string(is) + " and " + to_string(ys));
  }
  if (is[2] % 32 != 0 || is[3] % 32 != 0) {
    throw ShapeError("denoiser input size must be divisible by 32, got " + to_string(is));
  }
  if (static_cast<int>(t.size()) != is[0]) throw ShapeError("need one timestep per batch element");

  UNetState<T> state;
  state.emb = ag::silu(time_(t));
  auto h = in_conv_(ag::concat_channels(image, yt));
  for (int l = 0; l < 5; ++l) {
    h = down_blocks_[l](h, state.emb);
    state.skips.push_back(h);
    h = downsample_[l](h);
  }
  state.bottleneck = mid_(h, state.emb);
  return state;
}

template <typename T>
ag::Var<T> Denoiser<T>::inject(const ag::Var<T>& bottleneck,
                               const FusedFeature<T>& feature) const {
  if (feature.f.shape() != bottleneck.shape()) {
    throw ShapeError("conditional feature " + to_string(feature.f.shape()) +
                     " does not match bottleneck " + to_string(bottleneck.shape()));
  }
  if (!config_.use_iam) return bottleneck;
  const auto d = TokenizedFeature<T>::from_map(bottleneck);
  const auto f = TokenizedFeature<T>::from_map(feature.f);
  const auto o = iam_forward(d, f, iam_, config_.iam_transpose).output.to_map();
  return config_.iam_residual ? ag::add(bottleneck, o) : o;
}

template <typename T>
DenoiserOutput<T> Denoiser<T>::decode(const ag::Var<T>& fused, const UNetState<T>& state) const {
  auto h = fused;
  for (int l = 4; l >= 0; --l) {
    h = ag::upsample_nearest2x(h);
    h = up_blocks_[l](ag::concat_channels(h, state.skips[l]), state.emb);
  }
  const auto out = out_conv_(ag::silu(out_norm_(h)));
  return {ag::slice_channels(out, 0, 1), ag::sigmoid(ag::slice_channels(out, 1, 1))};
}

template <typename T>
DenoiserOutput<T> Denoiser<T>::operator()(const ag::Var<T>& image, const ag::Var<T>& yt,
                                          const std::vector<int>& t,
                                          const FusedFeature<T>& feature) const {
  const auto state = encode(image, yt, t);
  return decode(inject(state.bottleneck, feature), state);
}

template Tensor<float> sinusoidal_embedding(const std::vector<int>&, int);
template Tensor<double> sinusoidal_embedding(const std::vector<int>&, int);
template class TimestepEmbedding<float>;
template class TimestepEmbedding<double>;
template class ResBlock<float>;
template class ResBlock<double>;
template class Denoiser<float>;
template class Denoiser<double>;

}  // namespace diffcod
