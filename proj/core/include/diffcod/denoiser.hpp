#pragma once

#include <array>
#include <random>
#include <string>
#include <vector>

#include "diffcod/conditioning.hpp"
#include "diffcod/iam.hpp"
#include "diffcod/nn.hpp"

namespace diffcod {

/// Predicted noise and the variance-interpolation fraction, each [N, 1, H, W].
/// `v` is already squashed to [0, 1].
template <typename T>
struct DenoiserOutput {
  ag::Var<T> eps;
  ag::Var<T> v;
};

struct DenoiserConfig {
  /// Channel widths of the five resolution levels (strides 1 to 16).
  std::array<int, 5> widths{32, 64, 96, 128, 160};
  /// Bottleneck width at stride 32; must equal the conditioning width.
  int bottleneck_width = 64;
  bool use_iam = true;
  /// D + O when true, O alone when false.
  bool iam_residual = true;
  bool iam_transpose = false;
  int groups = 8;
};

/// Fixed sinusoidal features of t, [B, width] with sin in the first half.
template <typename T>
Tensor<T> sinusoidal_embedding(const std::vector<int>& t, int width);

template <typename T>
class TimestepEmbedding {
 public:
  TimestepEmbedding() = default;
  TimestepEmbedding(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                    int base_width);

  /// [B, 4 * base_width].
  ag::Var<T> operator()(const std::vector<int>& t) const;
  int base_width() const { return base_width_; }
  int out_width() const { return 4 * base_width_; }

 private:
  int base_width_ = 0;
  nn::Linear<T> fc1_;
  nn::Linear<T> fc2_;
};

/// GN -> SiLU -> conv3x3 -> + time -> GN -> SiLU -> conv3x3, plus a skip.
template <typename T>
class ResBlock {
 public:
  ResBlock() = default;
  ResBlock(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
           int in_channels, int out_channels, int emb_width, int groups);

  /// `emb` is SiLU of the timestep embedding, [B, emb_width].
  ag::Var<T> operator()(const ag::Var<T>& x, const ag::Var<T>& emb) const;

 private:
  nn::GroupNorm<T> norm1_;
  nn::Conv2d<T> conv1_;
  nn::Linear<T> time_;
  nn::GroupNorm<T> norm2_;
  nn::Conv2d<T> conv2_;
  nn::Conv2d<T> skip_;
  bool has_skip_ = false;
};

/// Encoder-half activations kept for the decoder half.
template <typename T>
struct UNetState {
  ag::Var<T> bottleneck;         // D, [B, C, H/32, W/32]
  std::vector<ag::Var<T>> skips;  // one per level, strides 1..16
  ag::Var<T> emb;                // SiLU(timestep embedding)
};

template <typename T>
class Denoiser {
 public:
  Denoiser() = default;
  Denoiser(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
           const DenoiserConfig& config);

  /// UNet_1: concat(image, y_t) down to the stride-32 bottleneck.
  UNetState<T> encode(const ag::Var<T>& image, const ag::Var<T>& yt,
                      const std::vector<int>& t) const;
  /// IAM fusion of the bottleneck with F (identity when disabled).
  ag::Var<T> inject(const ag::Var<T>& bottleneck, const FusedFeature<T>& feature) const;
  /// UNet_2: decoder with skips, 2-channel head split into (eps, v).
  DenoiserOutput<T> decode(const ag::Var<T>& fused, const UNetState<T>& state) const;

  DenoiserOutput<T> operator()(const ag::Var<T>& image, const ag::Var<T>& yt,
                               const std::vector<int>& t, const FusedFeature<T>& feature) const;

  const DenoiserConfig& config() const { return config_; }
  const IAMParameters<T>& iam() const { return iam_; }

 private:
  DenoiserConfig config_;
  TimestepEmbedding<T> time_;
  nn::Conv2d<T> in_conv_;
  std::array<ResBlock<T>, 5> down_blocks_;
  std::array<nn::Conv2d<T>, 5> downsample_;
  ResBlock<T> mid_;
  IAMParameters<T> iam_;
  std::array<ResBlock<T>, 5> up_blocks_;
  nn::GroupNorm<T> out_norm_;
  nn::Conv2d<T> out_conv_;
};

}  // namespace diffcod
