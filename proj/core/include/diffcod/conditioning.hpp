#pragma once

#include <array>
#include <memory>
#include <random>
#include <string>

#include "diffcod/nn.hpp"

namespace diffcod {

/// Backbone features at strides 8, 16 and 32 of the input image.
template <typename T>
struct FeaturePyramid {
  ag::Var<T> x1;
  ag::Var<T> x2;
  ag::Var<T> x3;
};

/// Conditional feature F at stride 32 with `cond_width` channels.
template <typename T>
struct FusedFeature {
  ag::Var<T> f;
};

struct ConditioningConfig {
  std::string encoder = "toy";
  /// Channel widths of the toy encoder's stem and its three pyramid stages.
  std::array<int, 4> encoder_widths{16, 32, 48, 64};
  int branch_width = 32;
  int cond_width = 64;
  /// When false, F is a 1x1 projection of the stride-32 feature alone.
  bool use_ff = true;
};

/// Pluggable backbone. Implementations register their parameters in the
/// store passed at construction.
template <typename T>
class Encoder {
 public:
  virtual ~Encoder() = default;
  virtual FeaturePyramid<T> extract(const ag::Var<T>& image) const = 0;
  /// Channel counts of (x1, x2, x3).
  virtual std::array<int, 3> channels() const = 0;
  virtual std::string name() const = 0;
};

/// Small strided convolutional pyramid trained from scratch.
template <typename T>
class ToyEncoder final : public Encoder<T> {
 public:
  ToyEncoder(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
             const std::array<int, 4>& widths);

  FeaturePyramid<T> extract(const ag::Var<T>& image) const override;
  std::array<int, 3> channels() const override { return {widths_[1], widths_[2], widths_[3]}; }
  std::string name() const override { return "toy"; }

 private:
  std::array<int, 4> widths_;
  // Each stage: a stride-2 conv followed by a stride-1 conv. The stem has two
  // stride-2 convs and reaches stride 4.
  std::array<nn::Conv2d<T>, 8> convs_;
};

/// Throws ConfigError for unknown encoder names.
template <typename T>
std::unique_ptr<Encoder<T>> make_encoder(const ConditioningConfig& config,
                                         nn::ParameterStore<T>& store, std::mt19937_64& rng,
                                         const std::string& prefix);

/// Checks that H and W are divisible by 32 and runs the encoder.
template <typename T>
FeaturePyramid<T> extract_features(const ag::Var<T>& image, const Encoder<T>& encoder);

/// Three-branch aggregation of the pyramid into F.
template <typename T>
class FeatureFusion {
 public:
  FeatureFusion() = default;
  FeatureFusion(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                const std::array<int, 3>& in_channels, const ConditioningConfig& config);

  FusedFeature<T> operator()(const FeaturePyramid<T>& pyramid) const;

 private:
  bool use_ff_ = true;
  // Branch i uses convs (2i, 2i + 1).
  std::array<nn::Conv2d<T>, 6> branch_;
  nn::Conv2d<T> reduce_;
};

/// 1x1 conv to one channel, bilinear upsampling, logistic squashing.
template <typename T>
class StaticMaskHead {
 public:
  StaticMaskHead() = default;
  StaticMaskHead(nn::ParameterStore<T>& store, std::mt19937_64& rng, const std::string& prefix,
                 int cond_width);

  /// Probability-space mask [N, 1, height, width].
  ag::Var<T> operator()(const FusedFeature<T>& feature, int height, int width) const;

 private:
  nn::Conv2d<T> proj_;
};

}  // namespace diffcod
