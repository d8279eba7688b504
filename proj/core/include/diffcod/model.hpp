#pragma once

#include <cstdint>
#include <memory>

#include "diffcod/conditioning.hpp"
#include "diffcod/denoiser.hpp"
#include "diffcod/keyvalue.hpp"

namespace diffcod {

struct ModelConfig {
  ConditioningConfig conditioning;
  DenoiserConfig denoiser;
  std::uint64_t init_seed = 7;
};

/// Architecture keys (encoder, encoder_widths, ff_width, cond_width,
/// unet_widths, use_iam, use_ff, iam_residual, iam_transpose, seed).
KeyValues to_key_values(const ModelConfig& config);
/// Reads the architecture keys present in `kv`, leaving others at defaults.
ModelConfig model_config_from(const KeyValues& kv);

/// Encoder, feature fusion, static-mask head and denoiser over one shared
/// parameter store, registered in that order.
template <typename T>
class DiffCodModel {
 public:
  explicit DiffCodModel(const ModelConfig& config);

  DiffCodModel(const DiffCodModel&) = delete;
  DiffCodModel& operator=(const DiffCodModel&) = delete;

  /// Backbone + fusion. Every call is counted.
  FusedFeature<T> condition(const ag::Var<T>& image) const;
  ag::Var<T> static_mask(const FusedFeature<T>& feature, int height, int width) const;
  DenoiserOutput<T> denoise(const ag::Var<T>& image, const ag::Var<T>& yt,
                            const std::vector<int>& t, const FusedFeature<T>& feature) const;

  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }
  const ModelConfig& config() const { return config_; }
  const Encoder<T>& encoder() const { return *encoder_; }
  const FeatureFusion<T>& fusion() const { return fusion_; }
  const Denoiser<T>& denoiser() const { return denoiser_; }

  long conditioning_evaluations() const { return conditioning_calls_; }
  void reset_conditioning_counter() { conditioning_calls_ = 0; }

 private:
  ModelConfig config_;
  nn::ParameterStore<T> store_;
  std::unique_ptr<Encoder<T>> encoder_;
  FeatureFusion<T> fusion_;
  StaticMaskHead<T> static_head_;
  Denoiser<T> denoiser_;
  mutable long conditioning_calls_ = 0;
};

}  // namespace diffcod
