#pragma once

#include <random>

#include "diffcod/dataset.hpp"

namespace diffcod {

struct AugmentConfig {
  bool flip = true;
  bool crop = true;
  bool color_jitter = true;
  /// Crop side lengths are drawn from [crop_min_scale, 1] of the source.
  double crop_min_scale = 0.8;
  /// Brightness, contrast and saturation factors are drawn from [1 - j, 1 + j].
  double jitter = 0.2;
  int image_size = 64;
};

/// Bilinear resize of [C, H, W] with half-pixel centers.
Tensor<float> resize_bilinear(const Tensor<float>& chw, int height, int width);
/// Nearest-neighbour resize of [C, H, W]; preserves the set of values.
Tensor<float> resize_nearest(const Tensor<float>& chw, int height, int width);

/// Same geometric transform on image and mask, jitter on the image only,
/// then resize to image_size x image_size.
ImageMaskPair augment(const ImageMaskPair& pair, std::mt19937_64& rng,
                      const AugmentConfig& config);

}  // namespace diffcod
