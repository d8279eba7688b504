#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "diffcod/tensor.hpp"

namespace diffcod {

/// 8-bit raster, row-major with interleaved channels (1 = gray, 3 = RGB).
struct Raster8 {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<std::uint8_t> pixels;
};

/// Decodes PNG or JPEG (detected from the file signature) to gray or RGB.
Raster8 read_raster(const std::filesystem::path& path, int channels);
/// Writes an 8-bit PNG; gray or RGB according to `raster.channels`.
void write_png(const std::filesystem::path& path, const Raster8& raster);

/// RGB image as [3, H, W] floats in [0, 1].
Tensor<float> read_image(const std::filesystem::path& path);
/// Ground-truth mask as [1, H, W] in {0, 1}, binarized at 128.
Tensor<float> read_mask(const std::filesystem::path& path);
/// Grayscale prediction as [1, H, W] in [0, 1] (value / 255).
Tensor<float> read_gray(const std::filesystem::path& path);

/// [3, H, W] or [1, H, W] floats in [0, 1] to 8-bit PNG (rounded, clamped).
void write_image(const std::filesystem::path& path, const Tensor<float>& chw);

Raster8 to_raster(const Tensor<float>& chw);
Tensor<float> from_raster(const Raster8& raster);

}  // namespace diffcod
