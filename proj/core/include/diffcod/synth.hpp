#pragma once

#include <cstdint>
#include <filesystem>

#include "diffcod/dataset.hpp"

namespace diffcod {

struct SynthConfig {
  int count = 400;
  int image_size = 64;
  int octaves = 4;
  /// Lattice cells across the image at the coarsest octave.
  double frequency = 4.0;
  int blob_min = 1;
  int blob_max = 3;
  /// Ellipse semi-axes as fractions of the image size.
  double radius_min = 0.10;
  double radius_max = 0.22;
  /// Intensity shift of the object texture relative to the background.
  double contrast = 0.35;
  std::uint64_t seed = 7;
  double test_fraction = 0.1;

  /// Throws ConfigError on out-of-range values.
  void validate() const;
};

/// Multi-octave value noise in [0, 1], [size, size] row-major.
std::vector<double> value_noise(int size, int octaves, double frequency, std::uint64_t seed);

/// One camouflaged pair, a pure function of (config, index).
ImageMaskPair generate_pair(const SynthConfig& config, int index);

/// Writes Imgs/, GT/, train.txt and test.txt under `out_root`.
DatasetSpec generate_synthetic(const SynthConfig& config, const std::filesystem::path& out_root);

}  // namespace diffcod
