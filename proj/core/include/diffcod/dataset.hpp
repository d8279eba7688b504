#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffcod/tensor.hpp"

namespace diffcod {

/// `root/{Imgs,GT}` layout with shared file stems.
struct DatasetSpec {
  std::filesystem::path root;
  std::string image_dir = "Imgs";
  std::string gt_dir = "GT";
  std::vector<std::string> stems;
  std::vector<std::string> extensions{".png", ".jpg", ".jpeg"};

  /// Stems from `manifest` (relative to root unless absolute) or, when empty,
  /// every file in the GT directory. Checks each stem resolves.
  static DatasetSpec open(const std::filesystem::path& root,
                          const std::filesystem::path& manifest = {});

  /// Exactly one file per stem; IoError naming the stem otherwise.
  std::filesystem::path image_path(const std::string& stem) const;
  std::filesystem::path gt_path(const std::string& stem) const;
};

struct ImageMaskPair {
  Tensor<float> image;  // [3, H, W] in [0, 1]
  Tensor<float> mask;   // [1, H, W] in {0, 1}
};

ImageMaskPair load_pair(const DatasetSpec& spec, const std::string& stem);

/// Newline-delimited stems; blank lines ignored.
std::vector<std::string> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<std::string>& stems);

}  // namespace diffcod
