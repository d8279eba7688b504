#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "diffcod/keyvalue.hpp"
#include "diffcod/tensor.hpp"

namespace diffcod {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Parameters, optimizer moments (as `adam_m/<name>` and `adam_v/<name>`),
/// the step counter and a key=value snapshot of the run configuration.
struct Checkpoint {
  std::uint32_t version = kCheckpointFormatVersion;
  long step = 0;
  KeyValues config;
  std::vector<std::pair<std::string, Tensor<float>>> tensors;

  /// nullptr when absent.
  const Tensor<float>* find(const std::string& name) const;
};

/// Binary container: "DIFFCOD\0", u32 version, u64 step, config text, then
/// named float tensors. Written through a temporary file and renamed.
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace diffcod
