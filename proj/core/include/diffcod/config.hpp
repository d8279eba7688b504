#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "diffcod/keyvalue.hpp"
#include "diffcod/metrics.hpp"
#include "diffcod/sampler.hpp"
#include "diffcod/synth.hpp"
#include "diffcod/trainer.hpp"

namespace diffcod {

enum class KeyKind { integer, real, flag, text, int_list };

struct KeySpec {
  std::string name;
  KeyKind kind;
  std::string help;
};

/// Every key accepted in a run configuration file or as a `--key` flag.
const std::vector<KeySpec>& config_schema();

/// Maps accepted shorthands (`lr`, `size`) to their schema names; other
/// keys pass through unchanged.
std::string canonical_key(const std::string& key);

struct SampleSettings {
  int steps = 0;  // 0: full schedule
  int ensemble = 1;
  EnsembleMode ensemble_mode = EnsembleMode::mean;
  std::vector<int> trace;
};

/// Union of training, sampling, dataset, synthesis and metric options.
struct RunConfig {
  TrainConfig train;
  SampleSettings sample;
  SynthConfig synth;
  MetricOptions metrics;

  std::filesystem::path data;
  std::filesystem::path manifest;
  std::filesystem::path out;
  std::filesystem::path checkpoint;
  std::filesystem::path resume;
  std::filesystem::path loss_log;
  std::filesystem::path images;
  std::filesystem::path pred;
  std::filesystem::path gt;
  std::filesystem::path report;
  std::filesystem::path json;
  long log_every = 100;

  /// Canonical keys that were set explicitly (file or flag).
  KeyValues explicit_values;

  /// Throws ConfigError naming the first listed key that was not set.
  void require(const std::vector<std::string>& keys) const;
};

/// Validates and coerces `values` against the schema. Unknown keys, type
/// mismatches and out-of-range values raise ConfigError naming the key.
RunConfig build_config(const KeyValues& values);

/// Reads `file` (may be empty for none), overlays `overrides` (flags win)
/// and builds the configuration.
RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides);

}  // namespace diffcod
