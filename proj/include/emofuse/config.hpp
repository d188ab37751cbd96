#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "json.hpp"

#include "emofuse/losses.hpp"
#include "emofuse/model.hpp"
#include "emofuse/training.hpp"

namespace emofuse {

struct DatasetConfig {
  /// Directory holding train.jsonl, val.jsonl and test.jsonl.
  std::filesystem::path dir = "data";
  // Used by `generate`.
  std::int64_t n = 200;
  double scene_signal = 0.5;

  std::filesystem::path manifest(Split split) const { return dir / (std::string(split_name(split)) + ".jsonl"); }
};

struct RunConfig {
  std::uint64_t seed = 0;  // root of every random stream
  DatasetConfig dataset;
  ModelConfig model;
  LossWeights losses;
  TrainConfig training;
  std::optional<std::filesystem::path> output_dir;

  /// Every nested invariant, with errors naming the field path.
  void validate() const;
};

/// Parses a config document. Unknown keys and wrongly typed values raise
/// ConfigError naming the field path. Relative paths resolve against
/// `base_dir`. Missing fields keep their defaults.
RunConfig parse_run_config(const nlohmann::json& doc, const std::filesystem::path& base_dir = {});
RunConfig load_run_config(const std::filesystem::path& path);

/// Complete snapshot of every field, readable by parse_run_config().
nlohmann::json to_json(const RunConfig& cfg);

/// Output directory precedence: explicit flag, then the config, then the
/// EMOFUSE_OUT environment variable, then "out".
std::filesystem::path resolve_output_dir(const std::optional<std::filesystem::path>& flag, const RunConfig& cfg);

/// Creates `dir` if needed and checks that a file can be written in it.
void ensure_writable_dir(const std::filesystem::path& dir);

}  // namespace emofuse
