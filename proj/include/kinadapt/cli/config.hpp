#pragma once

// Flat `key = value` run configuration. Lines starting with '#' are
// comments. Every key may be overridden from the environment as
// KINADAPT_<KEY>, upper-cased with '.' replaced by '_'
// (e.g. mc.passes -> KINADAPT_MC_PASSES).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "kinadapt/data.hpp"
#include "kinadapt/mc_dropout.hpp"
#include "kinadapt/model.hpp"
#include "kinadapt/self_training.hpp"

namespace kinadapt::cli {

inline constexpr const char* kEnvPrefix = "KINADAPT_";

struct RunConfig {
  std::filesystem::path source_dir;
  std::filesystem::path source_manifest;
  std::string source_schema = "common48";
  std::filesystem::path target_dir;
  std::filesystem::path target_manifest;
  std::string target_schema = "common48";
  std::string model_schema = "common48";
  double sample_rate_hz = 30.0;
  std::size_t downsample_factor = 30;
  DownsampleMode downsample_mode = DownsampleMode::decimate;
  double validation_fraction = 0.2;
  std::filesystem::path output_dir = "out";
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  ModelConfig model;
  SelfTrainConfig train;  // train.mc, train.seed and train.threads mirror the fields above
  LossWeights loss;

  void validate() const;
  // Ordered (key, value) pairs; the inverse of from_key_values.
  std::vector<std::pair<std::string, std::string>> to_key_values() const;
  // Missing keys keep their defaults; unknown keys raise ConfigError.
  // Relative paths are resolved against `base_dir`.
  static RunConfig from_key_values(const std::map<std::string, std::string>& kv,
                                   const std::filesystem::path& base_dir = {});
};

// Parses a `key = value` file. Duplicate keys and malformed lines raise ConfigError.
std::map<std::string, std::string> read_key_value_file(const std::filesystem::path& path);

std::string env_name(const std::string& key);

// File values, then environment overrides for every known key.
RunConfig load_run_config(const std::filesystem::path& path);

std::vector<std::string> run_config_keys();

}  // namespace kinadapt::cli
