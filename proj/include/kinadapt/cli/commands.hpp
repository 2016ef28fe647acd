#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "kinadapt/cli/config.hpp"
#include "kinadapt/data.hpp"
#include "kinadapt/mc_dropout.hpp"
#include "kinadapt/model.hpp"

namespace kinadapt::cli {

// Exit codes.
inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;

// Channel alignment to `model_schema`, then downsampling.
Dataset prepare_domain(const Dataset& raw, const ChannelSchema& model_schema, std::size_t factor,
                       DownsampleMode mode);

struct SourceSplit {
  Dataset train;
  Dataset validation;
  NormalizationStats stats;  // from the training split
};

// Stratified split of the prepared source domain; both parts normalized with
// the training-split statistics.
SourceSplit split_and_normalize_source(const Dataset& prepared, double validation_fraction,
                                       std::uint64_t seed);

SourceSplit load_source(const RunConfig& config);
// Target trials, self-normalized.
Dataset load_target(const RunConfig& config);

// trial_id,mean_prob_0..K-1,var_0..K-1,entropy
void write_assessment_csv(std::span<const RankedPrediction> rows, std::size_t num_classes,
                          std::ostream& out);
std::vector<RankedPrediction> read_assessment_csv(const std::filesystem::path& path);

// Writes `key = value` lines: command, version, then the configuration.
void write_run_manifest(const std::filesystem::path& path, const std::string& command,
                        const std::vector<std::pair<std::string, std::string>>& entries);

std::string version_string();

int run(int argc, char** argv);

}  // namespace kinadapt::cli
