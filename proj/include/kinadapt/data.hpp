#pragma once

// Kinematics trials, channel schemas and preprocessing.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kinadapt/tensor.hpp"

namespace kinadapt {

enum class Manipulator { mtm_left, mtm_right, psm_left, psm_right };
enum class Quantity { cartesian_position, rotation_matrix, linear_velocity, angular_velocity, gripper_angle };

std::size_t quantity_dimension(Quantity q);

// One scalar channel, written `manipulator.quantity.index`
// (e.g. `PSM-L.cartesian-position.0`).
struct ChannelDescriptor {
  Manipulator manipulator = Manipulator::mtm_left;
  Quantity quantity = Quantity::cartesian_position;
  std::size_t index = 0;

  std::string to_string() const;
  static ChannelDescriptor parse(const std::string& text);
  friend bool operator==(const ChannelDescriptor&, const ChannelDescriptor&) = default;
};

struct ChannelSchema {
  std::vector<ChannelDescriptor> channels;

  std::size_t size() const { return channels.size(); }
  std::optional<std::size_t> index_of(const ChannelDescriptor& d) const;

  // 4 manipulators x (position 3, rotation 9, linear velocity 3, angular velocity 3, gripper 1).
  static ChannelSchema source76();
  // Channels shared by both domains: position and rotation of all 4 manipulators.
  static ChannelSchema common48();
  // The first `n` channels of source76().
  static ChannelSchema prefix(std::size_t n);
  static ChannelSchema load(const std::filesystem::path& path);
  // Built-in names `source76` / `common48`, otherwise a schema file path.
  static ChannelSchema resolve(const std::string& name_or_path);
  void save(const std::filesystem::path& path) const;

  friend bool operator==(const ChannelSchema&, const ChannelSchema&) = default;
};

enum class Group { unknown, assisted, non_assisted };

std::string group_name(Group g);  // "Assisted", "Non-assisted", ""
Group parse_group(const std::string& text);

inline constexpr std::size_t kNoviceClass = 0;
inline constexpr std::size_t kExpertClass = 1;
std::string label_name(std::size_t label);

struct Trial {
  std::string id;
  std::string subject;
  int session = 0;
  int repetition = 0;
  Group group = Group::unknown;
  std::optional<std::size_t> label;
  NdArray data;  // {channels, time}
  double sample_rate_hz = 30.0;

  std::size_t channels() const { return data.dim(0); }
  std::size_t length() const { return data.dim(1); }
};

struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> std;
};

struct Dataset {
  std::vector<Trial> trials;
  ChannelSchema schema;
  std::optional<NormalizationStats> stats;

  // Shape conformance and unique ids.
  void validate() const;
  std::size_t size() const { return trials.size(); }
};

// Manifest columns: trial_id,file,subject,session,repetition,group,label.
// Trial files are headerless CSV, one timestep per row, columns in schema order.
Dataset load_trials(const std::filesystem::path& data_dir, const std::filesystem::path& manifest,
                    const ChannelSchema& schema, double sample_rate_hz = 30.0,
                    std::vector<std::string>* warnings = nullptr);
// Manifest rows only; trial data is left empty.
std::vector<Trial> load_manifest(const std::filesystem::path& manifest);
// Writes `<trial_id>.csv` files under data_dir plus the manifest. Labels are
// omitted when `include_labels` is false.
void save_trials(const Dataset& dataset, const std::filesystem::path& data_dir,
                 const std::filesystem::path& manifest, bool include_labels = true);

enum class DownsampleMode { decimate, average };

Trial downsample(const Trial& trial, std::size_t factor,
                 DownsampleMode mode = DownsampleMode::decimate);
Dataset downsample(const Dataset& dataset, std::size_t factor,
                   DownsampleMode mode = DownsampleMode::decimate);

// Pooled per-channel z-scoring. Without `stats` they are computed from the
// dataset (population std); channels with std < 1e-12 use std 1.
std::pair<Dataset, NormalizationStats> normalize(const Dataset& dataset,
                                                 const std::optional<NormalizationStats>& stats = {});
NormalizationStats compute_stats(const Dataset& dataset);

// Selects and reorders channels into `target` order.
Dataset align_channels(const Dataset& dataset, const ChannelSchema& target);

// Deterministic stratified split; returns (train, validation).
std::pair<Dataset, Dataset> split_validation(const Dataset& dataset, double fraction,
                                             std::uint64_t seed);

// Number of (manipulator, timestep) rotation blocks whose R^T R deviates
// from identity by more than `tolerance` (max abs entry).
std::size_t count_non_orthonormal(const Trial& trial, const ChannelSchema& schema,
                                  double tolerance = 1e-2);

}  // namespace kinadapt
