#include "kinadapt/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "kinadapt/csv.hpp"
#include "kinadapt/rng.hpp"

namespace kinadapt {

namespace {

constexpr Manipulator kManipulators[] = {Manipulator::mtm_left, Manipulator::mtm_right,
                                         Manipulator::psm_left, Manipulator::psm_right};
constexpr Quantity kQuantities[] = {Quantity::cartesian_position, Quantity::rotation_matrix,
                                    Quantity::linear_velocity, Quantity::angular_velocity,
                                    Quantity::gripper_angle};

const char* manipulator_name(Manipulator m) {
  switch (m) {
    case Manipulator::mtm_left: return "MTM-L";
    case Manipulator::mtm_right: return "MTM-R";
    case Manipulator::psm_left: return "PSM-L";
    case Manipulator::psm_right: return "PSM-R";
  }
  return "?";
}

const char* quantity_name(Quantity q) {
  switch (q) {
    case Quantity::cartesian_position: return "cartesian-position";
    case Quantity::rotation_matrix: return "rotation-matrix";
    case Quantity::linear_velocity: return "linear-velocity";
    case Quantity::angular_velocity: return "angular-velocity";
    case Quantity::gripper_angle: return "gripper-angle";
  }
  return "?";
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
  return s;
}

// Transposes row-per-timestep values into {channels, time}.
NdArray to_channels_by_time(const std::vector<double>& rows, std::size_t time, std::size_t channels) {
  std::vector<double> out(rows.size());
  for (std::size_t t = 0; t < time; ++t)
    for (std::size_t c = 0; c < channels; ++c) out[c * time + t] = rows[t * channels + c];
  return NdArray(Shape{channels, time}, std::move(out));
}

}  // namespace

std::size_t quantity_dimension(Quantity q) {
  switch (q) {
    case Quantity::cartesian_position: return 3;
    case Quantity::rotation_matrix: return 9;
    case Quantity::linear_velocity: return 3;
    case Quantity::angular_velocity: return 3;
    case Quantity::gripper_angle: return 1;
  }
  return 0;
}

std::string ChannelDescriptor::to_string() const {
  return std::string(manipulator_name(manipulator)) + "." + quantity_name(quantity) + "." +
         std::to_string(index);
}

ChannelDescriptor ChannelDescriptor::parse(const std::string& text) {
  const auto parts = csv::split(text, '.');
  if (parts.size() != 3) throw DataError("schema: malformed descriptor '" + text + "'");
  ChannelDescriptor d;
  bool found = false;
  for (auto m : kManipulators) {
    if (parts[0] == manipulator_name(m)) {
      d.manipulator = m;
      found = true;
    }
  }
  if (!found) throw DataError("schema: unknown manipulator in '" + text + "'");
  found = false;
  for (auto q : kQuantities) {
    if (parts[1] == quantity_name(q)) {
      d.quantity = q;
      found = true;
    }
  }
  if (!found) throw DataError("schema: unknown quantity in '" + text + "'");
  const auto idx = csv::parse_int(parts[2], "schema descriptor '" + text + "'");
  if (idx < 0 || static_cast<std::size_t>(idx) >= quantity_dimension(d.quantity)) {
    throw DataError("schema: component index out of range in '" + text + "'");
  }
  d.index = static_cast<std::size_t>(idx);
  return d;
}

std::optional<std::size_t> ChannelSchema::index_of(const ChannelDescriptor& d) const {
  auto it = std::find(channels.begin(), channels.end(), d);
  if (it == channels.end()) return std::nullopt;
  return static_cast<std::size_t>(it - channels.begin());
}

ChannelSchema ChannelSchema::source76() {
  ChannelSchema s;
  for (auto m : kManipulators)
    for (auto q : kQuantities)
      for (std::size_t i = 0; i < quantity_dimension(q); ++i) s.channels.push_back({m, q, i});
  return s;
}

ChannelSchema ChannelSchema::common48() {
  ChannelSchema s;
  for (auto m : kManipulators)
    for (auto q : {Quantity::cartesian_position, Quantity::rotation_matrix})
      for (std::size_t i = 0; i < quantity_dimension(q); ++i) s.channels.push_back({m, q, i});
  return s;
}

ChannelSchema ChannelSchema::prefix(std::size_t n) {
  auto full = source76();
  if (n == 0 || n > full.size()) {
    throw ConfigError("schema: channel count must be in [1, 76], got " + std::to_string(n));
  }
  full.channels.resize(n);
  return full;
}

ChannelSchema ChannelSchema::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("missing file: " + path.string());
  ChannelSchema s;
  std::string line;
  while (std::getline(in, line)) {
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    s.channels.push_back(ChannelDescriptor::parse(std::string(t)));
  }
  if (s.channels.empty()) throw DataError("schema: no descriptors in " + path.string());
  std::set<std::string> seen;
  for (const auto& d : s.channels) {
    if (!seen.insert(d.to_string()).second) {
      throw DataError("schema: duplicate descriptor " + d.to_string() + " in " + path.string());
    }
  }
  return s;
}

ChannelSchema ChannelSchema::resolve(const std::string& name_or_path) {
  if (name_or_path == "source76") return source76();
  if (name_or_path == "common48") return common48();
  return load(name_or_path);
}

void ChannelSchema::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write schema file " + path.string());
  for (const auto& d : channels) out << d.to_string() << '\n';
}

std::string group_name(Group g) {
  switch (g) {
    case Group::assisted: return "Assisted";
    case Group::non_assisted: return "Non-assisted";
    case Group::unknown: return "";
  }
  return "";
}

Group parse_group(const std::string& text) {
  const auto t = lower(std::string(csv::trim(text)));
  if (t.empty() || t == "unknown") return Group::unknown;
  if (t == "assisted") return Group::assisted;
  if (t == "non-assisted" || t == "nonassisted" || t == "non_assisted") return Group::non_assisted;
  throw DataError("unknown group '" + text + "'");
}

std::string label_name(std::size_t label) {
  if (label == kNoviceClass) return "novice";
  if (label == kExpertClass) return "expert";
  return std::to_string(label);
}

void Dataset::validate() const {
  std::set<std::string> ids;
  for (const auto& t : trials) {
    if (!ids.insert(t.id).second) throw DataError("dataset: duplicate trial id '" + t.id + "'");
    if (t.data.rank() != 2 || t.data.dim(0) != schema.size()) {
      throw DataError("dataset: trial '" + t.id + "' has shape " + to_string(t.data.shape()) +
                      " but schema has " + std::to_string(schema.size()) + " channels");
    }
    if (t.data.dim(1) == 0) throw DataError("dataset: trial '" + t.id + "' is empty");
  }
}

// ---------------------------------------------------------------------------
// I/O

namespace {

struct ManifestEntry {
  Trial meta;
  std::string file;
  std::string where;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& manifest) {
  if (!std::filesystem::exists(manifest)) throw DataError("missing file: " + manifest.string());
  const auto rows = csv::read_rows(manifest);
  if (rows.empty()) throw DataError(manifest.string() + ": empty manifest");
  const std::vector<std::string> header = {"trial_id", "file", "subject", "session",
                                           "repetition", "group", "label"};
  if (rows.front().cells != header) {
    throw DataError(manifest.string() + ":" + std::to_string(rows.front().line) +
                    ": expected header trial_id,file,subject,session,repetition,group,label");
  }
  std::vector<ManifestEntry> out;
  std::set<std::string> ids;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    const std::string where = manifest.string() + ":" + std::to_string(row.line);
    auto cells = row.cells;
    if (cells.size() == 6) cells.emplace_back();  // trailing empty label
    if (cells.size() != 7) {
      throw DataError(where + ": expected 7 columns, got " + std::to_string(row.cells.size()));
    }
    Trial t;
    t.id = cells[0];
    if (t.id.empty()) throw DataError(where + ": empty trial_id");
    if (!ids.insert(t.id).second) throw DataError(where + ": duplicate trial id '" + t.id + "'");
    t.subject = cells[2];
    t.session = static_cast<int>(csv::parse_int(cells[3], where + " session"));
    t.repetition = static_cast<int>(csv::parse_int(cells[4], where + " repetition"));
    t.group = parse_group(cells[5]);
    const auto label = lower(cells[6]);
    if (label == "novice") {
      t.label = kNoviceClass;
    } else if (label == "expert") {
      t.label = kExpertClass;
    } else if (!label.empty()) {
      const auto v = csv::parse_int(label, where + " label");
      if (v < 0) throw DataError(where + ": negative label");
      t.label = static_cast<std::size_t>(v);
    }
    out.push_back({std::move(t), cells[1], where});
  }
  return out;
}

}  // namespace

std::vector<Trial> load_manifest(const std::filesystem::path& manifest) {
  std::vector<Trial> out;
  for (auto& e : read_manifest(manifest)) out.push_back(std::move(e.meta));
  return out;
}

Dataset load_trials(const std::filesystem::path& data_dir, const std::filesystem::path& manifest,
                    const ChannelSchema& schema, double sample_rate_hz,
                    std::vector<std::string>* warnings) {
  Dataset ds;
  ds.schema = schema;
  for (auto& entry : read_manifest(manifest)) {
    Trial t = std::move(entry.meta);
    const std::string& where = entry.where;
    t.sample_rate_hz = sample_rate_hz;

    const auto file = data_dir / entry.file;
    if (!std::filesystem::exists(file)) {
      throw DataError(where + ": missing file " + file.string());
    }
    const auto data_rows = csv::read_rows(file);
    if (data_rows.empty()) throw DataError(file.string() + ": no timesteps");
    std::vector<double> values;
    values.reserve(data_rows.size() * schema.size());
    for (const auto& dr : data_rows) {
      const std::string fwhere = file.string() + ":" + std::to_string(dr.line);
      if (dr.cells.size() != schema.size()) {
        throw DataError(fwhere + ": column-count mismatch, got " + std::to_string(dr.cells.size()) +
                        " columns, schema has " + std::to_string(schema.size()));
      }
      for (const auto& cell : dr.cells) values.push_back(csv::parse_double(cell, fwhere));
    }
    t.data = to_channels_by_time(values, data_rows.size(), schema.size());
    if (warnings) {
      const auto bad = count_non_orthonormal(t, schema);
      if (bad > 0) {
        warnings->push_back(file.string() + ": " + std::to_string(bad) +
                            " rotation blocks deviate from orthonormality");
      }
    }
    ds.trials.push_back(std::move(t));
  }
  ds.validate();
  return ds;
}

void save_trials(const Dataset& dataset, const std::filesystem::path& data_dir,
                 const std::filesystem::path& manifest, bool include_labels) {
  std::filesystem::create_directories(data_dir);
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream m(manifest);
  if (!m) throw DataError("cannot write manifest " + manifest.string());
  m << "trial_id,file,subject,session,repetition,group,label\n";
  for (const auto& t : dataset.trials) {
    const std::string file = t.id + ".csv";
    std::ofstream out(data_dir / file);
    if (!out) throw DataError("cannot write trial file " + (data_dir / file).string());
    const std::size_t time = t.length();
    const std::size_t channels = t.channels();
    std::string line;
    for (std::size_t s = 0; s < time; ++s) {
      line.clear();
      for (std::size_t c = 0; c < channels; ++c) {
        if (c) line += ',';
        line += csv::format(t.data[c * time + s]);
      }
      line += '\n';
      out << line;
    }
    m << t.id << ',' << file << ',' << t.subject << ',' << t.session << ',' << t.repetition << ','
      << group_name(t.group) << ',';
    if (include_labels && t.label) m << label_name(*t.label);
    m << '\n';
  }
}

// ---------------------------------------------------------------------------
// Preprocessing

Trial downsample(const Trial& trial, std::size_t factor, DownsampleMode mode) {
  if (factor < 1) throw ConfigError("downsample: factor must be >= 1");
  const std::size_t time = trial.length();
  if (time < factor) {
    throw DataError("downsample: trial '" + trial.id + "' has " + std::to_string(time) +
                    " timesteps, shorter than factor " + std::to_string(factor));
  }
  Trial out = trial;
  out.sample_rate_hz = trial.sample_rate_hz / static_cast<double>(factor);
  if (factor == 1) return out;
  const std::size_t channels = trial.channels();
  const std::size_t new_time = (time + factor - 1) / factor;
  std::vector<double> values(channels * new_time);
  for (std::size_t c = 0; c < channels; ++c) {
    const double* row = trial.data.data() + c * time;
    for (std::size_t k = 0; k < new_time; ++k) {
      if (mode == DownsampleMode::decimate) {
        values[c * new_time + k] = row[k * factor];
      } else {
        const std::size_t end = std::min(time, (k + 1) * factor);
        double acc = 0.0;
        for (std::size_t s = k * factor; s < end; ++s) acc += row[s];
        values[c * new_time + k] = acc / static_cast<double>(end - k * factor);
      }
    }
  }
  out.data = NdArray(Shape{channels, new_time}, std::move(values));
  return out;
}

Dataset downsample(const Dataset& dataset, std::size_t factor, DownsampleMode mode) {
  Dataset out;
  out.schema = dataset.schema;
  out.trials.reserve(dataset.size());
  for (const auto& t : dataset.trials) out.trials.push_back(downsample(t, factor, mode));
  return out;
}

NormalizationStats compute_stats(const Dataset& dataset) {
  if (dataset.trials.empty()) throw DataError("normalize: empty dataset");
  const std::size_t channels = dataset.schema.size();
  NormalizationStats s;
  s.mean.assign(channels, 0.0);
  s.std.assign(channels, 0.0);
  std::size_t count = 0;
  for (const auto& t : dataset.trials) {
    const std::size_t time = t.length();
    count += time;
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < time; ++k) s.mean[c] += t.data[c * time + k];
  }
  for (auto& m : s.mean) m /= static_cast<double>(count);
  for (const auto& t : dataset.trials) {
    const std::size_t time = t.length();
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t k = 0; k < time; ++k) {
        const double d = t.data[c * time + k] - s.mean[c];
        s.std[c] += d * d;
      }
  }
  for (auto& v : s.std) {
    v = std::sqrt(v / static_cast<double>(count));
    if (v < 1e-12) v = 1.0;
  }
  return s;
}

std::pair<Dataset, NormalizationStats> normalize(const Dataset& dataset,
                                                 const std::optional<NormalizationStats>& stats) {
  if (dataset.trials.empty()) throw DataError("normalize: empty dataset");
  const NormalizationStats s = stats ? *stats : compute_stats(dataset);
  const std::size_t channels = dataset.schema.size();
  if (s.mean.size() != channels || s.std.size() != channels) {
    throw DataError("normalize: stats cover " + std::to_string(s.mean.size()) +
                    " channels, dataset has " + std::to_string(channels));
  }
  Dataset out;
  out.schema = dataset.schema;
  out.stats = s;
  out.trials.reserve(dataset.size());
  for (const auto& t : dataset.trials) {
    const std::size_t time = t.length();
    std::vector<double> values = t.data.to_vector();
    for (std::size_t c = 0; c < channels; ++c) {
      const double sd = s.std[c] < 1e-12 ? 1.0 : s.std[c];
      for (std::size_t k = 0; k < time; ++k) {
        auto& v = values[c * time + k];
        v = (v - s.mean[c]) / sd;
      }
    }
    Trial nt = t;
    nt.data = NdArray(t.data.shape(), std::move(values));
    out.trials.push_back(std::move(nt));
  }
  return {std::move(out), s};
}

Dataset align_channels(const Dataset& dataset, const ChannelSchema& target) {
  std::vector<std::size_t> columns;
  columns.reserve(target.size());
  for (const auto& d : target.channels) {
    const auto idx = dataset.schema.index_of(d);
    if (!idx) throw DataError("align_channels: descriptor " + d.to_string() + " absent from source schema");
    columns.push_back(*idx);
  }
  Dataset out;
  out.schema = target;
  if (dataset.stats) {
    NormalizationStats s;
    for (auto c : columns) {
      s.mean.push_back(dataset.stats->mean[c]);
      s.std.push_back(dataset.stats->std[c]);
    }
    out.stats = s;
  }
  out.trials.reserve(dataset.size());
  for (const auto& t : dataset.trials) {
    const std::size_t time = t.length();
    std::vector<double> values(columns.size() * time);
    for (std::size_t k = 0; k < columns.size(); ++k) {
      std::copy_n(t.data.data() + columns[k] * time, time, values.data() + k * time);
    }
    Trial nt = t;
    nt.data = NdArray(Shape{columns.size(), time}, std::move(values));
    out.trials.push_back(std::move(nt));
  }
  return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& dataset, double fraction,
                                             std::uint64_t seed) {
  if (!(fraction >= 0.0 && fraction < 1.0)) {
    throw ConfigError("validation fraction must be in [0, 1)");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    by_label[dataset.trials[i].label.value_or(SIZE_MAX)].push_back(i);
  }
  Rng rng(Rng::derive(seed, "validation-split"));
  std::vector<bool> is_val(dataset.size(), false);
  for (auto& [label, idx] : by_label) {
    rng.shuffle(std::span<std::size_t>(idx));
    auto n_val = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(idx.size()) + 0.5));
    if (fraction > 0.0 && n_val == 0 && idx.size() > 1) n_val = 1;
    if (n_val >= idx.size()) n_val = idx.size() - 1;
    for (std::size_t k = 0; k < n_val; ++k) is_val[idx[k]] = true;
  }
  Dataset train;
  Dataset val;
  train.schema = val.schema = dataset.schema;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    (is_val[i] ? val : train).trials.push_back(dataset.trials[i]);
  }
  return {std::move(train), std::move(val)};
}

std::size_t count_non_orthonormal(const Trial& trial, const ChannelSchema& schema, double tolerance) {
  std::size_t bad = 0;
  const std::size_t time = trial.length();
  for (auto m : kManipulators) {
    std::size_t cols[9];
    bool complete = true;
    for (std::size_t i = 0; i < 9; ++i) {
      const auto idx = schema.index_of({m, Quantity::rotation_matrix, i});
      if (!idx) {
        complete = false;
        break;
      }
      cols[i] = *idx;
    }
    if (!complete) continue;
    for (std::size_t k = 0; k < time; ++k) {
      double r[9];
      for (std::size_t i = 0; i < 9; ++i) r[i] = trial.data[cols[i] * time + k];
      double worst = 0.0;
      for (std::size_t a = 0; a < 3; ++a)
        for (std::size_t b = 0; b < 3; ++b) {
          double dot = 0.0;
          for (std::size_t i = 0; i < 3; ++i) dot += r[i * 3 + a] * r[i * 3 + b];
          worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
        }
      if (worst > tolerance) ++bad;
    }
  }
  return bad;
}

}  // namespace kinadapt
