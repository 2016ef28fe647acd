#include "kinadapt/cli/config.hpp"

#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>

#include "kinadapt/csv.hpp"
#include "kinadapt/error.hpp"

namespace kinadapt::cli {

namespace {

namespace fs = std::filesystem;

std::size_t to_count(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto t = csv::trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto t = csv::trim(v);
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (ec != std::errc() || p != t.data() + t.size() || t.empty())
    throw ConfigError("config: '" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    return csv::parse_double(v, key);
  } catch (const DataError&) {
    throw ConfigError("config: '" + key + "' expects a finite number, got '" + v + "'");
  }
}

std::string fmt(double v) { return csv::format(v); }

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const fs::path&)> set;
};

fs::path resolve(const fs::path& base, const std::string& v) {
  if (v.empty()) return {};
  fs::path p(v);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p;
}

#define KA_COUNT(name, member)                                                             \
  Field {                                                                                   \
    name, [](const RunConfig& c) { return std::to_string(c.member); },                     \
        [](RunConfig& c, const std::string& v, const fs::path&) { c.member = to_count(name, v); } \
  }
#define KA_REAL(name, member)                                                             \
  Field {                                                                                  \
    name, [](const RunConfig& c) { return fmt(c.member); },                               \
        [](RunConfig& c, const std::string& v, const fs::path&) { c.member = to_real(name, v); } \
  }
#define KA_PATH(name, member)                                                                     \
  Field {                                                                                          \
    name, [](const RunConfig& c) { return c.member.string(); },                                   \
        [](RunConfig& c, const std::string& v, const fs::path& base) { c.member = resolve(base, v); } \
  }
#define KA_TEXT(name, member)                                                             \
  Field {                                                                                  \
    name, [](const RunConfig& c) { return c.member; },                                    \
        [](RunConfig& c, const std::string& v, const fs::path&) { c.member = v; }         \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      KA_PATH("source.data_dir", source_dir),
      KA_PATH("source.manifest", source_manifest),
      KA_TEXT("source.schema", source_schema),
      KA_PATH("target.data_dir", target_dir),
      KA_PATH("target.manifest", target_manifest),
      KA_TEXT("target.schema", target_schema),
      KA_TEXT("model.schema", model_schema),
      KA_REAL("sample_rate_hz", sample_rate_hz),
      KA_COUNT("downsample.factor", downsample_factor),
      Field{"downsample.mode",
            [](const RunConfig& c) {
              return std::string(c.downsample_mode == DownsampleMode::average ? "average" : "decimate");
            },
            [](RunConfig& c, const std::string& v, const fs::path&) {
              if (v == "decimate") c.downsample_mode = DownsampleMode::decimate;
              else if (v == "average") c.downsample_mode = DownsampleMode::average;
              else throw ConfigError("config: downsample.mode must be decimate or average, got '" + v + "'");
            }},
      KA_REAL("validation.fraction", validation_fraction),
      KA_PATH("output_dir", output_dir),
      Field{"seed", [](const RunConfig& c) { return std::to_string(c.seed); },
            [](RunConfig& c, const std::string& v, const fs::path&) { c.seed = to_u64("seed", v); }},
      KA_COUNT("threads", threads),
      KA_COUNT("model.in_channels", model.in_channels),
      KA_COUNT("model.conv_filters.0", model.conv_filters[0]),
      KA_COUNT("model.conv_filters.1", model.conv_filters[1]),
      KA_COUNT("model.kernel_widths.0", model.kernel_widths[0]),
      KA_COUNT("model.kernel_widths.1", model.kernel_widths[1]),
      KA_REAL("model.conv_dropout", model.conv_dropout),
      KA_COUNT("model.lstm_hidden", model.lstm_hidden),
      KA_REAL("model.lstm_dropout", model.lstm_dropout),
      KA_COUNT("model.dense_units", model.dense_units),
      KA_COUNT("model.num_classes", model.num_classes),
      KA_COUNT("mc.passes", train.mc.passes),
      KA_REAL("mc.dropout", train.mc.dropout),
      KA_COUNT("train.pretrain_epochs", train.pretrain_epochs),
      KA_COUNT("train.epochs_per_iteration", train.epochs_per_iteration),
      KA_COUNT("train.batch_size", train.batch_size),
      KA_REAL("train.base_lr", train.base_lr),
      KA_REAL("train.adam_beta1", train.adam.beta1),
      KA_REAL("train.adam_beta2", train.adam.beta2),
      KA_REAL("train.adam_epsilon", train.adam.epsilon),
      KA_COUNT("self_train.max_iterations", train.max_iterations),
      KA_COUNT("self_train.adopt_per_iteration", train.adopt_per_iteration),
      Field{"self_train.convergence_entropy_nats",
            [](const RunConfig& c) {
              return c.train.convergence_entropy ? fmt(*c.train.convergence_entropy) : std::string();
            },
            [](RunConfig& c, const std::string& v, const fs::path&) {
              if (v.empty()) c.train.convergence_entropy.reset();
              else c.train.convergence_entropy = to_real("self_train.convergence_entropy_nats", v);
            }},
      KA_REAL("loss.alpha", loss.alpha),
      KA_REAL("loss.lambda", loss.lambda),
  };
  return table;
}

#undef KA_COUNT
#undef KA_REAL
#undef KA_PATH
#undef KA_TEXT

}  // namespace

void RunConfig::validate() const {
  if (source_manifest.empty() != source_dir.empty())
    throw ConfigError("config: source.data_dir and source.manifest must be given together");
  if (target_manifest.empty() != target_dir.empty())
    throw ConfigError("config: target.data_dir and target.manifest must be given together");
  if (!(sample_rate_hz > 0.0)) throw ConfigError("config: sample_rate_hz must be > 0");
  if (downsample_factor < 1) throw ConfigError("config: downsample.factor must be >= 1");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0))
    throw ConfigError("config: validation.fraction must be in [0, 1)");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  model.validate();
  train.validate();
  loss.validate();
  const auto schema = ChannelSchema::resolve(model_schema);
  if (schema.size() != model.in_channels)
    throw ConfigError("config: model.in_channels = " + std::to_string(model.in_channels) +
                      " but model.schema has " + std::to_string(schema.size()) + " channels");
  if (train.mc.passes < 1) throw ConfigError("config: mc.passes must be >= 1");
}

std::vector<std::pair<std::string, std::string>> RunConfig::to_key_values() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

RunConfig RunConfig::from_key_values(const std::map<std::string, std::string>& kv,
                                     const fs::path& base_dir) {
  RunConfig c;
  std::map<std::string, const Field*> by_key;
  for (const auto& f : fields()) by_key[f.key] = &f;
  for (const auto& [k, v] : kv) {
    auto it = by_key.find(k);
    if (it == by_key.end()) throw ConfigError("config: unknown key '" + k + "'");
    it->second->set(c, v, base_dir);
  }
  c.train.seed = c.seed;
  c.train.threads = c.threads;
  return c;
}

std::map<std::string, std::string> read_key_value_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = csv::trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    const std::string where = path.string() + ":" + std::to_string(lineno);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(csv::trim(t.substr(0, eq)));
    const std::string value(csv::trim(t.substr(eq + 1)));
    if (key.empty()) throw ConfigError(where + ": empty key");
    if (!kv.emplace(key, value).second) throw ConfigError(where + ": duplicate key '" + key + "'");
  }
  return kv;
}

std::string env_name(const std::string& key) {
  std::string out = kEnvPrefix;
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

std::vector<std::string> run_config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.push_back(f.key);
  return out;
}

RunConfig load_run_config(const fs::path& path) {
  auto kv = read_key_value_file(path);
  for (const auto& f : fields()) {
    if (const char* v = std::getenv(env_name(f.key).c_str())) kv[f.key] = v;
  }
  auto base = path.parent_path();
  auto c = RunConfig::from_key_values(kv, base);
  c.validate();
  return c;
}

}  // namespace kinadapt::cli
