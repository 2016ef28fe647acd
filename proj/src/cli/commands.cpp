#include "kinadapt/cli/commands.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>

#include "kinadapt/csv.hpp"
#include "kinadapt/error.hpp"
#include "kinadapt/self_training.hpp"
#include "kinadapt/stats.hpp"
#include "kinadapt/synth.hpp"

#ifndef KINADAPT_VERSION
#define KINADAPT_VERSION "0.0.0"
#endif

namespace kinadapt::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

Dataset concat(const Dataset& a, const Dataset& b) {
  Dataset out = a;
  out.trials.insert(out.trials.end(), b.trials.begin(), b.trials.end());
  return out;
}

void check_checkpoint_channels(const ModelParams& params, const ChannelSchema& schema) {
  if (params.config.in_channels != schema.size())
    throw DataError("checkpoint expects " + std::to_string(params.config.in_channels) +
                    " channels but the data schema has " + std::to_string(schema.size()));
}

// Global flags shared by every subcommand.
struct Globals {
  std::size_t threads = 0;  // 0: keep the configured value
};

int cmd_pretrain(const std::string& config_path, const Globals& g) {
  auto config = load_run_config(config_path);
  if (g.threads) config.threads = config.train.threads = g.threads;
  if (config.source_manifest.empty()) throw ConfigError("pretrain: source.manifest is not set");
  fs::create_directories(config.output_dir);
  write_run_manifest(config.output_dir / "run_manifest_pretrain.txt", "pretrain", config.to_key_values());

  const auto source = load_source(config);
  std::cerr << "pretrain: " << source.train.size() << " training / " << source.validation.size()
            << " validation trials\n";
  const auto result = pretrain(source.train, source.validation, config.model, config.train, config.loss);
  model_save(result.params, config.output_dir / "pretrained.ckpt");
  auto metrics = open_out(config.output_dir / "pretrain_metrics.csv");
  write_epoch_csv(result.history, metrics);
  std::cout << "best epoch " << result.best_epoch << "; checkpoint "
            << (config.output_dir / "pretrained.ckpt").string() << '\n';
  return kExitOk;
}

int cmd_adapt(const std::string& config_path, const std::string& checkpoint, const Globals& g) {
  auto config = load_run_config(config_path);
  if (g.threads) config.threads = config.train.threads = g.threads;
  if (config.source_manifest.empty()) throw ConfigError("adapt: source.manifest is not set");
  if (config.target_manifest.empty()) throw ConfigError("adapt: target.manifest is not set");
  const fs::path ckpt = checkpoint.empty() ? config.output_dir / "pretrained.ckpt" : fs::path(checkpoint);
  fs::create_directories(config.output_dir);
  auto entries = config.to_key_values();
  entries.emplace_back("checkpoint", ckpt.string());
  write_run_manifest(config.output_dir / "run_manifest_adapt.txt", "adapt", entries);

  const auto params = model_load(ckpt);
  const auto source = load_source(config);
  const auto target = load_target(config);
  check_checkpoint_channels(params, target.schema);
  const auto labeled = concat(source.train, source.validation);
  auto progress = [](const IterationRecord& r) {
    std::cerr << "iteration " << r.iteration << ": adopted " << r.adopted.size() << ", pool "
              << r.pool_after << ", loss " << r.total_loss << '\n';
  };
  const auto result = self_train_loop(params, labeled, target, config.train, config.loss, progress);

  model_save(result.params, config.output_dir / "adapted.ckpt");
  auto hist = open_out(config.output_dir / "adaptation_history.csv");
  write_history_csv(result.history, hist);
  auto labels = open_out(config.output_dir / "pseudo_labels.csv");
  write_pseudo_labels_csv(result.labels, params.config.num_classes, labels);
  std::cout << "stopped: " << result.history.stop_reason << " after " << result.history.iterations.size()
            << " iterations\n";
  return kExitOk;
}

struct AssessOptions {
  std::string checkpoint;
  std::string data_dir;
  std::string manifest;
  std::string schema = "common48";
  std::string model_schema = "common48";
  std::size_t passes = 50;
  double dropout = 0.5;
  std::size_t downsample_factor = 30;
  std::string downsample_mode = "decimate";
  double sample_rate_hz = 30.0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_assess(const AssessOptions& o, const Globals& g) {
  McConfig mc{o.passes, o.dropout};
  mc.validate();
  if (o.downsample_mode != "decimate" && o.downsample_mode != "average")
    throw ConfigError("assess: --downsample-mode must be decimate or average");
  const fs::path out_path(o.out);
  const fs::path manifest_path =
      (out_path.has_parent_path() ? out_path.parent_path() : fs::path(".")) / "run_manifest_assess.txt";
  write_run_manifest(manifest_path, "assess",
                     {{"checkpoint", o.checkpoint},
                      {"data_dir", o.data_dir},
                      {"manifest", o.manifest},
                      {"schema", o.schema},
                      {"model_schema", o.model_schema},
                      {"mc.passes", std::to_string(o.passes)},
                      {"mc.dropout", csv::format(o.dropout)},
                      {"downsample.factor", std::to_string(o.downsample_factor)},
                      {"downsample.mode", o.downsample_mode},
                      {"sample_rate_hz", csv::format(o.sample_rate_hz)},
                      {"seed", std::to_string(o.seed)}});

  const auto params = model_load(o.checkpoint);
  const auto model_schema = ChannelSchema::resolve(o.model_schema);
  check_checkpoint_channels(params, model_schema);
  const auto raw = load_trials(o.data_dir, o.manifest, ChannelSchema::resolve(o.schema), o.sample_rate_hz);
  const auto mode = o.downsample_mode == "average" ? DownsampleMode::average : DownsampleMode::decimate;
  const auto prepared = normalize(prepare_domain(raw, model_schema, o.downsample_factor, mode)).first;

  auto ranked = batch_uncertainty(params, prepared.trials, mc, o.seed, g.threads ? g.threads : 1);
  std::unordered_map<std::string, std::size_t> order;
  for (std::size_t i = 0; i < prepared.size(); ++i) order[prepared.trials[i].id] = i;
  std::sort(ranked.begin(), ranked.end(),
            [&](const auto& a, const auto& b) { return order.at(a.trial_id) < order.at(b.trial_id); });
  auto out = open_out(out_path);
  write_assessment_csv(ranked, params.config.num_classes, out);
  std::cout << "assessed " << ranked.size() << " trials\n";
  return kExitOk;
}

int cmd_curves(const std::string& assessment, const std::string& manifest, const std::string& out_dir) {
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  write_run_manifest(dir / "run_manifest_curves.txt", "curves",
                     {{"assessment", assessment}, {"manifest", manifest}});
  const auto rows = read_assessment_csv(assessment);
  const auto metadata = load_manifest(manifest);
  std::set<std::string> ids;
  for (const auto& t : metadata) ids.insert(t.id);
  std::vector<TrialPrediction> preds;
  for (const auto& r : rows)
    if (ids.count(r.trial_id)) preds.push_back({r.trial_id, r.prediction});
  if (preds.empty())
    throw DataError("curves: no trial ids shared between " + assessment + " and " + manifest);
  if (preds.size() != rows.size())
    throw DataError("curves: " + std::to_string(rows.size() - preds.size()) +
                    " assessed trials are missing from " + manifest);
  const auto curve = aggregate_sessions(preds, metadata);
  auto csv_out = open_out(dir / "learning_curve.csv");
  write_curve_csv(curve, csv_out);
  auto svg_out = open_out(dir / "learning_curve.svg");
  svg_out << learning_curve_svg(curve);
  std::cout << "curve points: " << curve.points.size() << '\n';
  return kExitOk;
}

int cmd_synth(const std::string& spec_path, const std::string& out_dir, std::optional<std::uint64_t> seed) {
  auto kv = read_key_value_file(spec_path);
  if (seed) kv["seed"] = std::to_string(*seed);
  const auto spec = SynthSpec::from_key_values(kv);
  spec.validate();
  const fs::path dir(out_dir);
  fs::create_directories(dir);
  {
    std::vector<std::pair<std::string, std::string>> entries;
    for (const auto& [k, v] : spec.to_key_values()) entries.emplace_back(k, v);
    write_run_manifest(dir / "run_manifest_synth.txt", "synth", entries);
  }
  const auto data = synth_generate(spec);
  save_trials(data.source, dir / "source", dir / "source_manifest.csv", true);
  save_trials(data.target, dir / "target", dir / "target_manifest.csv", false);
  auto hidden = open_out(dir / "target_hidden_labels.csv");
  hidden << "trial_id,label,skill\n";
  for (std::size_t i = 0; i < data.target.size(); ++i)
    hidden << data.target.trials[i].id << ',' << label_name(data.target_truth[i]) << ','
           << csv::format(data.target_skill[i]) << '\n';
  std::cout << "source " << data.source.size() << " trials, target " << data.target.size() << " trials\n";
  return kExitOk;
}

struct AnovaOptions {
  std::string input;
  std::string manifest;
  std::string value;
  std::string factor_a;
  std::string factor_b;
  std::string out_dir;
};

int cmd_anova(const AnovaOptions& o) {
  const fs::path dir(o.out_dir);
  fs::create_directories(dir);
  write_run_manifest(dir / "run_manifest_anova.txt", "anova",
                     {{"input", o.input},
                      {"manifest", o.manifest},
                      {"value", o.value},
                      {"factor_a", o.factor_a},
                      {"factor_b", o.factor_b}});
  if (!fs::exists(o.input)) throw DataError("missing file: " + o.input);
  const auto rows = csv::read_rows(o.input);
  if (rows.empty()) throw DataError(o.input + ": empty file");
  const auto& header = rows.front().cells;
  std::unordered_map<std::string, const Trial*> meta;
  std::vector<Trial> metadata;
  if (!o.manifest.empty()) {
    metadata = load_manifest(o.manifest);
    for (const auto& t : metadata) meta[t.id] = &t;
  }
  auto column = [&](const std::string& name) -> std::optional<std::size_t> {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) return std::nullopt;
    return static_cast<std::size_t>(it - header.begin());
  };
  const auto id_col = column("trial_id");
  auto lookup = [&](const csv::Row& row, const std::string& name, const std::string& where) -> std::string {
    if (auto c = column(name)) {
      if (*c >= row.cells.size()) throw DataError(where + ": short row");
      return row.cells[*c];
    }
    if (!meta.empty() && id_col && *id_col < row.cells.size()) {
      auto it = meta.find(row.cells[*id_col]);
      if (it == meta.end()) throw DataError(where + ": trial id not in manifest: " + row.cells[*id_col]);
      const Trial& t = *it->second;
      if (name == "group") return group_name(t.group);
      if (name == "session") return std::to_string(t.session);
      if (name == "subject") return t.subject;
      if (name == "repetition") return std::to_string(t.repetition);
    }
    throw ConfigError("anova: column '" + name + "' not found in " + o.input +
                      (o.manifest.empty() ? "" : " or the manifest"));
  };

  std::vector<Observation> obs;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const std::string where = o.input + ":" + std::to_string(rows[r].line);
    Observation ob;
    ob.value = csv::parse_double(lookup(rows[r], o.value, where), where);
    ob.a = lookup(rows[r], o.factor_a, where);
    ob.b = lookup(rows[r], o.factor_b, where);
    obs.push_back(std::move(ob));
  }
  // Numeric factor levels (e.g. sessions) sort numerically in the output.
  auto pad_numeric = [](std::vector<Observation>& v, std::string Observation::*field) {
    bool numeric = true;
    std::size_t width = 0;
    for (const auto& ob : v) {
      const auto& s = ob.*field;
      numeric = numeric && !s.empty() && std::all_of(s.begin(), s.end(), ::isdigit);
      width = std::max(width, s.size());
    }
    if (!numeric) return;
    for (auto& ob : v) ob.*field = std::string(width - (ob.*field).size(), '0') + ob.*field;
  };
  pad_numeric(obs, &Observation::a);
  pad_numeric(obs, &Observation::b);

  const auto result = two_way_anova(obs, o.factor_a, o.factor_b);
  auto a_out = open_out(dir / "anova.csv");
  write_anova_csv(result, a_out);
  auto t_out = open_out(dir / "tukey.csv");
  const auto tukey_a = tukey_for_factor_a(result);
  const auto tukey_b = tukey_for_factor_b(result);
  write_tukey_csv(o.factor_a, tukey_a, t_out, true);
  write_tukey_csv(o.factor_b, tukey_b, t_out, false);
  std::cout << o.factor_a << ": F=" << result.factor_a.f << " p=" << result.factor_a.p << '\n'
            << o.factor_b << ": F=" << result.factor_b.f << " p=" << result.factor_b.p << '\n'
            << result.interaction.source << ": F=" << result.interaction.f << " p=" << result.interaction.p
            << '\n';
  return kExitOk;
}

}  // namespace

Dataset prepare_domain(const Dataset& raw, const ChannelSchema& model_schema, std::size_t factor,
                       DownsampleMode mode) {
  const Dataset aligned = raw.schema == model_schema ? raw : align_channels(raw, model_schema);
  return factor == 1 ? aligned : downsample(aligned, factor, mode);
}

SourceSplit split_and_normalize_source(const Dataset& prepared, double validation_fraction,
                                       std::uint64_t seed) {
  auto [train, val] = split_validation(prepared, validation_fraction, seed);
  SourceSplit out;
  auto [train_n, stats] = normalize(train);
  out.train = std::move(train_n);
  out.stats = stats;
  if (!val.trials.empty()) out.validation = normalize(val, stats).first;
  out.validation.schema = prepared.schema;
  return out;
}

SourceSplit load_source(const RunConfig& config) {
  const auto raw = load_trials(config.source_dir, config.source_manifest,
                               ChannelSchema::resolve(config.source_schema), config.sample_rate_hz);
  for (const auto& t : raw.trials)
    if (!t.label) throw DataError("source trial " + t.id + " has no label");
  const auto prepared = prepare_domain(raw, ChannelSchema::resolve(config.model_schema),
                                       config.downsample_factor, config.downsample_mode);
  return split_and_normalize_source(prepared, config.validation_fraction, config.seed);
}

Dataset load_target(const RunConfig& config) {
  const auto raw = load_trials(config.target_dir, config.target_manifest,
                               ChannelSchema::resolve(config.target_schema), config.sample_rate_hz);
  const auto prepared = prepare_domain(raw, ChannelSchema::resolve(config.model_schema),
                                       config.downsample_factor, config.downsample_mode);
  return normalize(prepared).first;
}

void write_assessment_csv(std::span<const RankedPrediction> rows, std::size_t num_classes,
                          std::ostream& out) {
  out << "trial_id";
  for (std::size_t k = 0; k < num_classes; ++k) out << ",mean_prob_" << k;
  for (std::size_t k = 0; k < num_classes; ++k) out << ",var_" << k;
  out << ",entropy\n";
  for (const auto& r : rows) {
    out << r.trial_id;
    for (double v : r.prediction.mean_probs) out << ',' << csv::format(v);
    for (double v : r.prediction.var_probs) out << ',' << csv::format(v);
    out << ',' << csv::format(r.prediction.entropy) << '\n';
  }
}

std::vector<RankedPrediction> read_assessment_csv(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file: " + path.string());
  const auto rows = csv::read_rows(path);
  if (rows.empty()) throw DataError(path.string() + ": empty assessment file");
  const auto& h = rows.front().cells;
  if (h.size() < 4 || h.front() != "trial_id" || h.back() != "entropy" || (h.size() - 2) % 2 != 0)
    throw DataError(path.string() + ": expected header trial_id,mean_prob_*,var_*,entropy");
  const std::size_t k = (h.size() - 2) / 2;
  for (std::size_t i = 0; i < k; ++i)
    if (h[1 + i] != "mean_prob_" + std::to_string(i) || h[1 + k + i] != "var_" + std::to_string(i))
      throw DataError(path.string() + ": unexpected column layout in header");
  std::vector<RankedPrediction> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& cells = rows[r].cells;
    const std::string where = path.string() + ":" + std::to_string(rows[r].line);
    if (cells.size() != h.size()) throw DataError(where + ": column-count mismatch");
    RankedPrediction p;
    p.trial_id = cells[0];
    for (std::size_t i = 0; i < k; ++i) {
      p.prediction.mean_probs.push_back(csv::parse_double(cells[1 + i], where));
      p.prediction.var_probs.push_back(csv::parse_double(cells[1 + k + i], where));
    }
    p.prediction.entropy = csv::parse_double(cells.back(), where);
    out.push_back(std::move(p));
  }
  return out;
}

void write_run_manifest(const fs::path& path, const std::string& command,
                        const std::vector<std::pair<std::string, std::string>>& entries) {
  auto out = open_out(path);
  out << "command = " << command << '\n' << "version = " << version_string() << '\n';
  for (const auto& [k, v] : entries) out << k << " = " << v << '\n';
  out.flush();
  if (!out) throw DataError("cannot write run manifest " + path.string());
}

std::string version_string() { return KINADAPT_VERSION; }

int run(int argc, char** argv) {
  CLI::App app{"Skill assessment with uncertainty-guided self-training", "kinadapt"};
  app.require_subcommand(1);
  app.set_version_flag("--version", version_string());
  Globals globals;
  app.add_option("--threads", globals.threads, "Cap on worker threads (0: use the configured value)");

  std::string config_path, checkpoint;
  auto* pretrain_cmd = app.add_subcommand("pretrain", "Train on the labeled source domain");
  pretrain_cmd->add_option("-c,--config", config_path, "Run configuration file")->required();

  auto* adapt_cmd = app.add_subcommand("adapt", "Self-train on the unlabeled target pool");
  adapt_cmd->add_option("-c,--config", config_path, "Run configuration file")->required();
  adapt_cmd->add_option("--checkpoint", checkpoint, "Pretrained checkpoint (default <output_dir>/pretrained.ckpt)");

  AssessOptions ao;
  auto* assess_cmd = app.add_subcommand("assess", "MC-dropout predictions for every trial");
  assess_cmd->add_option("--checkpoint", ao.checkpoint, "Model checkpoint")->required();
  assess_cmd->add_option("--data-dir", ao.data_dir, "Directory with trial CSV files")->required();
  assess_cmd->add_option("--manifest", ao.manifest, "Trial manifest CSV")->required();
  assess_cmd->add_option("--schema", ao.schema, "Channel schema of the files")->capture_default_str();
  assess_cmd->add_option("--model-schema", ao.model_schema, "Channel schema of the model")->capture_default_str();
  assess_cmd->add_option("-T,--passes", ao.passes, "MC passes")->capture_default_str();
  assess_cmd->add_option("-p,--dropout", ao.dropout, "MC dropout rate")->capture_default_str();
  assess_cmd->add_option("--downsample-factor", ao.downsample_factor)->capture_default_str();
  assess_cmd->add_option("--downsample-mode", ao.downsample_mode)->capture_default_str();
  assess_cmd->add_option("--sample-rate-hz", ao.sample_rate_hz)->capture_default_str();
  assess_cmd->add_option("--seed", ao.seed)->capture_default_str();
  assess_cmd->add_option("-o,--out", ao.out, "Output CSV")->required();

  std::string assessment, manifest, out_dir;
  auto* curves_cmd = app.add_subcommand("curves", "Session-level learning curves");
  curves_cmd->add_option("--assessment", assessment, "Assessment CSV")->required();
  curves_cmd->add_option("--manifest", manifest, "Trial manifest CSV")->required();
  curves_cmd->add_option("-o,--out-dir", out_dir, "Output directory")->required();

  std::string spec_path;
  std::optional<std::uint64_t> synth_seed;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic source/target dataset");
  synth_cmd->add_option("--spec", spec_path, "Generator key = value file")->required();
  synth_cmd->add_option("--seed", synth_seed, "Override the generator seed");
  synth_cmd->add_option("-o,--out-dir", out_dir, "Output directory")->required();

  AnovaOptions an;
  auto* anova_cmd = app.add_subcommand("anova", "Two-way ANOVA with Tukey post-hoc comparisons");
  anova_cmd->add_option("--input", an.input, "CSV with a header row")->required();
  anova_cmd->add_option("--manifest", an.manifest, "Manifest joined on trial_id for group/session/subject");
  anova_cmd->add_option("--value", an.value, "Response column")->required();
  anova_cmd->add_option("--factor-a", an.factor_a, "First factor column")->required();
  anova_cmd->add_option("--factor-b", an.factor_b, "Second factor column")->required();
  anova_cmd->add_option("-o,--out-dir", an.out_dir, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*pretrain_cmd) return cmd_pretrain(config_path, globals);
    if (*adapt_cmd) return cmd_adapt(config_path, checkpoint, globals);
    if (*assess_cmd) return cmd_assess(ao, globals);
    if (*curves_cmd) return cmd_curves(assessment, manifest, out_dir);
    if (*synth_cmd) return cmd_synth(spec_path, out_dir, synth_seed);
    if (*anova_cmd) return cmd_anova(an);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const ShapeError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitOther;
  }
  return kExitOther;
}

}  // namespace kinadapt::cli
