#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <string>
#include <vector>

#include "kinadapt/cli/commands.hpp"
#include "kinadapt/data.hpp"
#include "kinadapt/error.hpp"
#include "kinadapt/mc_dropout.hpp"
#include "kinadapt/model.hpp"
#include "kinadapt/self_training.hpp"
#include "kinadapt/special_functions.hpp"
#include "kinadapt/stats.hpp"
#include "kinadapt/synth.hpp"

namespace py = pybind11;
using namespace kinadapt;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

NdArray to_ndarray(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  std::vector<double> values(a.data(), a.data() + a.size());
  return NdArray::checked(std::move(shape), std::move(values));
}

Array to_numpy(const NdArray& a) {
  std::vector<py::ssize_t> shape(a.shape().begin(), a.shape().end());
  Array out(shape);
  std::copy(a.values().begin(), a.values().end(), out.mutable_data());
  return out;
}

Array to_numpy(const std::vector<double>& v) {
  Array out(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), out.mutable_data());
  return out;
}

Mode parse_mode(const std::string& mode) {
  if (mode == "eval") return Mode::eval;
  if (mode == "train") return Mode::train;
  if (mode == "mc") return Mode::mc;
  throw ConfigError("mode must be eval, train or mc, got '" + mode + "'");
}

DownsampleMode parse_downsample(const std::string& mode) {
  if (mode == "decimate") return DownsampleMode::decimate;
  if (mode == "average") return DownsampleMode::average;
  throw ConfigError("downsample mode must be decimate or average, got '" + mode + "'");
}

py::dict prediction_dict(const McPrediction& p) {
  py::dict d;
  d["mean_probs"] = to_numpy(p.mean_probs);
  d["var_probs"] = to_numpy(p.var_probs);
  d["entropy"] = p.entropy;
  d["passes"] = p.passes;
  return d;
}

py::list trials_list(const Dataset& ds, const std::vector<std::size_t>* truth) {
  py::list out;
  for (std::size_t i = 0; i < ds.trials.size(); ++i) {
    const auto& t = ds.trials[i];
    py::dict d;
    d["id"] = t.id;
    d["subject"] = t.subject;
    d["session"] = t.session;
    d["repetition"] = t.repetition;
    d["group"] = group_name(t.group);
    if (t.label) d["label"] = *t.label;
    else if (truth) d["hidden_label"] = (*truth)[i];
    d["data"] = to_numpy(t.data);
    out.append(d);
  }
  return out;
}

py::dict anova_row(const AnovaRow& r) {
  py::dict d;
  d["source"] = r.source;
  d["ss"] = r.ss;
  d["df"] = r.df;
  d["ms"] = r.ms;
  d["f"] = r.f;
  d["p"] = r.p;
  return d;
}

py::list tukey_list(const std::vector<TukeyComparison>& rows) {
  py::list out;
  for (const auto& c : rows) {
    py::dict d;
    d["level_i"] = c.level_i;
    d["level_j"] = c.level_j;
    d["mean_diff"] = c.mean_diff;
    d["q"] = c.q;
    d["p"] = c.p;
    d["significant"] = c.significant;
    d["direction"] = c.direction;
    out.append(d);
  }
  return out;
}

LearningCurve build_curve(const std::vector<std::string>& ids, const Array& mean_probs,
                          const std::vector<double>& entropies, const std::vector<std::string>& groups,
                          const std::vector<int>& sessions) {
  const auto probs = to_ndarray(mean_probs);
  const std::size_t n = ids.size();
  if (probs.rank() != 2 || probs.dim(0) != n || entropies.size() != n || groups.size() != n ||
      sessions.size() != n) {
    throw ShapeError("learning curve: ids, mean_probs rows, entropies, groups and sessions must align");
  }
  const std::size_t k = probs.dim(1);
  std::vector<TrialPrediction> preds;
  std::vector<Trial> meta;
  for (std::size_t i = 0; i < n; ++i) {
    McPrediction p;
    p.mean_probs.assign(probs.data() + i * k, probs.data() + (i + 1) * k);
    p.var_probs.assign(k, 0.0);
    p.entropy = entropies[i];
    preds.push_back({ids[i], std::move(p)});
    Trial t;
    t.id = ids[i];
    t.group = parse_group(groups[i]);
    t.session = sessions[i];
    meta.push_back(std::move(t));
  }
  return aggregate_sessions(preds, meta);
}

}  // namespace

PYBIND11_MODULE(_kinadapt, m) {
  m.doc() = "Skill assessment with self-training and MC-dropout uncertainty";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<ModelConfig>(m, "ModelConfig")
      .def(py::init<>())
      .def_readwrite("in_channels", &ModelConfig::in_channels)
      .def_readwrite("conv_filters", &ModelConfig::conv_filters)
      .def_readwrite("kernel_widths", &ModelConfig::kernel_widths)
      .def_readwrite("conv_dropout", &ModelConfig::conv_dropout)
      .def_readwrite("lstm_hidden", &ModelConfig::lstm_hidden)
      .def_readwrite("lstm_dropout", &ModelConfig::lstm_dropout)
      .def_readwrite("dense_units", &ModelConfig::dense_units)
      .def_readwrite("num_classes", &ModelConfig::num_classes)
      .def("validate", &ModelConfig::validate)
      .def("to_dict", &ModelConfig::to_key_values);

  py::class_<ModelParams>(m, "Model")
      .def_readonly("config", &ModelParams::config)
      .def("parameter_count", &ModelParams::parameter_count)
      .def("save", [](const ModelParams& p, const std::filesystem::path& path) { model_save(p, path); })
      .def_static("load", &model_load, py::arg("path"))
      .def("tensors", [](const ModelParams& p) {
        py::dict d;
        p.weights.visit([&](const std::string& name, const NdArray& t, bool) { d[py::str(name)] = to_numpy(t); });
        return d;
      });

  m.def(
      "init_model",
      [](const ModelConfig& config, std::uint64_t seed) {
        Rng rng(seed);
        return model_init(config, rng);
      },
      py::arg("config"), py::arg("seed") = 0);

  m.def(
      "predict",
      [](const ModelParams& params, const Array& trial, const std::string& mode, std::uint64_t seed) {
        Rng rng(seed);
        return to_numpy(model_predict(params, to_ndarray(trial), parse_mode(mode), rng));
      },
      py::arg("model"), py::arg("trial"), py::arg("mode") = "eval", py::arg("seed") = 0,
      "Class probabilities for one {channels, time} trial.");

  m.def(
      "mc_predict",
      [](const ModelParams& params, const Array& trial, std::size_t passes, double dropout,
         std::uint64_t seed) {
        return prediction_dict(mc_predict(params, to_ndarray(trial), McConfig{passes, dropout}, seed));
      },
      py::arg("model"), py::arg("trial"), py::arg("passes") = 50, py::arg("dropout") = 0.5,
      py::arg("seed") = 0);

  m.def("predictive_entropy",
        [](const std::vector<double>& probs) { return predictive_entropy(probs); }, py::arg("probs"));

  m.def("lr_schedule", &lr_schedule, py::arg("iteration"), py::arg("base") = 0.001);

  m.def(
      "downsample",
      [](const Array& trial, std::size_t factor, const std::string& mode) {
        Trial t;
        t.data = to_ndarray(trial);
        return to_numpy(downsample(t, factor, parse_downsample(mode)).data);
      },
      py::arg("trial"), py::arg("factor") = 30, py::arg("mode") = "decimate");

  m.def(
      "synth_generate",
      [](const std::map<std::string, std::string>& spec) {
        const auto result = synth_generate(SynthSpec::from_key_values(spec));
        py::dict d;
        d["source"] = trials_list(result.source, nullptr);
        d["target"] = trials_list(result.target, &result.target_truth);
        std::vector<std::string> names;
        for (const auto& c : result.source.schema.channels) names.push_back(c.to_string());
        d["channels"] = names;
        return d;
      },
      py::arg("spec") = std::map<std::string, std::string>{},
      "Synthetic source/target datasets; spec keys match the `synth --spec` file.");

  m.def("regularized_incomplete_beta", &regularized_incomplete_beta, py::arg("x"), py::arg("a"),
        py::arg("b"));
  m.def("f_cdf", &f_cdf, py::arg("x"), py::arg("d1"), py::arg("d2"));
  m.def("studentized_range_cdf", &studentized_range_cdf, py::arg("q"), py::arg("k"), py::arg("df"));

  m.def(
      "two_way_anova",
      [](const std::vector<double>& values, const std::vector<std::string>& a,
         const std::vector<std::string>& b, const std::string& name_a, const std::string& name_b) {
        if (values.size() != a.size() || values.size() != b.size())
          throw ShapeError("two_way_anova: values, a and b must have equal length");
        std::vector<Observation> obs;
        for (std::size_t i = 0; i < values.size(); ++i) obs.push_back({values[i], a[i], b[i]});
        const auto r = two_way_anova(obs, name_a, name_b);
        py::dict d;
        d["rows"] = py::make_tuple(anova_row(r.factor_a), anova_row(r.factor_b), anova_row(r.interaction),
                                   anova_row(r.residual));
        d["ss_total"] = r.ss_total;
        d["observations"] = r.observations;
        d["per_cell"] = r.per_cell;
        d["tukey_a"] = tukey_list(tukey_for_factor_a(r));
        d["tukey_b"] = tukey_list(tukey_for_factor_b(r));
        return d;
      },
      py::arg("values"), py::arg("a"), py::arg("b"), py::arg("name_a") = "A", py::arg("name_b") = "B");

  m.def(
      "tukey_hsd",
      [](const std::map<std::string, double>& means, double mse, double df_resid, double n) {
        std::vector<LevelMean> lm;
        for (const auto& [level, mean] : means) lm.push_back({level, mean});
        return tukey_list(tukey_hsd(lm, mse, df_resid, n));
      },
      py::arg("means"), py::arg("mse"), py::arg("df_resid"), py::arg("n_per_level"));

  m.def(
      "learning_curve",
      [](const std::vector<std::string>& ids, const Array& mean_probs, const std::vector<double>& entropies,
         const std::vector<std::string>& groups, const std::vector<int>& sessions) {
        py::list out;
        for (const auto& p : build_curve(ids, mean_probs, entropies, groups, sessions).points) {
          py::dict d;
          d["group"] = p.group;
          d["session"] = p.session;
          d["count"] = p.count;
          d["mean_expert_prob"] = p.mean_expert_prob;
          d["std_expert_prob"] = p.std_expert_prob;
          d["mean_entropy"] = p.mean_entropy;
          d["std_entropy"] = p.std_entropy;
          d["degenerate"] = p.degenerate;
          out.append(d);
        }
        return out;
      },
      py::arg("trial_ids"), py::arg("mean_probs"), py::arg("entropies"), py::arg("groups"),
      py::arg("sessions"));

  m.def(
      "learning_curve_svg",
      [](const std::vector<std::string>& ids, const Array& mean_probs, const std::vector<double>& entropies,
         const std::vector<std::string>& groups, const std::vector<int>& sessions) {
        return learning_curve_svg(build_curve(ids, mean_probs, entropies, groups, sessions));
      },
      py::arg("trial_ids"), py::arg("mean_probs"), py::arg("entropies"), py::arg("groups"),
      py::arg("sessions"));

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "kinadapt");
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        py::gil_scoped_release release;
        return cli::run(static_cast<int>(argv.size()), argv.data());
      },
      py::arg("args"), "Runs a CLI subcommand in-process and returns its exit code.");

  m.attr("__version__") = cli::version_string();
}
