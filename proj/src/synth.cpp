#include "kinadapt/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

#include "kinadapt/csv.hpp"
#include "kinadapt/rng.hpp"

namespace kinadapt {

namespace {

struct ChannelTraits {
  double amplitude;
  double harmonic;
  double offset;
};

std::string padded(const char* prefix, std::size_t v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%02zu", prefix, v);
  return buf;
}

NdArray make_signal(const SynthSpec& spec, const std::vector<ChannelTraits>& traits, double skill,
                    double freq_scale, double amp_scale, double freq_spread, double noise, Rng& rng) {
  if (freq_spread != 1.0) freq_scale *= std::pow(freq_spread, rng.uniform(-1.0, 1.0));
  const std::size_t length =
      spec.min_length + rng.below(spec.max_length - spec.min_length + 1);
  const double freq = spec.base_frequency_hz * std::exp2(skill) * freq_scale *
                      (1.0 + spec.frequency_spread * rng.uniform(-1.0, 1.0));
  const double jitter = noise * (1.0 - 0.75 * skill);
  std::vector<double> values(spec.channels * length);
  for (std::size_t c = 0; c < spec.channels; ++c) {
    const auto& tr = traits[c];
    const double amp = tr.amplitude * amp_scale;
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double omega =
        2.0 * std::numbers::pi * freq * tr.harmonic / spec.sample_rate_hz;
    double* row = values.data() + c * length;
    for (std::size_t t = 0; t < length; ++t) {
      row[t] = tr.offset + amp * std::sin(omega * static_cast<double>(t) + phase);
      if (jitter > 0.0) row[t] += amp * jitter * rng.normal();
    }
  }
  return NdArray(Shape{spec.channels, length}, std::move(values));
}

double get_number(const std::map<std::string, std::string>& kv, const std::string& key, double fallback) {
  auto it = kv.find(key);
  return it == kv.end() ? fallback : csv::parse_double(it->second, "synth spec key '" + key + "'");
}

std::size_t get_count(const std::map<std::string, std::string>& kv, const std::string& key,
                      std::size_t fallback) {
  auto it = kv.find(key);
  if (it == kv.end()) return fallback;
  const auto v = csv::parse_int(it->second, "synth spec key '" + key + "'");
  if (v < 0) throw ConfigError("synth spec: '" + key + "' must be non-negative");
  return static_cast<std::size_t>(v);
}

}  // namespace

void SynthSpec::validate() const {
  if (classes != 2) throw ConfigError("synth spec: only 2 classes are supported");
  if (channels == 0 || channels > 76) throw ConfigError("synth spec: channels must be in [1, 76]");
  if (source_subjects == 0 || source_repetitions == 0) {
    throw ConfigError("synth spec: source needs at least one subject and repetition");
  }
  if (target_subjects == 0 || target_sessions == 0 || target_repetitions == 0) {
    throw ConfigError("synth spec: target needs subjects, sessions and repetitions");
  }
  if (min_length == 0 || max_length < min_length) throw ConfigError("synth spec: bad length range");
  if (!(sample_rate_hz > 0.0) || !(base_frequency_hz > 0.0)) {
    throw ConfigError("synth spec: sample rate and base frequency must be positive");
  }
  if (!(frequency_spread >= 0.0 && frequency_spread < 1.0)) {
    throw ConfigError("synth spec: frequency_spread must be in [0, 1)");
  }
  if (source_noise_std < 0.0 || shift.noise_std < 0.0 || drift < 0.0) {
    throw ConfigError("synth spec: noise and drift must be non-negative");
  }
  if (!(shift.frequency_scale > 0.0) || !(shift.amplitude_scale > 0.0)) {
    throw ConfigError("synth spec: shift scales must be positive");
  }
  if (!(shift.trial_frequency_spread >= 1.0)) {
    throw ConfigError("synth spec: shift_trial_frequency_spread must be >= 1");
  }
}

std::map<std::string, std::string> SynthSpec::to_key_values() const {
  return {
      {"classes", std::to_string(classes)},
      {"channels", std::to_string(channels)},
      {"source_subjects", std::to_string(source_subjects)},
      {"source_repetitions", std::to_string(source_repetitions)},
      {"target_subjects", std::to_string(target_subjects)},
      {"target_sessions", std::to_string(target_sessions)},
      {"target_repetitions", std::to_string(target_repetitions)},
      {"min_length_samples", std::to_string(min_length)},
      {"max_length_samples", std::to_string(max_length)},
      {"sample_rate_hz", csv::format(sample_rate_hz)},
      {"base_frequency_hz", csv::format(base_frequency_hz)},
      {"frequency_spread", csv::format(frequency_spread)},
      {"source_noise_std", csv::format(source_noise_std)},
      {"shift_frequency_scale", csv::format(shift.frequency_scale)},
      {"shift_amplitude_scale", csv::format(shift.amplitude_scale)},
      {"shift_trial_frequency_spread", csv::format(shift.trial_frequency_spread)},
      {"shift_noise_std", csv::format(shift.noise_std)},
      {"drift_per_session", csv::format(drift)},
      {"seed", std::to_string(seed)},
  };
}

SynthSpec SynthSpec::from_key_values(const std::map<std::string, std::string>& kv) {
  const SynthSpec defaults;
  const auto known = defaults.to_key_values();
  for (const auto& [k, v] : kv) {
    if (!known.contains(k)) throw ConfigError("synth spec: unknown key '" + k + "'");
  }
  SynthSpec s;
  s.classes = get_count(kv, "classes", defaults.classes);
  s.channels = get_count(kv, "channels", defaults.channels);
  s.source_subjects = get_count(kv, "source_subjects", defaults.source_subjects);
  s.source_repetitions = get_count(kv, "source_repetitions", defaults.source_repetitions);
  s.target_subjects = get_count(kv, "target_subjects", defaults.target_subjects);
  s.target_sessions = get_count(kv, "target_sessions", defaults.target_sessions);
  s.target_repetitions = get_count(kv, "target_repetitions", defaults.target_repetitions);
  s.min_length = get_count(kv, "min_length_samples", defaults.min_length);
  s.max_length = get_count(kv, "max_length_samples", defaults.max_length);
  s.sample_rate_hz = get_number(kv, "sample_rate_hz", defaults.sample_rate_hz);
  s.base_frequency_hz = get_number(kv, "base_frequency_hz", defaults.base_frequency_hz);
  s.frequency_spread = get_number(kv, "frequency_spread", defaults.frequency_spread);
  s.source_noise_std = get_number(kv, "source_noise_std", defaults.source_noise_std);
  s.shift.frequency_scale = get_number(kv, "shift_frequency_scale", defaults.shift.frequency_scale);
  s.shift.amplitude_scale = get_number(kv, "shift_amplitude_scale", defaults.shift.amplitude_scale);
  s.shift.trial_frequency_spread =
      get_number(kv, "shift_trial_frequency_spread", defaults.shift.trial_frequency_spread);
  s.shift.noise_std = get_number(kv, "shift_noise_std", defaults.shift.noise_std);
  s.drift = get_number(kv, "drift_per_session", defaults.drift);
  s.seed = static_cast<std::uint64_t>(get_count(kv, "seed", 0));
  return s;
}

SynthResult synth_generate(const SynthSpec& spec) {
  spec.validate();
  const ChannelSchema schema =
      spec.channels == 48 ? ChannelSchema::common48() : ChannelSchema::prefix(spec.channels);

  Rng traits_rng(Rng::derive(spec.seed, "channel-traits"));
  std::vector<ChannelTraits> traits(spec.channels);
  for (auto& tr : traits) {
    tr.amplitude = traits_rng.uniform(0.5, 1.5);
    tr.harmonic = traits_rng.uniform(0.75, 1.25);
    tr.offset = traits_rng.uniform(-1.0, 1.0);
  }

  SynthResult out;
  out.source.schema = schema;
  out.target.schema = schema;

  Rng src_rng(Rng::derive(spec.seed, "source"));
  for (std::size_t s = 0; s < spec.source_subjects; ++s) {
    const std::size_t label = s % 2;
    for (std::size_t r = 0; r < spec.source_repetitions; ++r) {
      Trial t;
      t.subject = padded("S", s + 1);
      t.id = "src_" + t.subject + "_" + padded("R", r + 1);
      t.session = 1;
      t.repetition = static_cast<int>(r + 1);
      t.label = label;
      t.sample_rate_hz = spec.sample_rate_hz;
      t.data = make_signal(spec, traits, static_cast<double>(label), 1.0, 1.0, 1.0,
                           spec.source_noise_std, src_rng);
      out.source.trials.push_back(std::move(t));
    }
  }

  Rng tgt_rng(Rng::derive(spec.seed, "target"));
  for (std::size_t s = 0; s < spec.target_subjects; ++s) {
    const Group group = s < (spec.target_subjects + 1) / 2 ? Group::assisted : Group::non_assisted;
    const double subject_offset = tgt_rng.uniform(-0.15, 0.15);
    for (std::size_t e = 0; e < spec.target_sessions; ++e) {
      for (std::size_t r = 0; r < spec.target_repetitions; ++r) {
        double skill;
        if (spec.drift > 0.0) {
          skill = std::clamp(spec.drift * static_cast<double>(e) + subject_offset, 0.0, 1.0);
        } else {
          skill = static_cast<double>(tgt_rng.below(2));
        }
        Trial t;
        t.subject = padded("T", s + 1);
        t.id = "tgt_" + t.subject + "_" + padded("E", e + 1) + "_" + padded("R", r + 1);
        t.session = static_cast<int>(e + 1);
        t.repetition = static_cast<int>(r + 1);
        t.group = group;
        t.sample_rate_hz = spec.sample_rate_hz;
        t.data = make_signal(spec, traits, skill, spec.shift.frequency_scale, spec.shift.amplitude_scale,
                             spec.shift.trial_frequency_spread, spec.shift.noise_std, tgt_rng);
        out.target.trials.push_back(std::move(t));
        out.target_truth.push_back(skill >= 0.5 ? kExpertClass : kNoviceClass);
        out.target_skill.push_back(skill);
      }
    }
  }
  return out;
}

}  // namespace kinadapt
