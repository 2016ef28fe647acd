#pragma once

// Synthetic two-class kinematics with a controllable source/target shift.
//
// A trial with skill s in [0, 1] has per-channel sinusoidal trajectories at
// frequency base * 2^s (class 0 slow, class 1 twice as fast) plus white
// jitter of std noise * (1 - 0.75 s) relative to the channel amplitude.
// The target domain multiplies frequency and amplitude by the shift factors;
// with drift > 0 a target subject's skill grows linearly with session index.

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "kinadapt/data.hpp"

namespace kinadapt {

struct DomainShift {
  double frequency_scale = 1.5;
  double amplitude_scale = 2.0;
  // Per-trial frequency factor trial_frequency_spread^u, u ~ U(-1, 1); 1 disables it.
  double trial_frequency_spread = 1.0;
  double noise_std = 0.3;  // target jitter level
};

struct SynthSpec {
  std::size_t classes = 2;
  std::size_t channels = 48;
  std::size_t source_subjects = 8;
  std::size_t source_repetitions = 15;
  std::size_t target_subjects = 16;
  std::size_t target_sessions = 10;
  std::size_t target_repetitions = 8;
  std::size_t min_length = 600;
  std::size_t max_length = 1200;
  double sample_rate_hz = 30.0;
  double base_frequency_hz = 0.08;
  double frequency_spread = 0.1;  // relative per-trial jitter of the frequency
  double source_noise_std = 0.3;
  DomainShift shift;
  double drift = 0.0;  // skill gained per target session
  std::uint64_t seed = 0;

  void validate() const;
  std::map<std::string, std::string> to_key_values() const;
  // Unknown keys raise ConfigError.
  static SynthSpec from_key_values(const std::map<std::string, std::string>& kv);
};

struct SynthResult {
  Dataset source;  // labeled
  Dataset target;  // labels stripped
  std::vector<std::size_t> target_truth;  // hidden class per target trial
  std::vector<double> target_skill;       // latent skill per target trial
};

SynthResult synth_generate(const SynthSpec& spec);

}  // namespace kinadapt
