#pragma once

// Monte-Carlo dropout inference: T stochastic forward passes per trial,
// summarized by per-class mean, per-class population variance and the
// predictive entropy of the mean.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "kinadapt/data.hpp"
#include "kinadapt/model.hpp"

namespace kinadapt {

struct McConfig {
  std::size_t passes = 50;  // T
  double dropout = 0.5;     // p

  void validate() const;
};

struct McPrediction {
  std::vector<double> mean_probs;
  std::vector<double> var_probs;
  double entropy = 0.0;  // nats
  std::size_t passes = 0;
};

// Dropout rates used during MC passes: the recurrent branch runs at p and
// the convolutional branch at min(conv_dropout, p).
DropoutRates mc_dropout_rates(const ModelConfig& config, const McConfig& mc);

// Pass t draws its masks from Rng(Rng::derive(seed, t)), so the result is a
// function of (params, trial, cfg, seed) alone.
McPrediction mc_predict(const ModelParams& params, const NdArray& trial, const McConfig& cfg,
                        std::uint64_t seed);

// Shannon entropy in nats with 0 ln 0 = 0. Rejects negative components and
// vectors whose sum is more than 1e-9 away from 1.
double predictive_entropy(std::span<const double> probs);

struct RankedPrediction {
  std::string trial_id;
  McPrediction prediction;
};

// One prediction per pool trial, sorted ascending by (entropy, trial id).
// Every trial uses the same `seed`; `threads` > 1 spreads trials over workers
// without changing the result.
std::vector<RankedPrediction> batch_uncertainty(const ModelParams& params,
                                                std::span<const Trial> pool, const McConfig& cfg,
                                                std::uint64_t seed, std::size_t threads = 1);

}  // namespace kinadapt
