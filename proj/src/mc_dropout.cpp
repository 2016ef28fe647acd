#include "kinadapt/mc_dropout.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <thread>

namespace kinadapt {

void McConfig::validate() const {
  if (passes < 1) throw ConfigError("mc config: passes (T) must be >= 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("mc config: dropout p must be in [0, 1)");
}

DropoutRates mc_dropout_rates(const ModelConfig& config, const McConfig& mc) {
  return {std::min(config.conv_dropout, mc.dropout), mc.dropout};
}

McPrediction mc_predict(const ModelParams& params, const NdArray& trial, const McConfig& cfg,
                        std::uint64_t seed) {
  cfg.validate();
  NoGradGuard guard;
  const auto net = bind_parameters(params, false);
  const auto rates = mc_dropout_rates(params.config, cfg);
  const std::size_t k = params.config.num_classes;

  // Welford updates keep identical passes exact: the mean equals the pass
  // output bit for bit and the variance stays 0.
  std::vector<double> mean(k, 0.0);
  std::vector<double> m2(k, 0.0);
  for (std::size_t t = 0; t < cfg.passes; ++t) {
    Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(t)));
    const auto probs = model_forward(net, params.config, trial, Mode::mc, rates, rng).probs.value();
    const double n = static_cast<double>(t + 1);
    for (std::size_t c = 0; c < k; ++c) {
      const double delta = probs[c] - mean[c];
      mean[c] += delta / n;
      m2[c] += delta * (probs[c] - mean[c]);
    }
  }
  McPrediction out;
  out.passes = cfg.passes;
  out.mean_probs = std::move(mean);
  out.var_probs.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    out.var_probs[c] = std::max(0.0, m2[c] / static_cast<double>(cfg.passes));
  }
  out.entropy = predictive_entropy(out.mean_probs);
  return out;
}

double predictive_entropy(std::span<const double> probs) {
  if (probs.empty()) throw ConfigError("predictive_entropy: empty probability vector");
  double total = 0.0;
  double h = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0)) throw NumericError("predictive_entropy: negative or NaN component");
    total += p;
    if (p > 0.0) h -= p * std::log(p);
  }
  if (std::abs(total - 1.0) > 1e-9) {
    throw NumericError("predictive_entropy: components sum to " + std::to_string(total));
  }
  return std::clamp(h, 0.0, std::log(static_cast<double>(probs.size())));
}

std::vector<RankedPrediction> batch_uncertainty(const ModelParams& params,
                                                std::span<const Trial> pool, const McConfig& cfg,
                                                std::uint64_t seed, std::size_t threads) {
  if (pool.empty()) throw DataError("batch_uncertainty: empty pool");
  cfg.validate();
  std::vector<RankedPrediction> out(pool.size());
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, pool.size());
  if (workers == 1) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      out[i] = {pool[i].id, mc_predict(params, pool[i].data, cfg, seed)};
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> team;
    for (std::size_t w = 0; w < workers; ++w) {
      team.emplace_back([&]() {
        for (std::size_t i = next++; i < pool.size(); i = next++) {
          try {
            out[i] = {pool[i].id, mc_predict(params, pool[i].data, cfg, seed)};
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& th : team) th.join();
    if (failure) std::rethrow_exception(failure);
  }
  std::stable_sort(out.begin(), out.end(), [](const RankedPrediction& a, const RankedPrediction& b) {
    if (a.prediction.entropy != b.prediction.entropy) return a.prediction.entropy < b.prediction.entropy;
    return a.trial_id < b.trial_id;
  });
  return out;
}

}  // namespace kinadapt
