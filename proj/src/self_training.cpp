#include "kinadapt/self_training.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <unordered_map>

#include "kinadapt/csv.hpp"

namespace kinadapt {

void LossWeights::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("loss weights: alpha must be >= 0");
  if (!(lambda >= 0.0)) throw ConfigError("loss weights: lambda must be >= 0");
}

void SelfTrainConfig::validate() const {
  if (max_iterations < 1) throw ConfigError("self-training: max_iterations (N) must be >= 1");
  if (adopt_per_iteration < 1) throw ConfigError("self-training: adopt_per_iteration (k) must be >= 1");
  if (batch_size < 1) throw ConfigError("self-training: batch_size must be >= 1");
  if (!(base_lr > 0.0)) throw ConfigError("self-training: base_lr must be > 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("self-training: Adam moments must be in [0, 1)");
  }
  if (!(adam.epsilon > 0.0)) throw ConfigError("self-training: Adam epsilon must be > 0");
  if (threads < 1) throw ConfigError("self-training: threads must be >= 1");
  mc.validate();
}

LossTerms total_loss(const SkillNetwork<Var>& net, const ModelConfig& config,
                     std::span<const Example> labeled, std::span<const Example> pseudo,
                     const LossWeights& weights, Mode mode, Rng& rng) {
  weights.validate();
  if (labeled.empty() && pseudo.empty()) {
    throw ConfigError("total_loss: both labeled and pseudo batches are empty");
  }
  const DropoutRates rates{config.conv_dropout, config.lstm_dropout};
  auto ce_sum = [&](std::span<const Example> batch) {
    Var acc;
    for (const auto& ex : batch) {
      const auto fwd = model_forward(net, config, ex.data, mode, rates, rng);
      const Var ce = softmax_cross_entropy(fwd.logits, ex.label);
      acc = acc ? add(acc, ce) : ce;
    }
    return acc;
  };

  LossTerms terms;
  Var total;
  if (!labeled.empty()) {
    total = ce_sum(labeled);
    terms.labeled = total.value().item();
  }
  if (!pseudo.empty() && weights.alpha > 0.0) {
    const Var p = ce_sum(pseudo);
    terms.pseudo = p.value().item();
    const Var weighted = scale(p, weights.alpha);
    total = total ? add(total, weighted) : weighted;
  } else if (!pseudo.empty()) {
    NoGradGuard guard;
    terms.pseudo = ce_sum(pseudo).value().item();
  }
  if (weights.lambda > 0.0) {
    Var reg;
    net.visit([&](const std::string&, const Var& t, bool is_weight) {
      if (!is_weight) return;
      const Var sq = sum(multiply(t, t));
      reg = reg ? add(reg, sq) : sq;
    });
    const Var weighted = scale(reg, weights.lambda);
    terms.regularizer = weighted.value().item();
    total = total ? add(total, weighted) : weighted;
  }
  if (!total) total = constant(NdArray::scalar(0.0));  // alpha == 0 with only pseudo data
  terms.total = total;
  return terms;
}

void Adam::step(ModelParams& params, const SkillNetwork<Var>& grads, double lr) {
  std::vector<NdArray> g;
  grads.visit([&](const std::string&, const Var& v, bool) { g.push_back(v.grad()); });
  if (m_.empty()) {
    for (const auto& x : g) {
      m_.emplace_back(x.size(), 0.0);
      v_.emplace_back(x.size(), 0.0);
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  std::size_t k = 0;
  params.weights.visit([&](const std::string& name, NdArray& w, bool) {
    const auto& gk = g[k];
    if (gk.shape() != w.shape()) throw ShapeError("Adam: gradient shape mismatch for " + name);
    auto& m = m_[k];
    auto& v = v_[k];
    std::vector<double> updated = w.to_vector();
    for (std::size_t i = 0; i < updated.size(); ++i) {
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gk[i];
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gk[i] * gk[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      updated[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    w = NdArray(w.shape(), std::move(updated));
    ++k;
  });
}

namespace {

struct EpochLosses {
  double labeled = 0.0;
  double pseudo = 0.0;
};

struct TrainItem {
  const Example* example;
  bool pseudo;
};

// One shuffled pass in mini-batches; returns summed per-component losses.
EpochLosses run_epoch(ModelParams& params, Adam& adam, std::vector<TrainItem> items,
                      const LossWeights& weights, double lr, std::size_t batch_size, Rng& rng,
                      std::size_t epoch) {
  rng.shuffle(std::span<TrainItem>(items));
  EpochLosses losses;
  std::vector<Example> labeled;
  std::vector<Example> pseudo;
  for (std::size_t start = 0; start < items.size(); start += batch_size) {
    labeled.clear();
    pseudo.clear();
    const std::size_t end = std::min(items.size(), start + batch_size);
    for (std::size_t i = start; i < end; ++i) {
      (items[i].pseudo ? pseudo : labeled).push_back(*items[i].example);
    }
    const auto net = bind_parameters(params, true);
    const auto terms = total_loss(net, params.config, labeled, pseudo, weights, Mode::train, rng);
    const double value = terms.total.value().item();
    if (!std::isfinite(value)) {
      throw NumericError("training: non-finite loss at epoch " + std::to_string(epoch));
    }
    backward(terms.total);
    adam.step(params, net, lr);
    losses.labeled += terms.labeled;
    losses.pseudo += terms.pseudo;
  }
  return losses;
}

double weight_norm_sq(const ModelParams& params) {
  double acc = 0.0;
  params.weights.visit([&](const std::string&, const NdArray& t, bool is_weight) {
    if (!is_weight) return;
    for (double v : t.values()) acc += v * v;
  });
  return acc;
}

std::vector<Example> to_examples(const Dataset& ds, const char* what) {
  std::vector<Example> out;
  out.reserve(ds.size());
  for (const auto& t : ds.trials) {
    if (!t.label) throw DataError(std::string(what) + ": trial '" + t.id + "' has no label");
    out.push_back({t.data, *t.label});
  }
  return out;
}

}  // namespace

std::vector<std::size_t> predict_classes(const ModelParams& params, std::span<const Trial> trials) {
  std::vector<std::size_t> out;
  out.reserve(trials.size());
  Rng unused(0);
  for (const auto& t : trials) {
    const auto probs = model_predict(params, t.data, Mode::eval, unused);
    out.push_back(argmax(probs.values()));
  }
  return out;
}

double accuracy(const ModelParams& params, std::span<const Trial> trials,
                std::span<const std::size_t> truth) {
  if (trials.size() != truth.size() || trials.empty()) {
    throw DataError("accuracy: trials and truth must be non-empty and of equal length");
  }
  const auto pred = predict_classes(params, trials);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == truth[i];
  return static_cast<double>(hits) / static_cast<double>(pred.size());
}

PretrainResult pretrain(const Dataset& train, const Dataset& validation, const ModelConfig& model,
                        const SelfTrainConfig& config, const LossWeights& weights) {
  config.validate();
  model.validate();
  weights.validate();
  if (train.trials.empty()) throw DataError("pretrain: empty training set");
  const auto examples = to_examples(train, "pretrain");
  const auto val_examples = to_examples(validation, "pretrain validation");
  {
    std::vector<bool> seen(model.num_classes, false);
    std::size_t distinct = 0;
    for (const auto& ex : examples) {
      if (ex.label >= model.num_classes) {
        throw DataError("pretrain: label " + std::to_string(ex.label) + " out of range");
      }
      if (!seen[ex.label]) {
        seen[ex.label] = true;
        ++distinct;
      }
    }
    if (distinct < 2) throw DataError("pretrain: source data contains a single class");
  }

  Rng init_rng(Rng::derive(config.seed, "init"));
  PretrainResult result;
  ModelParams params = model_init(model, init_rng);
  Adam adam(config.adam);
  const std::uint64_t epoch_seed = Rng::derive(config.seed, "pretrain");
  double best = INFINITY;

  std::vector<TrainItem> items;
  for (const auto& ex : examples) items.push_back({&ex, false});

  for (std::size_t epoch = 1; epoch <= config.pretrain_epochs; ++epoch) {
    Rng rng(Rng::derive(epoch_seed, epoch));
    const auto losses = run_epoch(params, adam, items, weights, config.base_lr, config.batch_size,
                                  rng, epoch);
    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = losses.labeled / static_cast<double>(examples.size());
    double selection = m.train_loss;
    if (!val_examples.empty()) {
      NoGradGuard guard;
      const auto net = bind_parameters(params, false);
      double total = 0.0;
      std::size_t hits = 0;
      for (const auto& ex : val_examples) {
        const auto fwd = model_forward(net, model, ex.data, Mode::eval, {}, rng);
        total += softmax_cross_entropy(fwd.logits, ex.label).value().item();
        hits += argmax(fwd.probs.value().values()) == ex.label;
      }
      m.val_loss = total / static_cast<double>(val_examples.size());
      m.val_accuracy = static_cast<double>(hits) / static_cast<double>(val_examples.size());
      selection = m.val_loss;
    }
    if (!std::isfinite(selection)) {
      throw NumericError("pretrain: non-finite loss at epoch " + std::to_string(epoch));
    }
    result.history.push_back(m);
    if (selection < best) {
      best = selection;
      result.params = params;
      result.best_epoch = epoch;
    }
  }
  if (result.best_epoch == 0) result.params = params;
  return result;
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ConfigError("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

std::vector<PseudoLabel> assign_pseudo_labels(std::span<const RankedPrediction> predictions,
                                              std::size_t iteration) {
  if (predictions.empty()) throw DataError("assign_pseudo_labels: no predictions");
  std::vector<PseudoLabel> out;
  out.reserve(predictions.size());
  for (const auto& p : predictions) {
    out.push_back({p.trial_id, argmax(p.prediction.mean_probs), p.prediction.entropy,
                   p.prediction.mean_probs, iteration});
  }
  return out;
}

std::pair<std::vector<PseudoLabel>, std::vector<PseudoLabel>> select_k_most_confident(
    std::vector<PseudoLabel> ranked, std::size_t k) {
  for (std::size_t i = 1; i < ranked.size(); ++i) {
    const auto& a = ranked[i - 1];
    const auto& b = ranked[i];
    if (b.entropy < a.entropy || (b.entropy == a.entropy && b.trial_id < a.trial_id)) {
      throw ConfigError("select_k_most_confident: input not sorted by (entropy, trial id) at position " +
                        std::to_string(i));
    }
  }
  const std::size_t n = std::min(k, ranked.size());
  std::vector<PseudoLabel> rest(std::make_move_iterator(ranked.begin() + static_cast<std::ptrdiff_t>(n)),
                                std::make_move_iterator(ranked.end()));
  ranked.resize(n);
  return {std::move(ranked), std::move(rest)};
}

double lr_schedule(std::size_t iteration, double base) {
  if (iteration < 1) throw ConfigError("lr_schedule: iteration index starts at 1");
  return base * std::ldexp(1.0, -static_cast<int>(iteration / 2));
}

AdaptationResult self_train_loop(const ModelParams& pretrained, const Dataset& labeled,
                                 const Dataset& unlabeled, const SelfTrainConfig& config,
                                 const LossWeights& weights, const IterationCallback& on_iteration) {
  config.validate();
  weights.validate();
  if (unlabeled.trials.empty()) throw DataError("self_train_loop: empty unlabeled pool");
  const auto& model = pretrained.config;
  const std::vector<Example> labeled_examples = to_examples(labeled, "self_train_loop labeled set");
  const double threshold =
      config.convergence_entropy.value_or(std::log(static_cast<double>(model.num_classes)) - 1e-3);

  AdaptationResult result;
  result.params = pretrained;
  Adam adam(config.adam);

  std::unordered_map<std::string, std::size_t> position;
  for (std::size_t i = 0; i < unlabeled.size(); ++i) position[unlabeled.trials[i].id] = i;

  std::vector<Trial> pool = unlabeled.trials;
  std::vector<Example> pseudo_examples;
  pseudo_examples.reserve(unlabeled.size());
  std::vector<std::optional<PseudoLabel>> frozen(unlabeled.size());

  std::size_t n = 1;
  for (; n <= config.max_iterations; ++n) {
    if (pool.empty()) {
      result.history.stop_reason = "pool-exhausted";
      break;
    }
    try {
      const auto ranked =
          batch_uncertainty(result.params, pool, config.mc,
                            Rng::derive(Rng::derive(config.seed, "mc"), n), config.threads);
      if (ranked.front().prediction.entropy > threshold) {
        result.history.stop_reason = "converged";
        break;
      }
      auto [adopted, rest] =
          select_k_most_confident(assign_pseudo_labels(ranked, n), config.adopt_per_iteration);

      IterationRecord rec;
      rec.iteration = n;
      rec.pool_before = pool.size();
      for (const auto& pl : adopted) {
        const std::size_t idx = position.at(pl.trial_id);
        pseudo_examples.push_back({unlabeled.trials[idx].data, pl.label});
        frozen[idx] = pl;
        rec.adopted.push_back(pl.trial_id);
      }
      std::erase_if(pool, [&](const Trial& t) { return frozen[position.at(t.id)].has_value(); });
      rec.pool_after = pool.size();
      rec.learning_rate = lr_schedule(n, config.base_lr);

      std::vector<TrainItem> items;
      items.reserve(labeled_examples.size() + pseudo_examples.size());
      for (const auto& ex : labeled_examples) items.push_back({&ex, false});
      for (const auto& ex : pseudo_examples) items.push_back({&ex, true});
      const std::uint64_t iter_seed = Rng::derive(Rng::derive(config.seed, "retrain"), n);
      EpochLosses last;
      for (std::size_t epoch = 1; epoch <= config.epochs_per_iteration; ++epoch) {
        Rng rng(Rng::derive(iter_seed, epoch));
        last = run_epoch(result.params, adam, items, weights, rec.learning_rate, config.batch_size,
                         rng, epoch);
      }
      rec.labeled_loss = last.labeled;
      rec.pseudo_loss = last.pseudo;
      rec.total_loss = last.labeled + weights.alpha * last.pseudo +
                       weights.lambda * weight_norm_sq(result.params);
      result.history.iterations.push_back(rec);
      if (on_iteration) on_iteration(result.history.iterations.back());
    } catch (const Error& e) {
      const std::string msg = "self-training iteration " + std::to_string(n) + ": " + e.what();
      if (dynamic_cast<const NumericError*>(&e)) throw NumericError(msg);
      if (dynamic_cast<const DataError*>(&e)) throw DataError(msg);
      if (dynamic_cast<const ConfigError*>(&e)) throw ConfigError(msg);
      if (dynamic_cast<const ShapeError*>(&e)) throw ShapeError(msg);
      throw Error(msg);
    }
  }
  if (result.history.stop_reason.empty()) {
    result.history.stop_reason = pool.empty() ? "pool-exhausted" : "max-iterations";
  }

  std::unordered_map<std::string, PseudoLabel> final_labels;
  if (!pool.empty()) {
    const auto ranked = batch_uncertainty(result.params, pool, config.mc,
                                          Rng::derive(config.seed, "final-mc"), config.threads);
    for (auto& pl : assign_pseudo_labels(ranked, 0)) final_labels[pl.trial_id] = pl;
  }
  result.labels.reserve(unlabeled.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    result.labels.push_back(frozen[i] ? *frozen[i] : final_labels.at(unlabeled.trials[i].id));
  }
  return result;
}

void write_history_csv(const AdaptationHistory& history, std::ostream& out) {
  out << "iteration,labeled_loss,pseudo_loss,total_loss,pool_before,pool_after,learning_rate,adopted_ids\n";
  for (const auto& r : history.iterations) {
    out << r.iteration << ',' << csv::format(r.labeled_loss) << ',' << csv::format(r.pseudo_loss)
        << ',' << csv::format(r.total_loss) << ',' << r.pool_before << ',' << r.pool_after << ','
        << csv::format(r.learning_rate) << ',';
    for (std::size_t i = 0; i < r.adopted.size(); ++i) out << (i ? ";" : "") << r.adopted[i];
    out << '\n';
  }
}

void write_pseudo_labels_csv(std::span<const PseudoLabel> labels, std::size_t num_classes,
                             std::ostream& out) {
  out << "trial_id,class,entropy";
  for (std::size_t k = 0; k < num_classes; ++k) out << ",mean_prob_" << k;
  out << ",iteration_adopted\n";
  for (const auto& pl : labels) {
    out << pl.trial_id << ',' << pl.label << ',' << csv::format(pl.entropy);
    for (double p : pl.mean_probs) out << ',' << csv::format(p);
    out << ',' << pl.iteration_adopted << '\n';
  }
}

void write_epoch_csv(std::span<const EpochMetrics> history, std::ostream& out) {
  out << "epoch,train_loss,val_loss,val_accuracy\n";
  for (const auto& m : history) {
    out << m.epoch << ',' << csv::format(m.train_loss) << ',' << csv::format(m.val_loss) << ','
        << csv::format(m.val_accuracy) << '\n';
  }
}

}  // namespace kinadapt
