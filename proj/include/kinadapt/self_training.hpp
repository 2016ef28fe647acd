#pragma once

// Source pretraining and uncertainty-ranked self-training on an unlabeled
// target pool.
//
// Each self-training iteration n:
//   1. MC-dropout inference over the remaining pool
//   2. pseudo label = argmax of the mean class probability
//   3. adopt the k lowest-entropy trials (labels frozen from then on)
//   4. learning rate = base * 0.5^floor(n/2)
//   5. retrain on labeled + adopted trials, warm-starting from current params
// until the pool is empty, n == N, or every remaining trial is near maximal
// entropy.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "kinadapt/data.hpp"
#include "kinadapt/mc_dropout.hpp"
#include "kinadapt/model.hpp"

namespace kinadapt {

struct LossWeights {
  double alpha = 1.0;    // pseudo-label loss weight
  double lambda = 1e-8;  // L2 coefficient on weights (biases excluded)

  void validate() const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

struct SelfTrainConfig {
  std::size_t max_iterations = 10;        // N
  std::size_t adopt_per_iteration = 50;   // k
  McConfig mc;
  std::size_t pretrain_epochs = 100;
  std::size_t epochs_per_iteration = 100;
  std::size_t batch_size = 16;
  double base_lr = 0.001;
  AdamConfig adam;
  // Early stop when the lowest pool entropy exceeds this; unset means ln K - 1e-3.
  std::optional<double> convergence_entropy;
  std::uint64_t seed = 0;
  std::size_t threads = 1;

  void validate() const;
};

struct Example {
  NdArray data;
  std::size_t label = 0;
};

struct LossTerms {
  Var total;
  double labeled = 0.0;
  double pseudo = 0.0;
  double regularizer = 0.0;  // lambda * ||w||^2
};

// labeled CE sum + alpha * pseudo CE sum + lambda * ||weights||^2.
LossTerms total_loss(const SkillNetwork<Var>& net, const ModelConfig& config,
                     std::span<const Example> labeled, std::span<const Example> pseudo,
                     const LossWeights& weights, Mode mode, Rng& rng);

// Bias-corrected adaptive-moment updates over SkillNetwork::visit order.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}
  void step(ModelParams& params, const SkillNetwork<Var>& grads, double lr);
  std::size_t steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;   // mean CE per training trial
  double val_loss = 0.0;     // mean CE per validation trial, eval mode
  double val_accuracy = 0.0;
};

struct PretrainResult {
  ModelParams params;  // epoch with minimal validation loss
  std::vector<EpochMetrics> history;
  std::size_t best_epoch = 0;
};

// An empty `validation` set selects on training loss instead.
PretrainResult pretrain(const Dataset& train, const Dataset& validation, const ModelConfig& model,
                        const SelfTrainConfig& config, const LossWeights& weights = {});

// Eval-mode argmax class per trial.
std::vector<std::size_t> predict_classes(const ModelParams& params, std::span<const Trial> trials);
// Fraction of `truth` matched by eval-mode predictions.
double accuracy(const ModelParams& params, std::span<const Trial> trials,
                std::span<const std::size_t> truth);

struct PseudoLabel {
  std::string trial_id;
  std::size_t label = 0;
  double entropy = 0.0;
  std::vector<double> mean_probs;
  std::size_t iteration_adopted = 0;  // 0: never adopted
};

// argmax with first-index tiebreak.
std::size_t argmax(std::span<const double> values);

std::vector<PseudoLabel> assign_pseudo_labels(std::span<const RankedPrediction> predictions,
                                              std::size_t iteration);

// Splits off the first min(k, n) entries. Input must be sorted by
// (entropy, trial id).
std::pair<std::vector<PseudoLabel>, std::vector<PseudoLabel>> select_k_most_confident(
    std::vector<PseudoLabel> ranked, std::size_t k);

double lr_schedule(std::size_t iteration, double base);

struct IterationRecord {
  std::size_t iteration = 0;
  double labeled_loss = 0.0;
  double pseudo_loss = 0.0;
  double total_loss = 0.0;
  std::size_t pool_before = 0;
  std::size_t pool_after = 0;
  double learning_rate = 0.0;
  std::vector<std::string> adopted;
};

struct AdaptationHistory {
  std::vector<IterationRecord> iterations;
  std::string stop_reason;  // pool-exhausted | max-iterations | converged
};

struct AdaptationResult {
  ModelParams params;
  AdaptationHistory history;
  // One per target trial, in the target dataset's order.
  std::vector<PseudoLabel> labels;
};

using IterationCallback = std::function<void(const IterationRecord&)>;

AdaptationResult self_train_loop(const ModelParams& pretrained, const Dataset& labeled,
                                 const Dataset& unlabeled, const SelfTrainConfig& config,
                                 const LossWeights& weights, const IterationCallback& on_iteration = {});

// iteration,labeled_loss,pseudo_loss,total_loss,pool_before,pool_after,learning_rate,adopted_ids
void write_history_csv(const AdaptationHistory& history, std::ostream& out);
// trial_id,class,entropy,mean_prob_0..K-1,iteration_adopted
void write_pseudo_labels_csv(std::span<const PseudoLabel> labels, std::size_t num_classes,
                             std::ostream& out);
// epoch,train_loss,val_loss,val_accuracy
void write_epoch_csv(std::span<const EpochMetrics> history, std::ostream& out);

}  // namespace kinadapt
