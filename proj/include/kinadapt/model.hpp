#pragma once

// Parallel convolutional / recurrent skill classifier.
//
//   input {C, T}
//     conv branch:  conv1 -> relu -> dropout -> conv2 -> relu -> dropout -> avg pool
//     rec. branch:  bilstm1 (sequence) -> bilstm2 (final states) -> dropout
//   concat -> dense -> relu -> classifier -> softmax

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "kinadapt/layers.hpp"

namespace kinadapt {

struct ModelConfig {
  std::size_t in_channels = 48;
  std::array<std::size_t, 2> conv_filters{64, 64};
  std::array<std::size_t, 2> kernel_widths{5, 5};
  double conv_dropout = 0.2;
  std::size_t lstm_hidden = 64;
  double lstm_dropout = 0.5;
  std::size_t dense_units = 64;
  std::size_t num_classes = 2;

  void validate() const;
  std::size_t min_sequence_length() const;
  std::map<std::string, std::string> to_key_values() const;
  static ModelConfig from_key_values(const std::map<std::string, std::string>& kv);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <class T>
struct SkillNetwork {
  Conv1dWeights<T> conv1, conv2;
  LstmWeights<T> lstm1_fwd, lstm1_bwd, lstm2_fwd, lstm2_bwd;
  DenseWeights<T> dense, classifier;

  // Visits (name, tensor, is_weight) in the fixed checkpoint order.
  // Biases report is_weight = false.
  template <class F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <class F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

 private:
  template <class Self, class F>
  static void visit_impl(Self& self, F& f) {
    f("conv1.kernel", self.conv1.kernel, true);
    f("conv1.bias", self.conv1.bias, false);
    f("conv2.kernel", self.conv2.kernel, true);
    f("conv2.bias", self.conv2.bias, false);
    auto lstm = [&f](const char* name, auto& w) {
      const std::string n(name);
      f(n + ".w_ih", w.w_ih, true);
      f(n + ".w_hh", w.w_hh, true);
      f(n + ".bias", w.bias, false);
    };
    lstm("lstm1_fwd", self.lstm1_fwd);
    lstm("lstm1_bwd", self.lstm1_bwd);
    lstm("lstm2_fwd", self.lstm2_fwd);
    lstm("lstm2_bwd", self.lstm2_bwd);
    f("dense.weight", self.dense.weight, true);
    f("dense.bias", self.dense.bias, false);
    f("classifier.weight", self.classifier.weight, true);
    f("classifier.bias", self.classifier.bias, false);
  }
};

struct ModelParams {
  ModelConfig config;
  SkillNetwork<NdArray> weights;

  std::size_t parameter_count() const;
  // Throws ShapeError when a tensor disagrees with `config`.
  void validate_shapes() const;
  std::vector<NdArray> tensors() const;
};

enum class Mode { train, eval, mc };

// Dropout rates applied in train/mc mode.
struct DropoutRates {
  double conv = 0.0;
  double recurrent = 0.0;
};

struct ForwardResult {
  Var logits;
  Var probs;
};

ModelParams model_init(const ModelConfig& config, Rng& rng);

// Leaf nodes for every tensor; `trainable` marks them as requiring gradients.
SkillNetwork<Var> bind_parameters(const ModelParams& params, bool trainable);

ForwardResult model_forward(const SkillNetwork<Var>& net, const ModelConfig& config,
                            const NdArray& trial, Mode mode, const DropoutRates& rates, Rng& rng);

// Convenience forward without graph recording; train/mc use the config rates.
NdArray model_predict(const ModelParams& params, const NdArray& trial, Mode mode, Rng& rng);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> serialize_checkpoint(const ModelParams& params);
ModelParams deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);
void model_save(const ModelParams& params, const std::filesystem::path& path);
ModelParams model_load(const std::filesystem::path& path);

}  // namespace kinadapt
