#include "kinadapt/layers.hpp"

#include <cmath>
#include <string>

namespace kinadapt {

void DropoutSpec::validate() const {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw ConfigError("dropout rate must be in [0, 1), got " + std::to_string(rate));
  }
}

Var conv1d(const Var& input, const Conv1dWeights<Var>& params, Padding padding) {
  const Shape& k = params.kernel.shape();
  if (k.size() != 3) throw ShapeError("conv1d: kernel must be rank 3, got " + to_string(k));
  const std::size_t out_channels = k[0];
  const std::size_t in_channels = k[1];
  const std::size_t width = k[2];
  const Shape& s = input.shape();
  if (s.size() != 2 || s[0] != in_channels) {
    throw ShapeError("conv1d: input " + to_string(s) + " does not match kernel " + to_string(k));
  }
  if (s[1] == 0) throw ShapeError("conv1d: empty sequence");
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
  if (padding == Padding::same) {
    pad_left = (width - 1) / 2;
    pad_right = width - 1 - pad_left;
  } else if (s[1] < width) {
    throw ShapeError("conv1d: sequence length " + std::to_string(s[1]) +
                     " shorter than kernel width " + std::to_string(width));
  }
  const Var columns = unfold1d(input, width, pad_left, pad_right);
  const Var flat_kernel = reshape(params.kernel, Shape{out_channels, in_channels * width});
  return broadcast_add(matmul(flat_kernel, columns), params.bias, 0);
}

Var global_avg_pool(const Var& features) {
  if (features.shape().size() != 2) {
    throw ShapeError("global_avg_pool: expected {channels, time}, got " + to_string(features.shape()));
  }
  if (features.shape()[1] == 0) throw ShapeError("global_avg_pool: empty time axis");
  return mean(features, 1);
}

LstmOutput lstm(const Var& sequence, const LstmWeights<Var>& params, bool reverse) {
  const Shape& s = sequence.shape();
  const Shape& wi = params.w_ih.shape();
  if (wi.size() != 2 || wi[0] % 4 != 0) throw ShapeError("lstm: malformed w_ih " + to_string(wi));
  const std::size_t hidden = wi[0] / 4;
  if (s.size() != 2 || s[0] != wi[1]) {
    throw ShapeError("lstm: input " + to_string(s) + " does not match w_ih " + to_string(wi));
  }
  if (params.w_hh.shape() != Shape{4 * hidden, hidden} || params.bias.shape() != Shape{4 * hidden}) {
    throw ShapeError("lstm: inconsistent w_hh " + to_string(params.w_hh.shape()) + " / bias " +
                     to_string(params.bias.shape()));
  }
  const std::size_t time = s[1];
  if (time == 0) throw ShapeError("lstm: empty sequence");

  // Input projections for every timestep at once: {4H, T}.
  const Var projected = broadcast_add(matmul(params.w_ih, sequence), params.bias, 0);

  std::vector<Var> states(time);
  Var h;
  Var c;
  for (std::size_t step = 0; step < time; ++step) {
    const std::size_t t = reverse ? time - 1 - step : step;
    Var gates = reshape(slice(projected, 1, t, t + 1), Shape{4 * hidden});
    if (h) gates = add(gates, matmul(params.w_hh, h));
    const Var i = sigmoid(slice(gates, 0, 0, hidden));
    const Var f = sigmoid(slice(gates, 0, hidden, 2 * hidden));
    const Var g = tanh(slice(gates, 0, 2 * hidden, 3 * hidden));
    const Var o = sigmoid(slice(gates, 0, 3 * hidden, 4 * hidden));
    c = c ? add(multiply(f, c), multiply(i, g)) : multiply(i, g);
    h = multiply(o, tanh(c));
    states[t] = reshape(h, Shape{hidden, 1});
  }
  return LstmOutput{concat(states, 1), h};
}

Var bilstm(const Var& sequence, const LstmWeights<Var>& fwd, const LstmWeights<Var>& bwd) {
  const auto f = lstm(sequence, fwd, false);
  const auto b = lstm(sequence, bwd, true);
  return concat({f.final_state, b.final_state}, 0);
}

Var bilstm_sequence(const Var& sequence, const LstmWeights<Var>& fwd,
                    const LstmWeights<Var>& bwd) {
  const auto f = lstm(sequence, fwd, false);
  const auto b = lstm(sequence, bwd, true);
  return concat({f.sequence, b.sequence}, 0);
}

Var dropout(const Var& input, const DropoutSpec& spec, Rng& rng) {
  spec.validate();
  if (spec.mode == DropoutMode::eval || spec.rate == 0.0) return input;
  const double keep_scale = 1.0 / (1.0 - spec.rate);
  std::vector<double> mask(input.value().size());
  for (auto& m : mask) m = rng.uniform() < spec.rate ? 0.0 : keep_scale;
  return multiply(input, constant(NdArray(input.shape(), std::move(mask))));
}

Var dense(const Var& input, const DenseWeights<Var>& params) {
  const Shape& w = params.weight.shape();
  if (input.shape().size() != 1 || w.size() != 2 || w[1] != input.shape()[0] ||
      params.bias.shape() != Shape{w[0]}) {
    throw ShapeError("dense: input " + to_string(input.shape()) + " vs weight " + to_string(w) +
                     " / bias " + to_string(params.bias.shape()));
  }
  return add(matmul(params.weight, input), params.bias);
}

NdArray softmax(const NdArray& logits) {
  NoGradGuard guard;
  return kinadapt::softmax(constant(logits)).value();
}

namespace {

NdArray uniform_array(Shape shape, double bound, Rng& rng) {
  std::vector<double> values(element_count(shape));
  for (auto& v : values) v = rng.uniform(-bound, bound);
  return NdArray(std::move(shape), std::move(values));
}

}  // namespace

Conv1dWeights<NdArray> init_conv1d(std::size_t in_channels, std::size_t out_channels,
                                   std::size_t width, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_channels * width));
  return {uniform_array(Shape{out_channels, in_channels, width}, bound, rng),
          NdArray::zeros(Shape{out_channels})};
}

LstmWeights<NdArray> init_lstm(std::size_t input_size, std::size_t hidden, Rng& rng) {
  auto w_ih = uniform_array(Shape{4 * hidden, input_size},
                            1.0 / std::sqrt(static_cast<double>(input_size)), rng);
  auto w_hh = uniform_array(Shape{4 * hidden, hidden},
                            1.0 / std::sqrt(static_cast<double>(hidden)), rng);
  std::vector<double> bias(4 * hidden, 0.0);
  for (std::size_t j = hidden; j < 2 * hidden; ++j) bias[j] = 1.0;  // forget gate
  return {std::move(w_ih), std::move(w_hh), NdArray::vector(std::move(bias))};
}

DenseWeights<NdArray> init_dense(std::size_t in, std::size_t out, Rng& rng) {
  return {uniform_array(Shape{out, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng),
          NdArray::zeros(Shape{out})};
}

}  // namespace kinadapt
