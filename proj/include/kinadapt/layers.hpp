#pragma once

// Neural building blocks composed from tensor primitives. Sequences are laid
// out features x time, matching the channels x time layout of trials.

#include <cstddef>

#include "kinadapt/rng.hpp"
#include "kinadapt/tensor.hpp"

namespace kinadapt {

enum class Padding { same, valid };
enum class DropoutMode { train, eval, mc };

struct DropoutSpec {
  double rate = 0.0;
  DropoutMode mode = DropoutMode::eval;

  void validate() const;
};

// kernel {out, in, width}; bias {out}.
template <class T>
struct Conv1dWeights {
  T kernel;
  T bias;
};

// Gate blocks stacked in the order input, forget, cell, output.
// w_ih {4H, F}; w_hh {4H, H}; bias {4H}.
template <class T>
struct LstmWeights {
  T w_ih;
  T w_hh;
  T bias;
};

// weight {out, in}; bias {out}.
template <class T>
struct DenseWeights {
  T weight;
  T bias;
};

Var conv1d(const Var& input, const Conv1dWeights<Var>& params, Padding padding);

// {C, T} -> {C}
Var global_avg_pool(const Var& features);

struct LstmOutput {
  Var sequence;     // {H, T}, aligned with input time
  Var final_state;  // {H}
};

// One direction. With `reverse` the recurrence runs from the last timestep
// to the first; the returned sequence is still indexed by input time.
LstmOutput lstm(const Var& sequence, const LstmWeights<Var>& params, bool reverse);

// Concatenated final hidden states {2H}.
Var bilstm(const Var& sequence, const LstmWeights<Var>& fwd, const LstmWeights<Var>& bwd);
// Full bidirectional output {2H, T}.
Var bilstm_sequence(const Var& sequence, const LstmWeights<Var>& fwd,
                    const LstmWeights<Var>& bwd);

// Inverted dropout: survivors scaled by 1/(1-rate); eval mode and rate 0
// return the input node unchanged.
Var dropout(const Var& input, const DropoutSpec& spec, Rng& rng);

Var dense(const Var& input, const DenseWeights<Var>& params);

NdArray softmax(const NdArray& logits);

Conv1dWeights<NdArray> init_conv1d(std::size_t in_channels, std::size_t out_channels,
                                   std::size_t width, Rng& rng);
LstmWeights<NdArray> init_lstm(std::size_t input_size, std::size_t hidden, Rng& rng);
DenseWeights<NdArray> init_dense(std::size_t in, std::size_t out, Rng& rng);

}  // namespace kinadapt
