#pragma once

#include <utility>
#include <vector>

#include "prevalens/tensor.hpp"

namespace prevalens {

// Gate parameters of one LSTM direction. Each weight matrix has shape
// (hidden_dim, input_dim + hidden_dim): gates read the concatenation
// [x_t ; h_{t-1}].
struct LstmParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  TensorPtr w_input, w_forget, w_output, w_candidate;   // (H, I+H)
  TensorPtr b_input, b_forget, b_output, b_candidate;   // (H)

  std::vector<TensorPtr> parameters() const {
    return {w_input, w_forget, w_output, w_candidate,
            b_input, b_forget, b_output, b_candidate};
  }
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)], zero biases,
// forget-gate bias set to 1.
LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);

// One step of the standard LSTM recurrence, composed from primitive ops.
std::pair<TensorPtr, TensorPtr> lstm_cell_step(const LstmParams& params, const TensorPtr& x_t,
                                               const TensorPtr& h_prev, const TensorPtr& c_prev);

// Runs the whole recurrence over `sequence` (reversed when reverse=true) and
// returns the final hidden state. Implemented as a single fused graph node
// with hand-rolled backpropagation through time; must agree with chaining
// lstm_cell_step (covered by tests and the finite-difference checks).
TensorPtr lstm_encode(const LstmParams& params, const std::vector<TensorPtr>& sequence,
                      bool reverse);

// Bidirectional encoding: concatenation of the two directions' final hidden
// states, length 2 * hidden_dim.
TensorPtr bilstm_encode(const LstmParams& fwd, const LstmParams& bwd,
                        const std::vector<TensorPtr>& sequence);

enum class Activation { Identity, Relu, Sigmoid, Tanh };

struct DenseLayer {
  TensorPtr weights;  // (out, in)
  TensorPtr bias;     // (out)
  Activation activation = Activation::Relu;
  double dropout_rate = 0.0;

  std::vector<TensorPtr> parameters() const { return {weights, bias}; }
};

DenseLayer init_dense(std::size_t in_dim, std::size_t out_dim, Activation act, double dropout_rate,
                      Rng& rng);

// affine -> activation -> dropout, chained. Accepts rank-1 input or a rank-2
// batch (one row per example). rng may be null when !training.
TensorPtr dense_dropout_stack(const TensorPtr& x, const std::vector<DenseLayer>& layers,
                              bool training, Rng* rng);

}  // namespace prevalens
