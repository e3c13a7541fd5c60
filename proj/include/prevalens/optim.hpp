#pragma once

#include <vector>

#include "prevalens/tensor.hpp"

namespace prevalens {

// Adam with decoupled weight decay. Moment buffers are allocated lazily on
// the first step and stay aligned with the parameter list.
struct AdamState {
  std::size_t step_count = 0;
  double learning_rate = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

// One bias-corrected Adam update over `params`, reading each tensor's grad.
// Weight decay is applied as a separate shrink (p -= lr * wd * p) alongside
// the gradient step. Throws if any parameter has no populated grad.
void adam_step(const std::vector<TensorPtr>& params, AdamState& state);

}  // namespace prevalens
