#include "prevalens/optim.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace prevalens {

void adam_step(const std::vector<TensorPtr>& params, AdamState& state) {
  if (state.first_moment.empty()) {
    state.first_moment.resize(params.size());
    state.second_moment.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i]->size(), 0.0);
      state.second_moment[i].assign(params[i]->size(), 0.0);
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " +
                                std::to_string(state.first_moment.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }

  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(state.beta1, t);
  const double bc2 = 1.0 - std::pow(state.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    if (p.grad.size() != p.values.size()) {
      throw std::invalid_argument("adam_step: parameter " + std::to_string(i) +
                                  " has no populated grad");
    }
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    if (m.size() != p.values.size()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for parameter " +
                                  std::to_string(i));
    }
    for (std::size_t j = 0; j < p.values.size(); ++j) {
      const double g = p.grad[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p.values[j] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
      p.values[j] -= state.learning_rate * state.weight_decay * p.values[j];
    }
  }
}

}  // namespace prevalens
