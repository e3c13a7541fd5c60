#pragma once

#include <functional>
#include <string>
#include <vector>

#include "prevalens/tensor.hpp"

namespace prevalens {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  bool passed = true;
  std::vector<std::string> failures;  // "param 2 coord 17: ad=..., fd=..."
};

// Compares reverse-mode gradients against central finite differences
// (h = 1e-5) on a random subset of at least `coords_per_param` coordinates
// per parameter (all of them for small tensors). `forward` must be a
// deterministic function of the current parameter values (dropout disabled,
// fixed inputs) returning a scalar loss. Relative error uses
// |fd - ad| / max(|fd|, |ad|, 1e-8).
GradCheckReport gradient_check(const std::function<TensorPtr()>& forward,
                               const std::vector<TensorPtr>& params, double tolerance, Rng& rng,
                               std::size_t coords_per_param = 50);

}  // namespace prevalens
