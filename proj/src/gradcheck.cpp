#include "prevalens/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace prevalens {

GradCheckReport gradient_check(const std::function<TensorPtr()>& forward,
                               const std::vector<TensorPtr>& params, double tolerance, Rng& rng,
                               std::size_t coords_per_param) {
  GradCheckReport report;

  zero_grads(params);
  backward(forward());
  std::vector<std::vector<double>> autodiff(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    params[i]->ensure_grad();
    autodiff[i] = params[i]->grad;
  }

  const double h = 1e-5;
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    std::vector<std::size_t> coords(p.size());
    for (std::size_t j = 0; j < coords.size(); ++j) coords[j] = j;
    if (coords.size() > coords_per_param) {
      rng.shuffle(coords);
      coords.resize(coords_per_param);
    }
    auto eval = [&forward] {
      auto loss = forward();
      const double v = loss->item();
      release_graph(loss);
      return v;
    };
    for (std::size_t j : coords) {
      const double saved = p.values[j];
      p.values[j] = saved + h;
      const double up = eval();
      p.values[j] = saved - h;
      const double down = eval();
      p.values[j] = saved;

      const double fd = (up - down) / (2.0 * h);
      const double ad = autodiff[i][j];
      const double rel = std::abs(fd - ad) / std::max({std::abs(fd), std::abs(ad), 1e-8});
      report.max_rel_error = std::max(report.max_rel_error, rel);
      ++report.coords_checked;
      if (rel > tolerance) {
        report.passed = false;
        std::ostringstream os;
        os << "param " << i << " coord " << j << ": ad=" << ad << ", fd=" << fd
           << ", rel=" << rel;
        report.failures.push_back(os.str());
      }
    }
  }
  return report;
}

}  // namespace prevalens
