#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "prevalens/rng.hpp"

namespace prevalens {

class Tensor;
using TensorPtr = std::shared_ptr<Tensor>;

// Dense row-major tensor of doubles with reverse-mode autodiff.
//
// Every operation that consumes tensors records its parents and a backward
// rule on the result; backward(loss) replays the rules in reverse
// topological order. Gradients accumulate across backward calls until
// zero_grad() is invoked.
class Tensor : public std::enable_shared_from_this<Tensor> {
 public:
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty until first touched by backward
  bool requires_grad = false;

  // graph edges; backward_fn reads this->grad and accumulates into parents
  std::vector<TensorPtr> parents;
  std::function<void()> backward_fn;

  Tensor() = default;
  Tensor(std::vector<std::size_t> shape_, std::vector<double> values_, bool requires_grad_ = false);

  std::size_t size() const { return values.size(); }
  std::size_t rank() const { return shape.size(); }
  bool is_scalar() const { return values.size() == 1; }
  double item() const;

  // rank-2 helpers
  std::size_t rows() const;
  std::size_t cols() const;
  double& at(std::size_t r, std::size_t c) { return values[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols() + c]; }

  void ensure_grad();
  void zero_grad();

  static TensorPtr create(std::vector<std::size_t> shape, std::vector<double> values,
                          bool requires_grad = false);
  static TensorPtr zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static TensorPtr scalar(double v, bool requires_grad = false);
  static TensorPtr vector(std::vector<double> v, bool requires_grad = false);
  // uniform init in [lo, hi] from the shared generator
  static TensorPtr uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                           bool requires_grad = true);
};

std::string shape_str(const std::vector<std::size_t>& s);

// ---- primitive ops (all differentiable) ----

TensorPtr add(const TensorPtr& a, const TensorPtr& b);            // elementwise, equal shapes
TensorPtr add_rowwise(const TensorPtr& m, const TensorPtr& v);    // (r,c) + (c) broadcast over rows
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);            // elementwise, equal shapes
TensorPtr scale(const TensorPtr& a, double k);
TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);         // (m,n)x(n,k) or (m,n)x(n)
TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b);      // a * b^T, both rank-2
TensorPtr concat(const std::vector<TensorPtr>& parts);            // rank-1 concatenation
TensorPtr row(const TensorPtr& m, std::size_t r);                 // rank-1 view copy of matrix row
TensorPtr sum(const TensorPtr& a);
TensorPtr sigmoid(const TensorPtr& a);
TensorPtr tanh_op(const TensorPtr& a);
TensorPtr relu(const TensorPtr& a);
TensorPtr softmax(const TensorPtr& a);                            // last axis; rank-1 or rank-2
TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target);

// Inverted dropout: kept units are scaled by 1/(1-rate) during training so
// that evaluation mode is the identity. rng may be null when !training.
TensorPtr dropout(const TensorPtr& a, double rate, bool training, Rng* rng);

// Reverse topological traversal from a scalar loss; accumulates grads.
// Releases the graph edges afterwards (parameter grads are kept).
void backward(const TensorPtr& loss);

// Iteratively clears graph edges reachable from head so that teardown of
// deep graphs cannot overflow the stack. Safe to call on any tensor.
void release_graph(const TensorPtr& head);

void zero_grads(const std::vector<TensorPtr>& params);

// numerically stable scalar logistic
double sigmoid_scalar(double x);

}  // namespace prevalens
