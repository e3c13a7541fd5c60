#include "prevalens/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <unordered_set>

namespace prevalens {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape != b.shape) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                                " vs " + shape_str(b.shape));
  }
}

bool any_requires_grad(const std::vector<TensorPtr>& parents) {
  for (const auto& p : parents)
    if (p->requires_grad) return true;
  return false;
}

// Wires a result node into the graph. fn is stored only when some parent
// needs gradients, so pure-constant subgraphs stay closure-free.
TensorPtr make_node(std::vector<std::size_t> shape, std::vector<double> values,
                    std::vector<TensorPtr> parents, std::function<void()> fn) {
  auto out = Tensor::create(std::move(shape), std::move(values));
  if (any_requires_grad(parents)) {
    out->requires_grad = true;
    out->parents = std::move(parents);
    out->backward_fn = std::move(fn);
  }
  return out;
}

}  // namespace

std::string shape_str(const std::vector<std::size_t>& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor::Tensor(std::vector<std::size_t> shape_, std::vector<double> values_, bool requires_grad_)
    : shape(std::move(shape_)), values(std::move(values_)), requires_grad(requires_grad_) {
  if (shape_numel(shape) != values.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_str(shape) + " does not match " +
                                std::to_string(values.size()) + " values");
  }
}

double Tensor::item() const {
  if (!is_scalar()) throw std::invalid_argument("Tensor::item: tensor is not a scalar");
  return values[0];
}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::rows: rank-2 required");
  return shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("Tensor::cols: rank-2 required");
  return shape[1];
}

void Tensor::ensure_grad() {
  if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
}

void Tensor::zero_grad() { grad.assign(values.size(), 0.0); }

TensorPtr Tensor::create(std::vector<std::size_t> shape, std::vector<double> values,
                         bool requires_grad) {
  return std::make_shared<Tensor>(std::move(shape), std::move(values), requires_grad);
}

TensorPtr Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return create(std::move(shape), std::move(v), requires_grad);
}

TensorPtr Tensor::scalar(double v, bool requires_grad) {
  return create({1}, {v}, requires_grad);
}

TensorPtr Tensor::vector(std::vector<double> v, bool requires_grad) {
  std::size_t n = v.size();
  return create({n}, std::move(v), requires_grad);
}

TensorPtr Tensor::uniform(std::vector<std::size_t> shape, double lo, double hi, Rng& rng,
                          bool requires_grad) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return create(std::move(shape), std::move(v), requires_grad);
}

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// ---- ops ----

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "add");
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] + b->values[i];
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a, b}, [a, b, out_holder] {
    Tensor* out = *out_holder;
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += out->grad[i];
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr add_rowwise(const TensorPtr& m, const TensorPtr& v) {
  if (m->rank() != 2 || v->rank() != 1 || m->cols() != v->size()) {
    throw std::invalid_argument("add_rowwise: need (r,c) + (c), got " + shape_str(m->shape) +
                                " + " + shape_str(v->shape));
  }
  const std::size_t r = m->rows(), c = m->cols();
  std::vector<double> out_v(m->values);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out_v[i * c + j] += v->values[j];
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(m->shape, std::move(out_v), {m, v}, [m, v, r, c, out_holder] {
    Tensor* out = *out_holder;
    if (m->requires_grad) {
      m->ensure_grad();
      for (std::size_t i = 0; i < r * c; ++i) m->grad[i] += out->grad[i];
    }
    if (v->requires_grad) {
      v->ensure_grad();
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v->grad[j] += out->grad[i * c + j];
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "mul");
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] * b->values[i];
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a, b}, [a, b, out_holder] {
    Tensor* out = *out_holder;
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += b->values[i] * out->grad[i];
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < out->grad.size(); ++i) b->grad[i] += a->values[i] * out->grad[i];
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr scale(const TensorPtr& a, double k) {
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = k * a->values[i];
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, k, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += k * out->grad[i];
  });
  *out_holder = out.get();
  return out;
}

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || (b->rank() != 1 && b->rank() != 2)) {
    throw std::invalid_argument("matmul: need (m,n)x(n,k) or (m,n)x(n), got " +
                                shape_str(a->shape) + " x " + shape_str(b->shape));
  }
  const std::size_t m = a->shape[0], n = a->shape[1];
  const bool vec = b->rank() == 1;
  const std::size_t k = vec ? 1 : b->shape[1];
  if ((vec ? b->shape[0] : b->shape[0]) != n) {
    throw std::invalid_argument("matmul: inner dimension mismatch " + shape_str(a->shape) +
                                " x " + shape_str(b->shape));
  }
  std::vector<double> v(m * k, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a->values.data() + i * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double aij = arow[j];
      const double* brow = b->values.data() + j * k;
      double* vrow = v.data() + i * k;
      for (std::size_t l = 0; l < k; ++l) vrow[l] += aij * brow[l];
    }
  }
  std::vector<std::size_t> out_shape = vec ? std::vector<std::size_t>{m}
                                           : std::vector<std::size_t>{m, k};
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(std::move(out_shape), std::move(v), {a, b}, [a, b, m, n, k, out_holder] {
    Tensor* out = *out_holder;
    // dA += dC * B^T ; dB += A^T * dC
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0.0;
          const double* brow = b->values.data() + j * k;
          const double* grow = out->grad.data() + i * k;
          for (std::size_t l = 0; l < k; ++l) s += grow[l] * brow[l];
          a->grad[i * n + j] += s;
        }
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a->values.data() + i * n;
        const double* grow = out->grad.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          double* brow = b->grad.data() + j * k;
          const double aij = arow[j];
          for (std::size_t l = 0; l < k; ++l) brow[l] += aij * grow[l];
        }
      }
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->shape[1] != b->shape[1]) {
    throw std::invalid_argument("matmul_nt: need (m,n) x (k,n), got " + shape_str(a->shape) +
                                " x " + shape_str(b->shape) + "^T");
  }
  const std::size_t m = a->shape[0], n = a->shape[1], k = b->shape[0];
  std::vector<double> v(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a->values.data() + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const double* brow = b->values.data() + j * n;
      double s = 0.0;
      for (std::size_t l = 0; l < n; ++l) s += arow[l] * brow[l];
      v[i * k + j] = s;
    }
  }
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node({m, k}, std::move(v), {a, b}, [a, b, m, n, k, out_holder] {
    Tensor* out = *out_holder;
    // C = A B^T : dA += dC * B ; dB += dC^T * A
    if (a->requires_grad) {
      a->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double g = out->grad[i * k + j];
          if (g == 0.0) continue;
          const double* brow = b->values.data() + j * n;
          double* arow = a->grad.data() + i * n;
          for (std::size_t l = 0; l < n; ++l) arow[l] += g * brow[l];
        }
    }
    if (b->requires_grad) {
      b->ensure_grad();
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < k; ++j) {
          const double g = out->grad[i * k + j];
          if (g == 0.0) continue;
          const double* arow = a->values.data() + i * n;
          double* brow = b->grad.data() + j * n;
          for (std::size_t l = 0; l < n; ++l) brow[l] += g * arow[l];
        }
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr concat(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p->rank() != 1) throw std::invalid_argument("concat: rank-1 tensors required");
    total += p->size();
  }
  std::vector<double> v;
  v.reserve(total);
  for (const auto& p : parts) v.insert(v.end(), p->values.begin(), p->values.end());
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node({total}, std::move(v), parts, [parts, out_holder] {
    Tensor* out = *out_holder;
    std::size_t off = 0;
    for (const auto& p : parts) {
      if (p->requires_grad) {
        p->ensure_grad();
        for (std::size_t i = 0; i < p->size(); ++i) p->grad[i] += out->grad[off + i];
      }
      off += p->size();
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr row(const TensorPtr& m, std::size_t r) {
  if (m->rank() != 2 || r >= m->rows()) {
    throw std::invalid_argument("row: index " + std::to_string(r) + " out of range for " +
                                shape_str(m->shape));
  }
  const std::size_t c = m->cols();
  std::vector<double> v(m->values.begin() + r * c, m->values.begin() + (r + 1) * c);
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node({c}, std::move(v), {m}, [m, r, c, out_holder] {
    Tensor* out = *out_holder;
    m->ensure_grad();
    for (std::size_t j = 0; j < c; ++j) m->grad[r * c + j] += out->grad[j];
  });
  *out_holder = out.get();
  return out;
}

TensorPtr sum(const TensorPtr& a) {
  double s = 0.0;
  for (double x : a->values) s += x;
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node({1}, {s}, {a}, [a, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < a->size(); ++i) a->grad[i] += out->grad[0];
  });
  *out_holder = out.get();
  return out;
}

TensorPtr sigmoid(const TensorPtr& a) {
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = sigmoid_scalar(a->values[i]);
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i) {
      const double y = out->values[i];
      a->grad[i] += y * (1.0 - y) * out->grad[i];
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr tanh_op(const TensorPtr& a) {
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::tanh(a->values[i]);
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i) {
      const double y = out->values[i];
      a->grad[i] += (1.0 - y * y) * out->grad[i];
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr relu(const TensorPtr& a) {
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a->values[i] > 0.0 ? a->values[i] : 0.0;
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i)
      if (a->values[i] > 0.0) a->grad[i] += out->grad[i];
  });
  *out_holder = out.get();
  return out;
}

namespace {
// softmax over one contiguous row; max-shifted for stability
void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, in[i]);
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(in[i] - mx);
    s += out[i];
  }
  for (std::size_t i = 0; i < n; ++i) out[i] /= s;
}
}  // namespace

TensorPtr softmax(const TensorPtr& a) {
  if (a->rank() != 1 && a->rank() != 2) {
    throw std::invalid_argument("softmax: rank-1 or rank-2 required, got " + shape_str(a->shape));
  }
  const std::size_t n = a->shape.back();
  const std::size_t nrows = a->size() / n;
  if (n == 0) throw std::invalid_argument("softmax: empty last axis");
  std::vector<double> v(a->size());
  for (std::size_t r = 0; r < nrows; ++r) softmax_row(a->values.data() + r * n, v.data() + r * n, n);
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, n, nrows, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    // dx_i = y_i * (g_i - sum_j g_j y_j), per row
    for (std::size_t r = 0; r < nrows; ++r) {
      const double* y = out->values.data() + r * n;
      const double* g = out->grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
      double* dx = a->grad.data() + r * n;
      for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr mse_loss(const TensorPtr& pred, const TensorPtr& target) {
  check_same_shape(*pred, *target, "mse_loss");
  const std::size_t n = pred->size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred->values[i] - target->values[i];
    s += d * d;
  }
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node({1}, {s / static_cast<double>(n)}, {pred, target},
                       [pred, target, n, out_holder] {
    Tensor* out = *out_holder;
    const double g = out->grad[0] * 2.0 / static_cast<double>(n);
    if (pred->requires_grad) {
      pred->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        pred->grad[i] += g * (pred->values[i] - target->values[i]);
    }
    if (target->requires_grad) {
      target->ensure_grad();
      for (std::size_t i = 0; i < n; ++i)
        target->grad[i] -= g * (pred->values[i] - target->values[i]);
    }
  });
  *out_holder = out.get();
  return out;
}

TensorPtr dropout(const TensorPtr& a, double rate, bool training, Rng* rng) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("dropout: rate must be in [0,1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return a;  // evaluation mode is the identity
  if (rng == nullptr) throw std::invalid_argument("dropout: training mode needs a generator");
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<std::vector<double>>(a->size());
  std::vector<double> v(a->size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    (*mask)[i] = rng->bernoulli(keep) ? 1.0 / keep : 0.0;
    v[i] = a->values[i] * (*mask)[i];
  }
  auto out_holder = std::make_shared<Tensor*>(nullptr);
  auto out = make_node(a->shape, std::move(v), {a}, [a, mask, out_holder] {
    Tensor* out = *out_holder;
    a->ensure_grad();
    for (std::size_t i = 0; i < out->grad.size(); ++i) a->grad[i] += (*mask)[i] * out->grad[i];
  });
  *out_holder = out.get();
  return out;
}

namespace {

// iterative post-order DFS over parents
std::vector<Tensor*> topo_order(Tensor* head) {
  std::vector<Tensor*> order;
  std::unordered_set<Tensor*> visited;
  std::vector<std::pair<Tensor*, std::size_t>> stack;
  stack.emplace_back(head, 0);
  visited.insert(head);
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (idx < node->parents.size()) {
      Tensor* next = node->parents[idx++].get();
      if (visited.insert(next).second) stack.emplace_back(next, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;  // parents precede children
}

}  // namespace

void backward(const TensorPtr& loss) {
  if (!loss->is_scalar()) {
    throw std::invalid_argument("backward: loss must be scalar, got " + shape_str(loss->shape));
  }
  auto order = topo_order(loss.get());
  loss->ensure_grad();
  loss->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
  // break the closure chains so teardown is iterative
  for (Tensor* t : order) {
    t->backward_fn = nullptr;
    t->parents.clear();
  }
}

void release_graph(const TensorPtr& head) {
  auto order = topo_order(head.get());
  for (Tensor* t : order) {
    t->backward_fn = nullptr;
    t->parents.clear();
  }
}

void zero_grads(const std::vector<TensorPtr>& params) {
  for (const auto& p : params) p->zero_grad();
}

}  // namespace prevalens
