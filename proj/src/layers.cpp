#include "prevalens/layers.hpp"

#include "prevalens/vecmath.hpp"

#if defined(__x86_64__) && defined(__GNUC__)
#include <immintrin.h>
#endif

#include <cmath>
#include <stdexcept>

namespace prevalens {

LstmParams init_lstm(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  if (input_dim == 0 || hidden_dim == 0) {
    throw std::invalid_argument("init_lstm: dims must be positive");
  }
  LstmParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  const double bound = 1.0 / std::sqrt(static_cast<double>(input_dim + hidden_dim));
  auto w = [&] { return Tensor::uniform({hidden_dim, input_dim + hidden_dim}, -bound, bound, rng); };
  p.w_input = w();
  p.w_forget = w();
  p.w_output = w();
  p.w_candidate = w();
  p.b_input = Tensor::zeros({hidden_dim}, true);
  p.b_forget = Tensor::create({hidden_dim}, std::vector<double>(hidden_dim, 1.0), true);
  p.b_output = Tensor::zeros({hidden_dim}, true);
  p.b_candidate = Tensor::zeros({hidden_dim}, true);
  return p;
}

static void check_lstm_dims(const LstmParams& p, const Tensor& x, const Tensor& h,
                            const Tensor& c) {
  if (x.rank() != 1 || x.size() != p.input_dim) {
    throw std::invalid_argument("lstm: expected input of length " + std::to_string(p.input_dim) +
                                ", got " + shape_str(x.shape));
  }
  if (h.size() != p.hidden_dim || c.size() != p.hidden_dim) {
    throw std::invalid_argument("lstm: state length must be " + std::to_string(p.hidden_dim));
  }
}

std::pair<TensorPtr, TensorPtr> lstm_cell_step(const LstmParams& params, const TensorPtr& x_t,
                                               const TensorPtr& h_prev, const TensorPtr& c_prev) {
  check_lstm_dims(params, *x_t, *h_prev, *c_prev);
  auto z = concat({x_t, h_prev});
  auto i = sigmoid(add(matmul(params.w_input, z), params.b_input));
  auto f = sigmoid(add(matmul(params.w_forget, z), params.b_forget));
  auto o = sigmoid(add(matmul(params.w_output, z), params.b_output));
  auto g = tanh_op(add(matmul(params.w_candidate, z), params.b_candidate));
  auto c = add(mul(f, c_prev), mul(i, g));
  auto h = mul(o, tanh_op(c));
  return {h, c};
}

namespace {

// Per-step activations saved by the fused encoder for BPTT, flattened into
// contiguous buffers (step-major) to keep allocation count independent of
// sequence length.
struct LstmTrace {
  std::size_t H = 0, Z = 0;
  std::vector<double> z;   // T x Z where Z = I + H; [x_t ; h_{t-1}]
  std::vector<double> gi, gf, go, gg;  // T x H, post-activation gates
  std::vector<double> c;   // T x H, cell states (c[t] after step t)
  std::vector<double> tc;  // T x H, tanh(c[t])
  std::vector<double> wt;     // Z x 4H packed transposed gate weights
  std::vector<double> bias4;  // 4H concatenated gate biases

  void resize(std::size_t T, std::size_t hidden, std::size_t z_dim) {
    H = hidden;
    Z = z_dim;
    z.resize(T * Z);
    gi.resize(T * H);
    gf.resize(T * H);
    go.resize(T * H);
    gg.resize(T * H);
    c.resize(T * H);
    tc.resize(T * H);
  }
  double* z_at(std::size_t t) { return z.data() + t * Z; }
  double* gate(std::vector<double>& buf, std::size_t t) { return buf.data() + t * H; }
};

// The hot kernels work on a packed column-major copy of the four gate
// matrices: wt[j*4H + k] = W_gate(k/H)[k%H][j], gate order [i|f|o|g]. One
// z-element then updates a contiguous 4H block, which streams through SIMD
// units without horizontal reductions. Summation order is fixed, so results
// stay deterministic.

// pre = bias4; for each j: pre += z[j] * wt_column(j)
void step_pre_generic(std::size_t z_dim, std::size_t h4, const double* __restrict wt,
                      const double* __restrict bias4, const double* __restrict z,
                      double* __restrict pre) {
  std::copy(bias4, bias4 + h4, pre);
  for (std::size_t j = 0; j < z_dim; ++j) {
    const double zj = z[j];
    const double* __restrict col = wt + j * h4;
    for (std::size_t k = 0; k < h4; ++k) pre[k] += zj * col[k];
  }
}

// dz[j] = <dpre4, wt_column(j)>
void dz_packed_generic(std::size_t z_dim, std::size_t h4, const double* __restrict dpre4,
                       const double* __restrict wt, double* __restrict dz) {
  for (std::size_t j = 0; j < z_dim; ++j) {
    const double* __restrict col = wt + j * h4;
    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
    std::size_t k = 0;
    for (; k + 4 <= h4; k += 4) {
      a0 += dpre4[k] * col[k];
      a1 += dpre4[k + 1] * col[k + 1];
      a2 += dpre4[k + 2] * col[k + 2];
      a3 += dpre4[k + 3] * col[k + 3];
    }
    double s = (a0 + a1) + (a2 + a3);
    for (; k < h4; ++k) s += dpre4[k] * col[k];
    dz[j] = s;
  }
}

// bg[r] += dpre[r]; wg[r,:] += dpre[r] * z (original row-major layout)
void dw_rows_generic(std::size_t rows, std::size_t cols, const double* __restrict dpre,
                     const double* __restrict z, double* __restrict wg, double* __restrict bg) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double d = dpre[r];
    bg[r] += d;
    double* __restrict wrow = wg + r * cols;
    for (std::size_t j = 0; j < cols; ++j) wrow[j] += d * z[j];
  }
}

#if defined(__x86_64__) && defined(__GNUC__)
#define PREVALENS_HAVE_AVX2_DISPATCH 1

__attribute__((target("avx2,fma"))) void step_pre_avx2(std::size_t z_dim, std::size_t h4,
                                                       const double* __restrict wt,
                                                       const double* __restrict bias4,
                                                       const double* __restrict z,
                                                       double* __restrict pre) {
  std::copy(bias4, bias4 + h4, pre);
  for (std::size_t j = 0; j < z_dim; ++j) {
    const __m256d zj = _mm256_set1_pd(z[j]);
    const double* __restrict col = wt + j * h4;
    std::size_t k = 0;
    for (; k + 4 <= h4; k += 4) {
      _mm256_storeu_pd(pre + k,
                       _mm256_fmadd_pd(zj, _mm256_loadu_pd(col + k), _mm256_loadu_pd(pre + k)));
    }
    for (; k < h4; ++k) pre[k] += z[j] * col[k];
  }
}

__attribute__((target("avx2,fma"))) void dz_packed_avx2(std::size_t z_dim, std::size_t h4,
                                                        const double* __restrict dpre4,
                                                        const double* __restrict wt,
                                                        double* __restrict dz) {
  for (std::size_t j = 0; j < z_dim; ++j) {
    const double* __restrict col = wt + j * h4;
    __m256d acc = _mm256_setzero_pd();
    std::size_t k = 0;
    for (; k + 4 <= h4; k += 4) {
      acc = _mm256_fmadd_pd(_mm256_loadu_pd(dpre4 + k), _mm256_loadu_pd(col + k), acc);
    }
    alignas(32) double lanes[4];
    _mm256_store_pd(lanes, acc);
    double s = (lanes[0] + lanes[1]) + (lanes[2] + lanes[3]);
    for (; k < h4; ++k) s += dpre4[k] * col[k];
    dz[j] = s;
  }
}

__attribute__((target("avx2,fma"))) void dw_rows_avx2(std::size_t rows, std::size_t cols,
                                                      const double* __restrict dpre,
                                                      const double* __restrict z,
                                                      double* __restrict wg,
                                                      double* __restrict bg) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double d = dpre[r];
    bg[r] += d;
    const __m256d dv = _mm256_set1_pd(d);
    double* __restrict wrow = wg + r * cols;
    std::size_t j = 0;
    for (; j + 4 <= cols; j += 4) {
      _mm256_storeu_pd(wrow + j,
                       _mm256_fmadd_pd(dv, _mm256_loadu_pd(z + j), _mm256_loadu_pd(wrow + j)));
    }
    for (; j < cols; ++j) wrow[j] += d * z[j];
  }
}
#endif

using StepPreFn = void (*)(std::size_t, std::size_t, const double*, const double*, const double*,
                           double*);
using DzPackedFn = void (*)(std::size_t, std::size_t, const double*, const double*, double*);
using DwRowsFn = void (*)(std::size_t, std::size_t, const double*, const double*, double*,
                          double*);

#ifdef PREVALENS_HAVE_AVX2_DISPATCH
bool cpu_has_avx2_fma() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}
const bool kUseAvx2 = cpu_has_avx2_fma();
const StepPreFn step_pre_impl = kUseAvx2 ? step_pre_avx2 : step_pre_generic;
const DzPackedFn dz_packed_impl = kUseAvx2 ? dz_packed_avx2 : dz_packed_generic;
const DwRowsFn dw_rows_impl = kUseAvx2 ? dw_rows_avx2 : dw_rows_generic;
#else
const StepPreFn step_pre_impl = step_pre_generic;
const DzPackedFn dz_packed_impl = dz_packed_generic;
const DwRowsFn dw_rows_impl = dw_rows_generic;
#endif

// packed transposed gate weights + concatenated biases for one direction
void pack_gates(const LstmParams& p, std::vector<double>& wt, std::vector<double>& bias4) {
  const std::size_t H = p.hidden_dim, Z = p.input_dim + p.hidden_dim;
  wt.resize(4 * H * Z);
  bias4.resize(4 * H);
  const Tensor* gates[4] = {p.w_input.get(), p.w_forget.get(), p.w_output.get(),
                            p.w_candidate.get()};
  const Tensor* biases[4] = {p.b_input.get(), p.b_forget.get(), p.b_output.get(),
                             p.b_candidate.get()};
  for (std::size_t g = 0; g < 4; ++g) {
    std::copy(biases[g]->values.begin(), biases[g]->values.end(), bias4.begin() + g * H);
    for (std::size_t r = 0; r < H; ++r) {
      for (std::size_t j = 0; j < Z; ++j) {
        wt[j * 4 * H + g * H + r] = gates[g]->values[r * Z + j];
      }
    }
  }
}

}  // namespace

TensorPtr lstm_encode(const LstmParams& params, const std::vector<TensorPtr>& sequence,
                      bool reverse) {
  if (sequence.empty()) throw std::invalid_argument("lstm_encode: empty sequence");
  const std::size_t I = params.input_dim, H = params.hidden_dim;
  const std::size_t T = sequence.size();
  for (const auto& item : sequence) {
    if (item->rank() != 1 || item->size() != I) {
      throw std::invalid_argument("lstm_encode: every item must have length " +
                                  std::to_string(I) + ", got " + shape_str(item->shape));
    }
  }

  auto trace = std::make_shared<LstmTrace>();
  trace->resize(T, H, I + H);
  pack_gates(params, trace->wt, trace->bias4);

  std::vector<double> h(H, 0.0), c(H, 0.0);
  std::vector<double> pre(4 * H);  // [i | f | o | g] preactivations
  for (std::size_t t = 0; t < T; ++t) {
    const Tensor& x = *sequence[reverse ? T - 1 - t : t];
    double* z = trace->z_at(t);
    std::copy(x.values.begin(), x.values.end(), z);
    std::copy(h.begin(), h.end(), z + I);

    double* gi = trace->gate(trace->gi, t);
    double* gf = trace->gate(trace->gf, t);
    double* go = trace->gate(trace->go, t);
    double* gg = trace->gate(trace->gg, t);
    step_pre_impl(I + H, 4 * H, trace->wt.data(), trace->bias4.data(), z, pre.data());
    vec_sigmoid(pre.data(), gi, H);
    vec_sigmoid(pre.data() + H, gf, H);
    vec_sigmoid(pre.data() + 2 * H, go, H);
    vec_tanh(pre.data() + 3 * H, gg, H);

    double* ct = trace->gate(trace->c, t);
    double* tct = trace->gate(trace->tc, t);
    for (std::size_t r = 0; r < H; ++r) ct[r] = gf[r] * c[r] + gi[r] * gg[r];
    vec_tanh(ct, tct, H);
    for (std::size_t r = 0; r < H; ++r) h[r] = go[r] * tct[r];
    std::copy(ct, ct + H, c.begin());
  }

  std::vector<TensorPtr> parents = params.parameters();
  bool items_need_grad = false;
  for (const auto& item : sequence) {
    if (item->requires_grad) items_need_grad = true;
    parents.push_back(item);
  }

  auto out = Tensor::create({H}, std::move(h));
  bool needs_grad = items_need_grad;
  for (const auto& p : parents)
    if (p->requires_grad) needs_grad = true;
  if (!needs_grad) return out;

  out->requires_grad = true;
  out->parents = parents;
  Tensor* out_raw = out.get();
  auto seq = sequence;  // captured copy keeps items alive
  out->backward_fn = [params, seq, trace, reverse, items_need_grad, I, H, T, out_raw] {
    auto ensure = [](const TensorPtr& t) { t->ensure_grad(); };
    ensure(params.w_input);
    ensure(params.w_forget);
    ensure(params.w_output);
    ensure(params.w_candidate);
    ensure(params.b_input);
    ensure(params.b_forget);
    ensure(params.b_output);
    ensure(params.b_candidate);
    if (items_need_grad)
      for (const auto& item : seq)
        if (item->requires_grad) item->ensure_grad();

    std::vector<double> dh(out_raw->grad);  // carry into step T-1
    std::vector<double> dc(H, 0.0);
    std::vector<double> dpre4(4 * H), dz(I + H);
    double* dpre_i = dpre4.data();
    double* dpre_f = dpre4.data() + H;
    double* dpre_o = dpre4.data() + 2 * H;
    double* dpre_g = dpre4.data() + 3 * H;
    for (std::size_t ti = T; ti-- > 0;) {
      const double* z = trace->z_at(ti);
      const double* gi = trace->gate(trace->gi, ti);
      const double* gf = trace->gate(trace->gf, ti);
      const double* go = trace->gate(trace->go, ti);
      const double* gg = trace->gate(trace->gg, ti);
      const double* tc = trace->gate(trace->tc, ti);
      const double* c_prev = ti > 0 ? trace->gate(trace->c, ti - 1) : nullptr;

      for (std::size_t r = 0; r < H; ++r) {
        const double do_ = dh[r] * tc[r];
        const double dct = dc[r] + dh[r] * go[r] * (1.0 - tc[r] * tc[r]);
        const double cp = c_prev ? c_prev[r] : 0.0;
        dpre_i[r] = dct * gg[r] * gi[r] * (1.0 - gi[r]);
        dpre_f[r] = dct * cp * gf[r] * (1.0 - gf[r]);
        dpre_o[r] = do_ * go[r] * (1.0 - go[r]);
        dpre_g[r] = dct * gi[r] * (1.0 - gg[r] * gg[r]);
        dc[r] = dct * gf[r];
      }

      dz_packed_impl(I + H, 4 * H, dpre4.data(), trace->wt.data(), dz.data());
      dw_rows_impl(H, I + H, dpre_i, z, params.w_input->grad.data(),
                   params.b_input->grad.data());
      dw_rows_impl(H, I + H, dpre_f, z, params.w_forget->grad.data(),
                   params.b_forget->grad.data());
      dw_rows_impl(H, I + H, dpre_o, z, params.w_output->grad.data(),
                   params.b_output->grad.data());
      dw_rows_impl(H, I + H, dpre_g, z, params.w_candidate->grad.data(),
                   params.b_candidate->grad.data());

      if (items_need_grad) {
        const auto& item = seq[reverse ? T - 1 - ti : ti];
        if (item->requires_grad)
          for (std::size_t j = 0; j < I; ++j) item->grad[j] += dz[j];
      }
      std::copy(dz.begin() + I, dz.end(), dh.begin());
    }
  };
  return out;
}

TensorPtr bilstm_encode(const LstmParams& fwd, const LstmParams& bwd,
                        const std::vector<TensorPtr>& sequence) {
  if (sequence.empty()) throw std::invalid_argument("bilstm_encode: empty sequence");
  if (fwd.input_dim != bwd.input_dim) {
    throw std::invalid_argument("bilstm_encode: directions disagree on input_dim");
  }
  return concat({lstm_encode(fwd, sequence, false), lstm_encode(bwd, sequence, true)});
}

DenseLayer init_dense(std::size_t in_dim, std::size_t out_dim, Activation act, double dropout_rate,
                      Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
  DenseLayer layer;
  layer.weights = Tensor::uniform({out_dim, in_dim}, -bound, bound, rng);
  layer.bias = Tensor::zeros({out_dim}, true);
  layer.activation = act;
  layer.dropout_rate = dropout_rate;
  return layer;
}

static TensorPtr apply_activation(const TensorPtr& x, Activation act) {
  switch (act) {
    case Activation::Identity: return x;
    case Activation::Relu: return relu(x);
    case Activation::Sigmoid: return sigmoid(x);
    case Activation::Tanh: return tanh_op(x);
  }
  throw std::logic_error("unknown activation");
}

TensorPtr dense_dropout_stack(const TensorPtr& x, const std::vector<DenseLayer>& layers,
                              bool training, Rng* rng) {
  TensorPtr cur = x;
  for (const auto& layer : layers) {
    TensorPtr pre;
    if (cur->rank() == 1) {
      pre = add(matmul(layer.weights, cur), layer.bias);
    } else {
      pre = add_rowwise(matmul_nt(cur, layer.weights), layer.bias);
    }
    cur = dropout(apply_activation(pre, layer.activation), layer.dropout_rate, training, rng);
  }
  return cur;
}

}  // namespace prevalens
