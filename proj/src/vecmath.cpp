#include "prevalens/vecmath.hpp"

#include <algorithm>
#include <cmath>

#if defined(__x86_64__) && defined(__GNUC__)
#define PREVALENS_VECMATH_AVX2 1
#include <immintrin.h>
#endif

namespace prevalens {

namespace {

void sigmoid_scalar_loop(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    const double x = std::clamp(in[i], -40.0, 40.0);
    out[i] = 1.0 / (1.0 + std::exp(-x));
  }
}

void tanh_scalar_loop(const double* in, double* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::tanh(std::clamp(in[i], -20.0, 20.0));
  }
}

#ifdef PREVALENS_VECMATH_AVX2

// 4-wide exp for arguments bounded to |x| <= 80 (enough for saturated
// sigmoid/tanh): round-to-nearest power-of-two reduction followed by the
// classic rational approximation, accurate to a couple of ulp.
__attribute__((target("avx2,fma"))) inline __m256d exp_pd(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634073599);
  const __m256d c1 = _mm256_set1_pd(6.93145751953125e-1);
  const __m256d c2 = _mm256_set1_pd(1.42860682030941723212e-6);
  const __m256d p0 = _mm256_set1_pd(1.26177193074810590878e-4);
  const __m256d p1 = _mm256_set1_pd(3.02994407707441961300e-2);
  const __m256d p2 = _mm256_set1_pd(9.99999999999999999910e-1);
  const __m256d q0 = _mm256_set1_pd(3.00198505138664455042e-6);
  const __m256d q1 = _mm256_set1_pd(2.52448340349684104192e-3);
  const __m256d q2 = _mm256_set1_pd(2.27265548208155028766e-1);
  const __m256d q3 = _mm256_set1_pd(2.00000000000000000005e0);
  const __m256d one = _mm256_set1_pd(1.0);

  const __m256d n =
      _mm256_round_pd(_mm256_mul_pd(x, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, c1, x);
  r = _mm256_fnmadd_pd(n, c2, r);
  const __m256d r2 = _mm256_mul_pd(r, r);
  __m256d px = _mm256_fmadd_pd(p0, r2, p1);
  px = _mm256_fmadd_pd(px, r2, p2);
  px = _mm256_mul_pd(px, r);
  __m256d qx = _mm256_fmadd_pd(q0, r2, q1);
  qx = _mm256_fmadd_pd(qx, r2, q2);
  qx = _mm256_fmadd_pd(qx, r2, q3);
  const __m256d e =
      _mm256_add_pd(one, _mm256_div_pd(_mm256_add_pd(px, px), _mm256_sub_pd(qx, px)));
  // scale by 2^n via exponent-field arithmetic; |n| stays far from the
  // subnormal range for our clamped inputs
  const __m128i n32 = _mm256_cvtpd_epi32(n);
  const __m256i n64 = _mm256_cvtepi32_epi64(n32);
  const __m256i pow = _mm256_slli_epi64(_mm256_add_epi64(n64, _mm256_set1_epi64x(1023)), 52);
  return _mm256_mul_pd(e, _mm256_castsi256_pd(pow));
}

__attribute__((target("avx2,fma"))) void sigmoid_avx2(const double* in, double* out,
                                                      std::size_t n) {
  const __m256d lo = _mm256_set1_pd(-40.0), hi = _mm256_set1_pd(40.0);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_max_pd(lo, _mm256_min_pd(hi, _mm256_loadu_pd(in + i)));
    const __m256d e = exp_pd(_mm256_sub_pd(_mm256_setzero_pd(), x));
    _mm256_storeu_pd(out + i, _mm256_div_pd(one, _mm256_add_pd(one, e)));
  }
  if (i < n) sigmoid_scalar_loop(in + i, out + i, n - i);
}

__attribute__((target("avx2,fma"))) void tanh_avx2(const double* in, double* out, std::size_t n) {
  const __m256d lo = _mm256_set1_pd(-20.0), hi = _mm256_set1_pd(20.0);
  const __m256d one = _mm256_set1_pd(1.0);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d x = _mm256_max_pd(lo, _mm256_min_pd(hi, _mm256_loadu_pd(in + i)));
    const __m256d e = exp_pd(_mm256_add_pd(x, x));  // e^(2x)
    _mm256_storeu_pd(out + i,
                     _mm256_div_pd(_mm256_sub_pd(e, one), _mm256_add_pd(e, one)));
  }
  if (i < n) tanh_scalar_loop(in + i, out + i, n - i);
}

bool vecmath_has_avx2() {
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

using LoopFn = void (*)(const double*, double*, std::size_t);
const LoopFn sigmoid_impl = vecmath_has_avx2() ? sigmoid_avx2 : sigmoid_scalar_loop;
const LoopFn tanh_impl = vecmath_has_avx2() ? tanh_avx2 : tanh_scalar_loop;

#else
using LoopFn = void (*)(const double*, double*, std::size_t);
const LoopFn sigmoid_impl = sigmoid_scalar_loop;
const LoopFn tanh_impl = tanh_scalar_loop;
#endif

}  // namespace

void vec_sigmoid(const double* in, double* out, std::size_t n) { sigmoid_impl(in, out, n); }

void vec_tanh(const double* in, double* out, std::size_t n) { tanh_impl(in, out, n); }

}  // namespace prevalens
