#pragma once

#include <cstddef>

namespace prevalens {

// Batched transcendentals over contiguous buffers; uses a 4-wide SIMD
// rational approximation (a couple of ulp) when the CPU supports it, with a
// scalar libm fallback. Inputs are clamped into the saturation range, so
// results are always finite. Deterministic per machine.
void vec_sigmoid(const double* in, double* out, std::size_t n);
void vec_tanh(const double* in, double* out, std::size_t n);

}  // namespace prevalens
