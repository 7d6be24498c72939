#pragma once

// Complex inner-loop kernels with a scalar reference and vectorized variants.
//
// The active backend is chosen once at first use: AVX2+FMA when the CPU
// reports it, NEON on aarch64, scalar otherwise. VEEQSD_SIMD=scalar|avx2|neon
// in the environment overrides the choice; force_backend() does the same from
// code (tests use it to compare variants).
//
// Vector variants reorder the summation, so results agree with the scalar
// reference to rounding, not bitwise. Within one process the backend is fixed,
// so seeded runs stay bit-reproducible.

#include <cstddef>

#include "veeqsd/types.hpp"

namespace veeqsd::simd {

enum class Backend { scalar, avx2, neon };

const char* backend_name(Backend b);
bool backend_supported(Backend b);
Backend active_backend();
// Throws std::invalid_argument when the backend is not available here.
void force_backend(Backend b);

// sum_k a[k] * b[k] (no conjugation).
cplx dot(const cplx* a, const cplx* b, std::size_t n);

// y[i] = sum_{k <= i} L[i][k] x[k] with L packed row by row (row i starts at
// offset i(i+1)/2).
void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n);

namespace scalar {
cplx dot(const cplx* a, const cplx* b, std::size_t n);
void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n);
}  // namespace scalar

namespace avx2 {
cplx dot(const cplx* a, const cplx* b, std::size_t n);
void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n);
}  // namespace avx2

namespace neon {
cplx dot(const cplx* a, const cplx* b, std::size_t n);
void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n);
}  // namespace neon

}  // namespace veeqsd::simd
