// Compiled with -mavx2 -mfma; only reached after a runtime CPU check.

#include <immintrin.h>

#include "veeqsd/simd/kernels.hpp"

namespace veeqsd::simd::avx2 {

namespace {

inline cplx hsum(__m256d re_parts, __m256d im_parts) {
  // lanes: (a_r b_r, a_i b_r, ...) and (a_i b_i, a_r b_i, ...)
  const __m256d v = _mm256_addsub_pd(re_parts, im_parts);
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  alignas(16) double out[2];
  _mm_store_pd(out, s);
  return {out[0], out[1]};
}

}  // namespace

cplx dot(const cplx* a, const cplx* b, std::size_t n) {
  const double* pa = reinterpret_cast<const double*>(a);
  const double* pb = reinterpret_cast<const double*>(b);
  __m256d acc_r0 = _mm256_setzero_pd();
  __m256d acc_i0 = _mm256_setzero_pd();
  __m256d acc_r1 = _mm256_setzero_pd();
  __m256d acc_i1 = _mm256_setzero_pd();

  std::size_t k = 0;
  for (; k + 4 <= n; k += 4) {
    const __m256d a0 = _mm256_loadu_pd(pa + 2 * k);
    const __m256d b0 = _mm256_loadu_pd(pb + 2 * k);
    const __m256d a1 = _mm256_loadu_pd(pa + 2 * k + 4);
    const __m256d b1 = _mm256_loadu_pd(pb + 2 * k + 4);
    acc_r0 = _mm256_fmadd_pd(a0, _mm256_movedup_pd(b0), acc_r0);
    acc_i0 = _mm256_fmadd_pd(_mm256_permute_pd(a0, 0x5), _mm256_permute_pd(b0, 0xF), acc_i0);
    acc_r1 = _mm256_fmadd_pd(a1, _mm256_movedup_pd(b1), acc_r1);
    acc_i1 = _mm256_fmadd_pd(_mm256_permute_pd(a1, 0x5), _mm256_permute_pd(b1, 0xF), acc_i1);
  }
  for (; k + 2 <= n; k += 2) {
    const __m256d a0 = _mm256_loadu_pd(pa + 2 * k);
    const __m256d b0 = _mm256_loadu_pd(pb + 2 * k);
    acc_r0 = _mm256_fmadd_pd(a0, _mm256_movedup_pd(b0), acc_r0);
    acc_i0 = _mm256_fmadd_pd(_mm256_permute_pd(a0, 0x5), _mm256_permute_pd(b0, 0xF), acc_i0);
  }
  cplx sum = hsum(_mm256_add_pd(acc_r0, acc_r1), _mm256_add_pd(acc_i0, acc_i1));
  if (k < n) {
    sum += cplx(a[k].real() * b[k].real() - a[k].imag() * b[k].imag(),
                a[k].real() * b[k].imag() + a[k].imag() * b[k].real());
  }
  return sum;
}

void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = dot(packed + i * (i + 1) / 2, x, i + 1);
}

}  // namespace veeqsd::simd::avx2
