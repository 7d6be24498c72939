#include <arm_neon.h>

#include "veeqsd/simd/kernels.hpp"

namespace veeqsd::simd::neon {

// One complex per float64x2_t; two independent accumulator pairs.
cplx dot(const cplx* a, const cplx* b, std::size_t n) {
  const double* pa = reinterpret_cast<const double*>(a);
  const double* pb = reinterpret_cast<const double*>(b);
  float64x2_t acc_r0 = vdupq_n_f64(0.0);
  float64x2_t acc_i0 = vdupq_n_f64(0.0);
  float64x2_t acc_r1 = vdupq_n_f64(0.0);
  float64x2_t acc_i1 = vdupq_n_f64(0.0);

  std::size_t k = 0;
  for (; k + 2 <= n; k += 2) {
    const float64x2_t a0 = vld1q_f64(pa + 2 * k);
    const float64x2_t b0 = vld1q_f64(pb + 2 * k);
    const float64x2_t a1 = vld1q_f64(pa + 2 * k + 2);
    const float64x2_t b1 = vld1q_f64(pb + 2 * k + 2);
    acc_r0 = vfmaq_laneq_f64(acc_r0, a0, b0, 0);
    acc_i0 = vfmaq_laneq_f64(acc_i0, vextq_f64(a0, a0, 1), b0, 1);
    acc_r1 = vfmaq_laneq_f64(acc_r1, a1, b1, 0);
    acc_i1 = vfmaq_laneq_f64(acc_i1, vextq_f64(a1, a1, 1), b1, 1);
  }
  if (k < n) {
    const float64x2_t a0 = vld1q_f64(pa + 2 * k);
    const float64x2_t b0 = vld1q_f64(pb + 2 * k);
    acc_r0 = vfmaq_laneq_f64(acc_r0, a0, b0, 0);
    acc_i0 = vfmaq_laneq_f64(acc_i0, vextq_f64(a0, a0, 1), b0, 1);
  }
  // acc_r = (a_r b_r, a_i b_r), acc_i = (a_i b_i, a_r b_i)
  const float64x2_t r = vaddq_f64(acc_r0, acc_r1);
  const float64x2_t i = vaddq_f64(acc_i0, acc_i1);
  return {vgetq_lane_f64(r, 0) - vgetq_lane_f64(i, 0), vgetq_lane_f64(r, 1) + vgetq_lane_f64(i, 1)};
}

void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = dot(packed + i * (i + 1) / 2, x, i + 1);
}

}  // namespace veeqsd::simd::neon
