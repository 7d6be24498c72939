#include "veeqsd/simd/kernels.hpp"

namespace veeqsd::simd::scalar {

cplx dot(const cplx* a, const cplx* b, std::size_t n) {
  double re = 0.0;
  double im = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    re += a[k].real() * b[k].real() - a[k].imag() * b[k].imag();
    im += a[k].real() * b[k].imag() + a[k].imag() * b[k].real();
  }
  return {re, im};
}

void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = dot(packed + i * (i + 1) / 2, x, i + 1);
}

}  // namespace veeqsd::simd::scalar
