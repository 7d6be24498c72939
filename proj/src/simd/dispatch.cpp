#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "veeqsd/simd/kernels.hpp"

namespace veeqsd::simd {

namespace {

Backend detect() {
#if defined(VEEQSD_HAVE_AVX2_TU)
  __builtin_cpu_init();
  if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Backend::avx2;
#endif
#if defined(VEEQSD_HAVE_NEON_TU)
  return Backend::neon;
#endif
  return Backend::scalar;
}

Backend initial_backend() {
  const Backend detected = detect();
  const char* env = std::getenv("VEEQSD_SIMD");
  if (env == nullptr || *env == '\0') return detected;
  const std::string want(env);
  for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon})
    if (want == backend_name(b) && backend_supported(b)) return b;
  return detected;
}

std::atomic<Backend>& current() {
  static std::atomic<Backend> backend{initial_backend()};
  return backend;
}

}  // namespace

const char* backend_name(Backend b) {
  switch (b) {
    case Backend::scalar:
      return "scalar";
    case Backend::avx2:
      return "avx2";
    case Backend::neon:
      return "neon";
  }
  return "unknown";
}

bool backend_supported(Backend b) {
  switch (b) {
    case Backend::scalar:
      return true;
    case Backend::avx2:
#if defined(VEEQSD_HAVE_AVX2_TU)
      __builtin_cpu_init();
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Backend::neon:
#if defined(VEEQSD_HAVE_NEON_TU)
      return true;
#else
      return false;
#endif
  }
  return false;
}

Backend active_backend() { return current().load(std::memory_order_relaxed); }

void force_backend(Backend b) {
  if (!backend_supported(b))
    throw std::invalid_argument(std::string("SIMD backend not available: ") + backend_name(b));
  current().store(b, std::memory_order_relaxed);
}

cplx dot(const cplx* a, const cplx* b, std::size_t n) {
  switch (active_backend()) {
#if defined(VEEQSD_HAVE_AVX2_TU)
    case Backend::avx2:
      return avx2::dot(a, b, n);
#endif
#if defined(VEEQSD_HAVE_NEON_TU)
    case Backend::neon:
      return neon::dot(a, b, n);
#endif
    default:
      return scalar::dot(a, b, n);
  }
}

void lower_packed_matvec(const cplx* packed, const cplx* x, cplx* y, std::size_t n) {
  switch (active_backend()) {
#if defined(VEEQSD_HAVE_AVX2_TU)
    case Backend::avx2:
      return avx2::lower_packed_matvec(packed, x, y, n);
#endif
#if defined(VEEQSD_HAVE_NEON_TU)
    case Backend::neon:
      return neon::lower_packed_matvec(packed, x, y, n);
#endif
    default:
      return scalar::lower_packed_matvec(packed, x, y, n);
  }
}

}  // namespace veeqsd::simd
