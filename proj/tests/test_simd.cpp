#include <doctest.h>

#include <random>
#include <vector>

#include "veeqsd/simd/kernels.hpp"

using namespace veeqsd;

namespace {

std::vector<cplx> random_vector(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<cplx> v(n);
  for (auto& x : v) x = {g(rng), g(rng)};
  return v;
}

// Restores the process-wide backend when a test case ends.
struct BackendGuard {
  simd::Backend saved = simd::active_backend();
  ~BackendGuard() { simd::force_backend(saved); }
};

}  // namespace

TEST_CASE("scalar backend is always available") {
  CHECK(simd::backend_supported(simd::Backend::scalar));
  CHECK(std::string(simd::backend_name(simd::Backend::avx2)) == "avx2");
  BackendGuard guard;
  simd::force_backend(simd::Backend::scalar);
  CHECK(simd::active_backend() == simd::Backend::scalar);
}

TEST_CASE("unsupported backends are rejected") {
  for (simd::Backend b : {simd::Backend::avx2, simd::Backend::neon})
    if (!simd::backend_supported(b)) CHECK_THROWS_AS(simd::force_backend(b), std::invalid_argument);
}

TEST_CASE("vector kernels match the scalar reference") {
  BackendGuard guard;
  std::mt19937_64 rng(42);
  for (simd::Backend b : {simd::Backend::avx2, simd::Backend::neon}) {
    if (!simd::backend_supported(b)) continue;
    CAPTURE(simd::backend_name(b));
    simd::force_backend(b);

    for (std::size_t n = 0; n <= 67; ++n) {
      const auto a = random_vector(n, rng), c = random_vector(n, rng);
      const cplx ref = simd::scalar::dot(a.data(), c.data(), n);
      const cplx got = simd::dot(a.data(), c.data(), n);
      CHECK(std::abs(got - ref) <= 1e-13 * (1.0 + static_cast<double>(n)));
    }

    for (std::size_t n : {0u, 1u, 2u, 3u, 5u, 8u, 17u, 64u, 131u}) {
      const auto packed = random_vector(n * (n + 1) / 2, rng);
      const auto x = random_vector(n, rng);
      std::vector<cplx> ref(n), got(n);
      simd::scalar::lower_packed_matvec(packed.data(), x.data(), ref.data(), n);
      simd::lower_packed_matvec(packed.data(), x.data(), got.data(), n);
      for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(got[i] - ref[i]) <= 1e-13 * (1.0 + static_cast<double>(i)));
    }
  }
}

TEST_CASE("scalar reference against a hand-written sum") {
  const std::vector<cplx> a{{1, 2}, {3, -1}, {0, 1}};
  const std::vector<cplx> b{{2, 0}, {1, 1}, {-1, 0}};
  // (1+2i)2 + (3-i)(1+i) + i(-1) = 2+4i + 4+2i - i
  CHECK(simd::scalar::dot(a.data(), b.data(), 3) == cplx(6, 5));
  const std::vector<cplx> L{{1, 0}, {2, 0}, {3, 0}};
  const std::vector<cplx> x{{1, 1}, {0, 1}};
  std::vector<cplx> y(2);
  simd::scalar::lower_packed_matvec(L.data(), x.data(), y.data(), 2);
  CHECK(y[0] == cplx(1, 1));
  CHECK(y[1] == cplx(2, 5));
}
