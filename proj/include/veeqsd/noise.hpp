#pragma once

// Cross-correlated colored noise for the multi-channel unraveling.
//
// The processes z_m(t) are jointly Gaussian, circular, with
// M{z_m(t_j) z_n(t_k)^*} = alpha_mn(t_j, t_k). On a grid of N points the
// stacked vector x[j*M + m] = z_m(t_j) has covariance C (D x D, D = M*N);
// paths are x = L w with C = L L^dagger and w standard circular normal.
// Paths store the conjugate z*_m(t_j), which is what drives the state.
//
// Stacking is time-major, so the factor is causal: z(t_j) depends only on
// w up to index j.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"

namespace veeqsd {

inline constexpr std::size_t kDefaultCovarianceCap = 8192;

struct CovarianceFactor {
  TimeGrid grid;
  std::size_t channels = 0;
  std::size_t dimension = 0;  // channels * grid.points()
  // Lower factor packed by rows; row i starts at i(i+1)/2.
  std::vector<cplx> lower_packed;
  double jitter = 0.0;  // diagonal shift that made the factorization succeed

  const cplx* row(std::size_t i) const { return lower_packed.data() + i * (i + 1) / 2; }
  // Dense L L^dagger, for checks on small problems.
  CMatrix reconstruct() const;
};

// Dense covariance C[(j,m),(k,n)] = alpha_mn(t_j, t_k).
CMatrix covariance_matrix(const CorrelationKernel& kernel, const TimeGrid& grid);

// Throws std::invalid_argument when D exceeds `cap`, NumericalError when the
// factorization fails after three jitter escalations.
CovarianceFactor build_covariance(const CorrelationKernel& kernel, const TimeGrid& grid,
                                  std::size_t cap = kDefaultCovarianceCap);

struct NoisePath {
  std::uint64_t index = 0;
  std::vector<cplx> zstar;  // zstar[j*M + m] = z*_m(t_j)
};

struct NoisePathBatch {
  TimeGrid grid;
  std::size_t channels = 0;
  std::uint64_t seed = 0;
  std::vector<NoisePath> paths;
};

// Path `index` of the stream `seed`; depends on nothing else.
NoisePath sample_path(const CovarianceFactor& factor, std::uint64_t seed, std::uint64_t index);
NoisePathBatch sample_noise(const CovarianceFactor& factor, std::uint64_t seed, std::size_t count,
                            std::uint64_t first_index = 0);

// Binary layout (little-endian host order):
//   char[8] "VQSDNOIS", u32 version (1), u32 M, u64 N (points), f64 dt,
//   u64 seed, u64 count, then per path u64 index followed by N*M complex
//   doubles (re, im) in time-major order [t_j][channel m].
void write_noise_batch(const NoisePathBatch& batch, const std::filesystem::path& path);
NoisePathBatch read_noise_batch(const std::filesystem::path& path);

// Which kernel multiplies <L^dagger> in the recentred noise
//   z~*_m(t) = z*_m(t) + sum_n int_0^t K_mn(t, s) <L_{n'}^dagger>_s ds.
//  conjugated:   K = conj(alpha_mn), n' = n   (M{z*_m(t) z_n(s)})
//  unconjugated: K = alpha_mn,       n' = n
//  literal:      K = alpha_mn,       n' = m
enum class ShiftConvention { conjugated, unconjugated, literal };

const char* shift_convention_name(ShiftConvention c);
ShiftConvention parse_shift_convention(const std::string& text);

// Lag table of the shift kernel on a uniform grid. The stationary kernel is
// stored reversed, so the trapezoid convolution at step j is one contiguous
// dot product per (m, n).
class ShiftKernel {
 public:
  ShiftKernel(const CorrelationKernel& kernel, const TimeGrid& grid, ShiftConvention convention);

  const TimeGrid& grid() const { return grid_; }
  std::size_t channels() const { return channels_; }
  ShiftConvention convention() const { return convention_; }
  // K_mn at lag `lag` steps.
  cplx at_lag(std::size_t m, std::size_t n, std::size_t lag) const;

  // Shift for channel m at grid index j from the channel-major expectation
  // history ell[n*points + k] = <L_n^dagger>(t_k); only k <= j is read
  // (trapezoid rule).
  cplx shift(std::size_t m, std::size_t j, std::span<const cplx> ell) const;

  // Same, with history known up to index `known` (< j) and <L^dagger> held
  // at its value at `known` on [t_known, t_j].
  cplx shift_frozen_tail(std::size_t m, std::size_t j, std::size_t known, std::span<const cplx> ell) const;

 private:
  // Reversed lag table for (m, n): rev[i] = K_mn((points-1-i) dt).
  const cplx* reversed(std::size_t m, std::size_t n) const;

  TimeGrid grid_;
  std::size_t channels_ = 0;
  ShiftConvention convention_;
  std::vector<cplx> reversed_;
};

// Applies the shift to a whole path given the full expectation history.
// Throws std::invalid_argument on grid mismatch.
NoisePath girsanov_shift(const NoisePath& path, const ShiftKernel& kernel, std::span<const cplx> ell);

}  // namespace veeqsd
