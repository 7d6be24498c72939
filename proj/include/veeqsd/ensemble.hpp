#pragma once

// Ensemble averages of trajectory outer products with per-entry standard
// errors.
//
// Sums are kept in 128-bit fixed point (resolution 2^-80), so adding samples
// and merging accumulators are exact integer operations: the result does not
// depend on the order in which paths arrive or on how they were split across
// workers.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"
#include "veeqsd/noise.hpp"
#include "veeqsd/trajectories.hpp"

namespace veeqsd {

// Mean and standard error of `slots` matrix-valued samples of a fixed shape.
// std_error holds the standard error of the real part in .real() and of the
// imaginary part in .imag(); it is NaN when fewer than two samples were added.
struct SampleStatistics {
  std::size_t count = 0;
  std::vector<CMatrix> mean;
  std::vector<CMatrix> std_error;
};

class EnsembleAccumulator {
 public:
  EnsembleAccumulator(std::size_t slots, Eigen::Index rows, Eigen::Index cols);

  std::size_t slots() const { return slots_; }
  std::size_t count() const { return count_; }

  // One sample: `values.size()` must equal slots(). Throws NumericalError when
  // an entry is non-finite or would overflow the fixed-point range.
  void add(std::span<const CMatrix> values);
  void merge(const EnsembleAccumulator& other);
  SampleStatistics statistics() const;

  bool operator==(const EnsembleAccumulator&) const = default;

 private:
  std::size_t slots_;
  Eigen::Index rows_;
  Eigen::Index cols_;
  std::size_t count_ = 0;
  // Per scalar (slot, entry, re/im): running sum and sum of squares.
  std::vector<__int128> sum_;
  std::vector<__int128> sum_sq_;
};

struct EnsembleEstimate {
  TimeGrid grid;
  QsdMode mode = QsdMode::nonlinear;
  std::size_t count = 0;
  std::vector<CMatrix> mean;        // rho_hat(t_k); raw mean in linear mode
  std::vector<CMatrix> std_error;   // as in SampleStatistics
  std::vector<CMatrix> normalized;  // mean / Tr mean (equal to mean in nonlinear mode)
};

EnsembleAccumulator density_accumulator(const TrajectoryState& first);
void add_trajectory(EnsembleAccumulator& acc, const TrajectoryState& trajectory);
EnsembleEstimate make_estimate(const TimeGrid& grid, QsdMode mode, const EnsembleAccumulator& acc);

// Requires at least two trajectories on a common grid and of one mode.
EnsembleEstimate ensemble_density(std::span<const TrajectoryState> trajectories);

struct EnsembleOptions {
  unsigned threads = 0;  // 0: hardware concurrency
  ShiftConvention convention = ShiftConvention::conjugated;
  std::uint64_t first_index = 0;
  std::size_t covariance_cap = kDefaultCovarianceCap;
  std::size_t riccati_substeps = 1;
};

// Builds F on grid.refined(2), factors the noise covariance once, evolves
// `count` paths in parallel and reduces exactly. Path i uses noise substream
// first_index + i of `seed`.
EnsembleEstimate run_ensemble(const SystemSpec& system, const CorrelationKernel& kernel, const CVector& psi0,
                              const TimeGrid& grid, std::size_t count, std::uint64_t seed, QsdMode mode,
                              const EnsembleOptions& options = {});

// Linear-mode ensemble of novikov_residual(); slot k*M + m. The mean is
// consistent with zero.
SampleStatistics novikov_check(const SystemSpec& system, const CorrelationKernel& kernel, const CVector& psi0,
                               const TimeGrid& grid, std::size_t count, std::uint64_t seed,
                               const EnsembleOptions& options = {});

}  // namespace veeqsd
