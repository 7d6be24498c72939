#include "veeqsd/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <thread>

#include "veeqsd/coefficients.hpp"

namespace veeqsd {

namespace {

constexpr int kFractionBits = 80;

__int128 to_fixed(double v) {
  // Every add is overflow-checked; the entry bound keeps single squares in range.
  if (!std::isfinite(v) || std::abs(v) >= 1048576.0)
    throw NumericalError("ensemble: sample entry " + std::to_string(v) + " outside the accumulator range");
  const long double scaled = std::ldexp(static_cast<long double>(v), kFractionBits);
  return static_cast<__int128>(std::nearbyintl(scaled));
}

__int128 fixed_square(double v) {
  const long double sq = static_cast<long double>(v) * static_cast<long double>(v);
  return static_cast<__int128>(std::nearbyintl(std::ldexp(sq, kFractionBits)));
}

void checked_add(__int128& acc, __int128 v) {
  if (__builtin_add_overflow(acc, v, &acc)) throw NumericalError("ensemble: fixed-point accumulator overflow");
}

long double from_fixed(__int128 v) { return std::ldexp(static_cast<long double>(v), -kFractionBits); }

struct Pipeline {
  TimeGrid fine;
  CoefficientField field;
  CovarianceFactor factor;
  std::optional<ShiftKernel> shift;
};

Pipeline prepare(const SystemSpec& system, const CorrelationKernel& kernel, const CVector& psi0, const TimeGrid& grid,
                 std::size_t count, QsdMode mode, const EnsembleOptions& options) {
  if (count < 1) throw std::invalid_argument("run_ensemble: count must be >= 1");
  if (kernel.size() != system.upper_count())
    throw std::invalid_argument("run_ensemble: channel count must equal the number of upper levels");
  if (static_cast<std::size_t>(psi0.size()) != system.dimension())
    throw std::invalid_argument("run_ensemble: initial state has the wrong dimension");
  Pipeline p;
  p.fine = grid.refined(2);
  RiccatiOptions ropts;
  ropts.substeps = options.riccati_substeps;
  ropts.estimate_error = false;
  p.field = solve_F_ou(system, kernel, p.fine, ropts);
  if (!p.field.pole_free())
    throw PoleError("run_ensemble: coefficient field has a pole inside the window", *p.field.pole_time);
  p.factor = build_covariance(kernel, p.fine, options.covariance_cap);
  if (mode == QsdMode::nonlinear) p.shift.emplace(kernel, p.fine, options.convention);
  return p;
}

// Runs `per_path(i, acc)` for i in [0, count) across workers, each with its
// own accumulator, and merges them.
template <class MakeAcc, class PerPath>
EnsembleAccumulator parallel_reduce(std::size_t count, unsigned threads, const MakeAcc& make_acc,
                                    const PerPath& per_path) {
  unsigned workers = threads != 0 ? threads : std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, count));

  std::vector<EnsembleAccumulator> partial;
  partial.reserve(workers);
  for (unsigned w = 0; w < workers; ++w) partial.push_back(make_acc());

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&](unsigned w) {
    try {
      for (std::size_t i = next.fetch_add(1); i < count && !failed.load(); i = next.fetch_add(1))
        per_path(i, partial[w]);
    } catch (...) {
      std::lock_guard lock(error_mutex);
      if (!error) error = std::current_exception();
      failed.store(true);
    }
  };

  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }
  if (error) std::rethrow_exception(error);

  EnsembleAccumulator total = make_acc();
  for (const auto& acc : partial) total.merge(acc);
  return total;
}

}  // namespace

EnsembleAccumulator::EnsembleAccumulator(std::size_t slots, Eigen::Index rows, Eigen::Index cols)
    : slots_(slots), rows_(rows), cols_(cols) {
  const std::size_t scalars = slots * static_cast<std::size_t>(rows * cols) * 2;
  sum_.assign(scalars, 0);
  sum_sq_.assign(scalars, 0);
}

void EnsembleAccumulator::add(std::span<const CMatrix> values) {
  if (values.size() != slots_) throw std::invalid_argument("EnsembleAccumulator::add: wrong number of slots");
  std::size_t idx = 0;
  for (const CMatrix& v : values) {
    if (v.rows() != rows_ || v.cols() != cols_) throw std::invalid_argument("EnsembleAccumulator::add: shape mismatch");
    for (Eigen::Index c = 0; c < cols_; ++c)
      for (Eigen::Index r = 0; r < rows_; ++r) {
        for (double part : {v(r, c).real(), v(r, c).imag()}) {
          checked_add(sum_[idx], to_fixed(part));
          checked_add(sum_sq_[idx], fixed_square(part));
          ++idx;
        }
      }
  }
  ++count_;
}

void EnsembleAccumulator::merge(const EnsembleAccumulator& other) {
  if (other.slots_ != slots_ || other.rows_ != rows_ || other.cols_ != cols_)
    throw std::invalid_argument("EnsembleAccumulator::merge: shape mismatch");
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    checked_add(sum_[i], other.sum_[i]);
    checked_add(sum_sq_[i], other.sum_sq_[i]);
  }
  count_ += other.count_;
}

SampleStatistics EnsembleAccumulator::statistics() const {
  SampleStatistics stats;
  stats.count = count_;
  stats.mean.reserve(slots_);
  stats.std_error.reserve(slots_);
  const auto n = static_cast<long double>(count_);
  std::size_t idx = 0;
  for (std::size_t s = 0; s < slots_; ++s) {
    CMatrix mean(rows_, cols_), se(rows_, cols_);
    for (Eigen::Index c = 0; c < cols_; ++c)
      for (Eigen::Index r = 0; r < rows_; ++r) {
        double parts_mean[2], parts_se[2];
        for (int part = 0; part < 2; ++part, ++idx) {
          const long double sum = from_fixed(sum_[idx]);
          const long double sq = from_fixed(sum_sq_[idx]);
          parts_mean[part] = count_ > 0 ? static_cast<double>(sum / n) : std::numeric_limits<double>::quiet_NaN();
          if (count_ < 2) {
            parts_se[part] = std::numeric_limits<double>::quiet_NaN();
          } else {
            // Differences below the rounding of the squares and of the
            // long double cancellation are not resolved: report zero.
            const long double raw = sq - sum * sum / n;
            const long double resolution =
                n * std::ldexp(1.0L, -kFractionBits) + 8.0L * std::numeric_limits<long double>::epsilon() * sq;
            const long double var = raw <= resolution ? 0.0L : raw / (n - 1);
            parts_se[part] = static_cast<double>(std::sqrt(var / n));
          }
        }
        mean(r, c) = {parts_mean[0], parts_mean[1]};
        se(r, c) = {parts_se[0], parts_se[1]};
      }
    stats.mean.push_back(std::move(mean));
    stats.std_error.push_back(std::move(se));
  }
  return stats;
}

EnsembleAccumulator density_accumulator(const TrajectoryState& first) {
  const Eigen::Index dim = first.psi.empty() ? 0 : first.psi.front().size();
  return EnsembleAccumulator(first.grid.points(), dim, dim);
}

void add_trajectory(EnsembleAccumulator& acc, const TrajectoryState& trajectory) {
  std::vector<CMatrix> outer;
  outer.reserve(trajectory.psi.size());
  for (const CVector& psi : trajectory.psi) outer.push_back(psi * psi.adjoint());
  acc.add(outer);
}

EnsembleEstimate make_estimate(const TimeGrid& grid, QsdMode mode, const EnsembleAccumulator& acc) {
  SampleStatistics stats = acc.statistics();
  EnsembleEstimate est;
  est.grid = grid;
  est.mode = mode;
  est.count = stats.count;
  est.mean = std::move(stats.mean);
  est.std_error = std::move(stats.std_error);
  est.normalized.reserve(est.mean.size());
  for (const CMatrix& m : est.mean) {
    if (mode == QsdMode::nonlinear) {
      est.normalized.push_back(m);
    } else {
      const double tr = m.trace().real();
      est.normalized.push_back(tr > 0.0 ? CMatrix(m / tr) : m);
    }
  }
  return est;
}

EnsembleEstimate ensemble_density(std::span<const TrajectoryState> trajectories) {
  if (trajectories.size() < 2) throw std::invalid_argument("ensemble_density: need at least two trajectories");
  const TrajectoryState& first = trajectories.front();
  EnsembleAccumulator acc = density_accumulator(first);
  for (const TrajectoryState& t : trajectories) {
    if (!(t.grid == first.grid) || t.psi.size() != first.psi.size())
      throw std::invalid_argument("ensemble_density: trajectories do not share a grid");
    if (t.mode != first.mode) throw std::invalid_argument("ensemble_density: mixed linear and nonlinear trajectories");
    add_trajectory(acc, t);
  }
  return make_estimate(first.grid, first.mode, acc);
}

EnsembleEstimate run_ensemble(const SystemSpec& system, const CorrelationKernel& kernel, const CVector& psi0,
                              const TimeGrid& grid, std::size_t count, std::uint64_t seed, QsdMode mode,
                              const EnsembleOptions& options) {
  const Pipeline pipe = prepare(system, kernel, psi0, grid, count, mode, options);
  const auto dim = static_cast<Eigen::Index>(system.dimension());
  auto make_acc = [&] { return EnsembleAccumulator(grid.points(), dim, dim); };
  auto per_path = [&](std::size_t i, EnsembleAccumulator& acc) {
    const NoisePath path = sample_path(pipe.factor, seed, options.first_index + i);
    const TrajectoryState traj = mode == QsdMode::linear ? evolve_linear(system, pipe.field, path, psi0)
                                                         : evolve_nonlinear(system, pipe.field, path, psi0, *pipe.shift);
    add_trajectory(acc, traj);
  };
  const EnsembleAccumulator total = parallel_reduce(count, options.threads, make_acc, per_path);
  return make_estimate(grid, mode, total);
}

SampleStatistics novikov_check(const SystemSpec& system, const CorrelationKernel& kernel, const CVector& psi0,
                               const TimeGrid& grid, std::size_t count, std::uint64_t seed,
                               const EnsembleOptions& options) {
  const Pipeline pipe = prepare(system, kernel, psi0, grid, count, QsdMode::linear, options);
  const auto dim = static_cast<Eigen::Index>(system.dimension());
  auto make_acc = [&] { return EnsembleAccumulator(grid.points() * system.upper_count(), dim, dim); };
  auto per_path = [&](std::size_t i, EnsembleAccumulator& acc) {
    const NoisePath path = sample_path(pipe.factor, seed, options.first_index + i);
    const TrajectoryState traj = evolve_linear(system, pipe.field, path, psi0);
    acc.add(novikov_residual(system, pipe.field, path, traj));
  };
  return parallel_reduce(count, options.threads, make_acc, per_path).statistics();
}

}  // namespace veeqsd
