#include <doctest.h>

#include <random>

#include "support.hpp"
#include "veeqsd/ensemble.hpp"
#include "veeqsd/master.hpp"
#include "veeqsd/trajectories.hpp"

using namespace veeqsd;
using namespace veeqsd::testing;

namespace {

// Field, noise factor and shift kernel on the refined grid of `grid`.
struct Setup {
  TimeGrid grid;
  TimeGrid fine;
  CoefficientField field;
  CovarianceFactor factor;
  ShiftKernel shift;
};

Setup setup(const VeeCase& c, const TimeGrid& grid) {
  const TimeGrid fine = grid.refined(2);
  CoefficientField field = solve_F_ou(c.system, c.kernel, fine);
  REQUIRE(field.pole_free());
  return {grid, fine, std::move(field), build_covariance(c.kernel, fine),
          ShiftKernel(c.kernel, fine, ShiftConvention::conjugated)};
}

CVector excited(double a, double b) {
  CVector v(3);
  v << a, b, 0.0;
  return v.normalized();
}

MasterSolution master(const VeeCase& c, const TimeGrid& grid, const CVector& psi0) {
  return assemble_state(c.system, propagate_pair(c.system, c.kernel, grid), projector(psi0));
}

// Largest |mean - reference| / se over real and imaginary parts, skipping
// entries whose standard error is below `floor`.
double max_z(const std::vector<CMatrix>& mean, const std::vector<CMatrix>& se, const std::vector<CMatrix>& ref,
             double floor, double& abs_dev) {
  double worst = 0.0;
  abs_dev = 0.0;
  for (std::size_t k = 0; k < mean.size(); ++k)
    for (Eigen::Index i = 0; i < mean[k].size(); ++i) {
      const cplx d = mean[k].data()[i] - ref[k].data()[i];
      const cplx s = se[k].data()[i];
      abs_dev = std::max(abs_dev, std::abs(d));
      if (s.real() > floor) worst = std::max(worst, std::abs(d.real()) / s.real());
      else CHECK(std::abs(d.real()) <= 1e-8);
      if (s.imag() > floor) worst = std::max(worst, std::abs(d.imag()) / s.imag());
      else CHECK(std::abs(d.imag()) <= 1e-8);
    }
  return worst;
}

}  // namespace

TEST_CASE("free evolution without coupling") {
  const VeeCase c = vee(1.0, 1.5, make_channel(0.0, 1.0, 1.0), make_channel(0.0, 1.0, 1.0));
  const Setup s = setup(c, TimeGrid::from_horizon(0.005, 3.0));
  std::mt19937_64 rng(1);
  const CVector psi0 = random_state(3, rng);
  const NoisePath path = sample_path(s.factor, 1, 0);
  const TrajectoryState lin = evolve_linear(c.system, s.field, path, psi0);
  const TrajectoryState non = evolve_nonlinear(c.system, s.field, path, psi0, s.shift);
  for (std::size_t k = 0; k < s.grid.points(); ++k) {
    const CVector expected = expm(-kI * s.grid.time(k) * c.system.hamiltonian()) * psi0;
    CHECK((lin.psi[k] - expected).norm() < 1e-10);
    CHECK((non.psi[k] - expected).norm() < 1e-10);
  }
  const EnsembleEstimate e = run_ensemble(c.system, c.kernel, psi0, s.grid, 1, 3, QsdMode::nonlinear);
  CHECK(e.count == 1);
  const CVector last = expm(-kI * s.grid.horizon() * c.system.hamiltonian()) * psi0;
  CHECK(max_abs(e.mean.back() - projector(last)) < 1e-10);
}

TEST_CASE("zero noise on the bright state follows the closed form") {
  const VeeCase c = fig2_case(1.0);
  const TimeGrid grid = TimeGrid::from_horizon(0.002, 5.0);
  const CoefficientField field = solve_F_ou(c.system, c.kernel, grid.refined(2));
  const CVector phi = excited(1.0, 1.0);
  NoisePath zero;
  zero.zstar.assign(2 * field.grid.points(), 0.0);
  const TrajectoryState traj = evolve_linear(c.system, field, zero, phi);
  const SingleChannelParams p = single_channel_params(c.system, c.kernel);
  double dev = 0.0;
  for (std::size_t k = 0; k < grid.points(); ++k) {
    const double t = grid.time(k);
    dev = std::max(dev, std::abs(phi.dot(traj.psi[k]) - std::exp(-kI * t) * exp_integral_Q(p, t)));
    CHECK(std::abs(traj.psi[k](2)) == 0.0);
  }
  CHECK(dev < 1e-8);
}

TEST_CASE("ground state is stationary under the nonlinear equation") {
  const VeeCase c = fig3_case(1.0);
  const Setup s = setup(c, TimeGrid::from_horizon(0.002, 2.0));
  CVector g = CVector::Zero(3);
  g(2) = 1.0;
  for (std::uint64_t i = 0; i < 3; ++i) {
    const TrajectoryState traj = evolve_nonlinear(c.system, s.field, sample_path(s.factor, 17, i), g, s.shift);
    for (const CVector& psi : traj.psi) CHECK((psi - g).norm() < 1e-14);
  }
}

TEST_CASE("nonlinear trajectories keep unit norm") {
  const VeeCase c = fig4_case(1.0, 0.33);
  const Setup s = setup(c, TimeGrid::from_horizon(0.005, 3.0));
  std::mt19937_64 rng(2);
  for (std::uint64_t i = 0; i < 5; ++i) {
    const TrajectoryState traj = evolve_nonlinear(c.system, s.field, sample_path(s.factor, 4, i), random_state(3, rng), s.shift);
    for (const CVector& psi : traj.psi) CHECK(std::abs(psi.norm() - 1.0) < 1e-9);
  }
}

TEST_CASE("input validation") {
  const VeeCase c = fig3_case(1.0);
  const Setup s = setup(c, TimeGrid::from_horizon(0.01, 1.0));
  const NoisePath path = sample_path(s.factor, 1, 0);
  CHECK_THROWS_AS(evolve_linear(c.system, s.field, path, excited(1, 1) * 2.0), std::invalid_argument);
  NoisePath short_path = path;
  short_path.zstar.pop_back();
  CHECK_THROWS_AS(evolve_linear(c.system, s.field, short_path, excited(1, 1)), std::invalid_argument);
  const ShiftKernel other(c.kernel, TimeGrid{0.005, 10}, ShiftConvention::conjugated);
  CHECK_THROWS_AS(evolve_nonlinear(c.system, s.field, path, excited(1, 1), other), std::invalid_argument);

  const VeeCase pole = vee(1.0, 1.0, channel(1, 0.1, 1.0), channel(1, 0.1, 1.0));
  const CoefficientField F = solve_F_ou(pole.system, pole.kernel, TimeGrid::from_horizon(0.005, 10.0));
  REQUIRE_FALSE(F.pole_free());
  NoisePath zero;
  zero.zstar.assign(2 * F.grid.points(), 0.0);
  CHECK_THROWS_AS(evolve_linear(pole.system, F, zero, excited(1, 0)), PoleError);
  CHECK_THROWS_AS(run_ensemble(pole.system, pole.kernel, excited(1, 0), TimeGrid::from_horizon(0.01, 10.0), 2, 1,
                               QsdMode::linear),
                  PoleError);
}

TEST_CASE("ensemble statistics") {
  const VeeCase c = fig4_case(1.0, 0.67);
  const Setup s = setup(c, TimeGrid::from_horizon(0.01, 1.0));
  const CVector psi0 = excited(1.0, 0.0);

  SUBCASE("two identical trajectories") {
    const TrajectoryState t = evolve_nonlinear(c.system, s.field, sample_path(s.factor, 8, 0), psi0, s.shift);
    const std::vector<TrajectoryState> both{t, t};
    const EnsembleEstimate e = ensemble_density(both);
    for (std::size_t k = 0; k < t.psi.size(); ++k) {
      CHECK(max_abs(e.mean[k] - projector(t.psi[k])) < 1e-15);
      CHECK(max_abs(e.std_error[k]) == 0.0);
    }
  }
  SUBCASE("merging is exact and order-free") {
    std::vector<TrajectoryState> trajs;
    for (std::uint64_t i = 0; i < 7; ++i)
      trajs.push_back(evolve_linear(c.system, s.field, sample_path(s.factor, 8, i), psi0));
    EnsembleAccumulator all = density_accumulator(trajs[0]);
    for (const auto& t : trajs) add_trajectory(all, t);
    EnsembleAccumulator a = density_accumulator(trajs[0]), b = density_accumulator(trajs[0]);
    for (std::size_t i = 0; i < 7; ++i) add_trajectory(i % 3 == 0 ? a : b, trajs[6 - i]);
    EnsembleAccumulator ab = a, ba = b;
    ab.merge(b);
    ba.merge(a);
    CHECK(ab == all);
    CHECK(ba == all);
    const SampleStatistics x = ab.statistics(), y = all.statistics();
    for (std::size_t k = 0; k < x.mean.size(); ++k) {
      CHECK(x.mean[k] == y.mean[k]);
      CHECK(x.std_error[k] == y.std_error[k]);
    }
  }
  SUBCASE("standard error against a direct formula") {
    EnsembleAccumulator acc(1, 1, 1);
    const std::vector<double> xs{0.5, -1.25, 2.0, 0.125};
    for (double x : xs) {
      const std::vector<CMatrix> v{CMatrix::Constant(1, 1, cplx(x, 2.0 * x))};
      acc.add(v);
    }
    const SampleStatistics st = acc.statistics();
    double mean = 0.0, var = 0.0;
    for (double x : xs) mean += x / 4.0;
    for (double x : xs) var += (x - mean) * (x - mean) / 3.0;
    CHECK(st.mean[0](0, 0).real() == doctest::Approx(mean).epsilon(1e-15));
    CHECK(st.std_error[0](0, 0).real() == doctest::Approx(std::sqrt(var / 4.0)).epsilon(1e-12));
    CHECK(st.std_error[0](0, 0).imag() == doctest::Approx(2.0 * std::sqrt(var / 4.0)).epsilon(1e-12));
  }
  SUBCASE("single sample has undefined standard error") {
    EnsembleAccumulator acc(1, 1, 1);
    acc.add(std::vector<CMatrix>{CMatrix::Constant(1, 1, 1.0)});
    CHECK(std::isnan(acc.statistics().std_error[0](0, 0).real()));
  }
  SUBCASE("out-of-range entries are rejected") {
    EnsembleAccumulator acc(1, 1, 1);
    CHECK_THROWS_AS(acc.add(std::vector<CMatrix>{CMatrix::Constant(1, 1, 1e7)}), NumericalError);
    CHECK_THROWS_AS(acc.add(std::vector<CMatrix>{CMatrix::Constant(1, 1, std::nan(""))}), NumericalError);
  }
  SUBCASE("ensemble_density preconditions") {
    const TrajectoryState lin = evolve_linear(c.system, s.field, sample_path(s.factor, 8, 0), psi0);
    const TrajectoryState non = evolve_nonlinear(c.system, s.field, sample_path(s.factor, 8, 0), psi0, s.shift);
    CHECK_THROWS_AS(ensemble_density(std::vector<TrajectoryState>{lin}), std::invalid_argument);
    CHECK_THROWS_AS(ensemble_density(std::vector<TrajectoryState>{lin, non}), std::invalid_argument);
    TrajectoryState shorter = lin;
    shorter.psi.pop_back();
    shorter.grid.steps -= 1;
    CHECK_THROWS_AS(ensemble_density(std::vector<TrajectoryState>{lin, shorter}), std::invalid_argument);
  }
}

TEST_CASE("ensembles are independent of the worker schedule") {
  const VeeCase c = fig4_case(0.5, 0.33);
  const TimeGrid grid = TimeGrid::from_horizon(0.01, 1.0);
  const CVector psi0 = excited(1.0, -1.0);
  for (QsdMode mode : {QsdMode::linear, QsdMode::nonlinear}) {
    EnsembleOptions one, three;
    one.threads = 1;
    three.threads = 3;
    const EnsembleEstimate a = run_ensemble(c.system, c.kernel, psi0, grid, 40, 123, mode, one);
    const EnsembleEstimate b = run_ensemble(c.system, c.kernel, psi0, grid, 40, 123, mode, three);
    for (std::size_t k = 0; k < grid.points(); ++k) {
      CHECK(a.mean[k] == b.mean[k]);
      CHECK(a.std_error[k] == b.std_error[k]);
    }
    // Split at index 25: the pooled accumulator is the same.
    EnsembleOptions tail = one;
    tail.first_index = 25;
    const EnsembleEstimate head = run_ensemble(c.system, c.kernel, psi0, grid, 25, 123, mode, one);
    const EnsembleEstimate rest = run_ensemble(c.system, c.kernel, psi0, grid, 15, 123, mode, tail);
    for (std::size_t k = 0; k < grid.points(); k += 20) {
      const CMatrix pooled = (25.0 * head.mean[k] + 15.0 * rest.mean[k]) / 40.0;
      CHECK(max_abs(pooled - a.mean[k]) < 1e-14);
    }
  }
}

TEST_CASE("linear ensemble reproduces the master solution") {
  const VeeCase c = vee(1.0, 1.0, channel(1, 1.0, 0.99), channel(1, 0.5, 0.7));
  const TimeGrid grid = TimeGrid::from_horizon(0.01, 1.0);
  const CVector psi0 = excited(1.0, 0.0);
  const EnsembleEstimate e = run_ensemble(c.system, c.kernel, psi0, grid, 20000, 2024, QsdMode::linear);
  const MasterSolution m = master(c, grid, psi0);
  double dev = 0.0;
  const double z = max_z(e.mean, e.std_error, m.rho, 1e-12, dev);
  CAPTURE(dev);
  CHECK(z < 4.0);
}

TEST_CASE("short-time agreement of both modes") {
  const VeeCase c = fig4_case(1.0, 0.33);
  const TimeGrid grid = TimeGrid::from_horizon(0.01, 0.1);
  const CVector psi0 = excited(1.0, 0.5);
  const MasterSolution m = master(c, grid, psi0);
  for (QsdMode mode : {QsdMode::linear, QsdMode::nonlinear}) {
    const EnsembleEstimate e = run_ensemble(c.system, c.kernel, psi0, grid, 200, 55, mode);
    double dev = 0.0;
    CHECK(max_z(e.mean, e.std_error, m.rho, 1e-12, dev) < 5.0);
  }
}

TEST_CASE("dark state is preserved by the ensemble") {
  const VeeCase c = fig3_case(5.0);
  const TimeGrid grid = TimeGrid::from_horizon(0.002, 1.0);
  const CVector phi = excited(1.0, -1.0);
  const EnsembleEstimate e = run_ensemble(c.system, c.kernel, phi, grid, 50, 9, QsdMode::nonlinear);
  for (std::size_t k = 0; k < grid.points(); ++k) {
    for (Eigen::Index i : {0, 1}) {
      const double se = e.std_error[k](i, i).real();
      CHECK(std::abs(e.mean[k](i, i).real() - 0.5) <= std::max(4.0 * se, 1e-8));
    }
    CHECK(std::abs(e.mean[k](2, 2)) <= std::max(4.0 * e.std_error[k](2, 2).real(), 1e-8));
  }
}

TEST_CASE("statistical Novikov identity") {
  const VeeCase c = vee(1.0, 1.0, channel(1, 1.0, 0.99), channel(1, 0.5, 0.7));
  const TimeGrid grid = TimeGrid::from_horizon(0.01, 1.0);
  const SampleStatistics st = novikov_check(c.system, c.kernel, excited(1.0, 1.0), grid, 4000, 31);
  const std::size_t M = 2;
  double worst = 0.0;
  for (std::size_t k = 0; k < grid.points(); k += 10)
    for (std::size_t m = 0; m < M; ++m) {
      const CMatrix& mean = st.mean[k * M + m];
      const CMatrix& se = st.std_error[k * M + m];
      for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const cplx v = mean.data()[i], s = se.data()[i];
        if (s.real() > 0) worst = std::max(worst, std::abs(v.real()) / s.real());
        else CHECK(v.real() == 0.0);
        if (s.imag() > 0) worst = std::max(worst, std::abs(v.imag()) / s.imag());
        else CHECK(v.imag() == 0.0);
      }
    }
  CHECK(worst < 4.0);
}
