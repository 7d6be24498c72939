#include "veeqsd/trajectories.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace veeqsd {

namespace {

void check_inputs(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                  const CVector& psi0, const char* who) {
  const std::string name(who);
  if (!field.pole_free()) throw PoleError(name + ": coefficient field has a pole", *field.pole_time);
  if (field.values.size() != field.grid.points()) throw std::invalid_argument(name + ": field does not cover its grid");
  if (field.grid.steps % 2 != 0) throw std::invalid_argument(name + ": field grid must have an even number of steps");
  if (field.channels() != system.upper_count()) throw std::invalid_argument(name + ": field size does not match the system");
  if (path.zstar.size() != system.upper_count() * field.grid.points())
    throw std::invalid_argument(name + ": noise path does not match the field grid");
  if (static_cast<std::size_t>(psi0.size()) != system.dimension())
    throw std::invalid_argument(name + ": initial state has the wrong dimension");
  if (std::abs(psi0.squaredNorm() - 1.0) > 1e-9) throw std::invalid_argument(name + ": initial state is not normalized");
}

// Samples of the drive at one stage time.
struct Stage {
  const CMatrix* F;
  const cplx* zstar;  // M values
};

class LinearRhs {
 public:
  explicit LinearRhs(const SystemSpec& system) : system_(system), M_(system.upper_count()) {}

  CVector operator()(const CVector& psi, const Stage& s) const {
    const auto M = static_cast<Eigen::Index>(M_);
    CVector out(psi.size());
    out.head(M) = -(*s.F) * psi.head(M);
    cplx ground{};
    for (Eigen::Index m = 0; m < M; ++m) ground += s.zstar[m] * psi(m);
    out(M) = ground;
    for (Eigen::Index i = 0; i <= M; ++i) out(i) -= kI * system_.hamiltonian()(i, i) * psi(i);
    return out;
  }

 private:
  const SystemSpec& system_;
  std::size_t M_;
};

class NonlinearRhs {
 public:
  explicit NonlinearRhs(const SystemSpec& system) : system_(system), M_(system.upper_count()) {}

  // `ztilde` is the recentred noise at the stage time.
  CVector operator()(const CVector& psi, const CMatrix& F, const cplx* ztilde) const {
    const auto M = static_cast<Eigen::Index>(M_);
    const double n2 = psi.squaredNorm();
    const cplx g = psi(M);
    const CVector q = F * psi.head(M);

    CVector out(psi.size());
    for (Eigen::Index i = 0; i <= M; ++i) out(i) = -kI * system_.hamiltonian()(i, i) * psi(i);
    cplx scalar{};  // coefficient of psi collected from the <.> terms
    for (Eigen::Index m = 0; m < M; ++m) {
      const cplx e = psi(m);
      const cplx L_mean = std::conj(g) * e / n2;
      const cplx Ld_mean = std::conj(e) * g / n2;
      // z~* D(L_m) psi
      out(M) += ztilde[m] * e;
      scalar -= ztilde[m] * L_mean;
      // -D(D(L_m^+) Qbar_m) psi; Qbar_m psi = q_m |g>
      out(m) -= q(m);
      out(M) += Ld_mean * q(m);
      scalar += (std::conj(e) * q(m) - Ld_mean * std::conj(g) * q(m)) / n2;
    }
    out += scalar * psi;
    return out;
  }

 private:
  const SystemSpec& system_;
  std::size_t M_;
};

void require_finite(const CVector& psi, double t, const char* who) {
  if (!psi.allFinite()) throw NumericalError(std::string(who) + ": non-finite amplitude at t = " + std::to_string(t));
}

}  // namespace

const char* qsd_mode_name(QsdMode mode) { return mode == QsdMode::linear ? "linear" : "nonlinear"; }

TrajectoryState evolve_linear(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                              const CVector& psi0) {
  check_inputs(system, field, path, psi0, "evolve_linear");
  const std::size_t M = system.upper_count();
  const TimeGrid grid{2.0 * field.grid.dt, field.grid.steps / 2};
  const double h = grid.dt;
  const LinearRhs rhs(system);
  auto stage = [&](std::size_t i) { return Stage{&field.at(i), path.zstar.data() + i * M}; };

  TrajectoryState traj;
  traj.grid = grid;
  traj.mode = QsdMode::linear;
  traj.psi.reserve(grid.points());
  CVector psi = psi0;
  traj.psi.push_back(psi);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const Stage s0 = stage(2 * k), s1 = stage(2 * k + 1), s2 = stage(2 * k + 2);
    const CVector k1 = rhs(psi, s0);
    const CVector k2 = rhs(psi + 0.5 * h * k1, s1);
    const CVector k3 = rhs(psi + 0.5 * h * k2, s1);
    const CVector k4 = rhs(psi + h * k3, s2);
    psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(psi, grid.time(k + 1), "evolve_linear");
    traj.psi.push_back(psi);
  }
  return traj;
}

TrajectoryState evolve_nonlinear(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                                 const CVector& psi0, const ShiftKernel& shift) {
  check_inputs(system, field, path, psi0, "evolve_nonlinear");
  if (!(shift.grid() == field.grid) || shift.channels() != system.upper_count())
    throw std::invalid_argument("evolve_nonlinear: shift kernel does not match the field grid");
  const std::size_t M = system.upper_count();
  const std::size_t P = field.grid.points();
  const TimeGrid grid{2.0 * field.grid.dt, field.grid.steps / 2};
  const double h = grid.dt;
  const NonlinearRhs rhs(system);

  // <L_n^+> on the refined grid, channel-major; odd indices are midpoint averages.
  std::vector<cplx> ell(M * P);
  auto record = [&](std::size_t i, const CVector& psi) {
    const double n2 = psi.squaredNorm();
    for (std::size_t n = 0; n < M; ++n)
      ell[n * P + i] = std::conj(psi(static_cast<Eigen::Index>(n))) * psi(static_cast<Eigen::Index>(M)) / n2;
  };
  std::vector<cplx> z0(M), z1(M), z2(M);
  auto recentred = [&](std::size_t i, std::size_t known, std::vector<cplx>& out) {
    for (std::size_t m = 0; m < M; ++m)
      out[m] = path.zstar[i * M + m] + shift.shift_frozen_tail(m, i, known, ell);
  };

  TrajectoryState traj;
  traj.grid = grid;
  traj.mode = QsdMode::nonlinear;
  traj.psi.reserve(grid.points());
  CVector psi = psi0;
  traj.psi.push_back(psi);
  record(0, psi);
  for (std::size_t k = 0; k < grid.steps; ++k) {
    const std::size_t i0 = 2 * k;
    recentred(i0, i0, z0);
    recentred(i0 + 1, i0, z1);
    recentred(i0 + 2, i0, z2);
    const CVector k1 = rhs(psi, field.at(i0), z0.data());
    const CVector k2 = rhs(psi + 0.5 * h * k1, field.at(i0 + 1), z1.data());
    const CVector k3 = rhs(psi + 0.5 * h * k2, field.at(i0 + 1), z1.data());
    const CVector k4 = rhs(psi + h * k3, field.at(i0 + 2), z2.data());
    psi += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    require_finite(psi, grid.time(k + 1), "evolve_nonlinear");
    psi.normalize();
    traj.psi.push_back(psi);
    record(i0 + 2, psi);
    for (std::size_t n = 0; n < M; ++n) ell[n * P + i0 + 1] = 0.5 * (ell[n * P + i0] + ell[n * P + i0 + 2]);
  }
  return traj;
}

std::vector<CMatrix> novikov_residual(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                                      const TrajectoryState& trajectory) {
  const std::size_t M = system.upper_count();
  const auto Mi = static_cast<Eigen::Index>(M);
  if (trajectory.psi.size() * 2 != field.grid.points() + 1 || path.zstar.size() != M * field.grid.points())
    throw std::invalid_argument("novikov_residual: trajectory, field and path grids do not match");
  std::vector<CMatrix> out;
  out.reserve(trajectory.psi.size() * M);
  for (std::size_t k = 0; k < trajectory.psi.size(); ++k) {
    const CVector& psi = trajectory.psi[k];
    const CMatrix P = psi * psi.adjoint();
    const CVector q = field.at(2 * k) * psi.head(Mi);
    for (std::size_t m = 0; m < M; ++m) {
      CMatrix r = std::conj(path.zstar[2 * k * M + m]) * P;
      r.row(Mi) -= q(static_cast<Eigen::Index>(m)) * psi.adjoint();
      out.push_back(std::move(r));
    }
  }
  return out;
}

}  // namespace veeqsd
