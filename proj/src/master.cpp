#include "veeqsd/master.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace veeqsd {

namespace {

void require_density(const SystemSpec& system, const CMatrix& rho0, const char* who) {
  const DensityReport r = validate_density(system, rho0);
  if (!r.passed)
    throw std::invalid_argument(std::string(who) + ": initial state is not a valid density matrix (trace defect " +
                                std::to_string(r.trace_defect) + ", min eigenvalue " +
                                std::to_string(r.min_eigenvalue) + ")");
}

double excited_population(const CMatrix& rho, std::size_t M) {
  double p = 0.0;
  for (std::size_t m = 0; m < M; ++m) p += rho(m, m).real();
  return p;
}

double clamp_population(double p, double upper, double t) {
  constexpr double tol = 1e-10;
  if (!std::isfinite(p) || p < -tol || p > upper + tol)
    throw NumericalError("excited population " + std::to_string(p) + " out of range at t = " + std::to_string(t));
  return std::clamp(p, 0.0, upper);
}

CMatrix normalized_block(const CMatrix& rho, std::size_t M, double p) {
  const auto m = static_cast<Eigen::Index>(M);
  if (p <= 0.0) return CMatrix::Zero(m, m);
  return rho.topLeftCorner(m, m) / p;
}

template <class Rhs>
void rk4_step(CMatrix& x, double h, const Rhs& f0, const Rhs& fmid, const Rhs& f1) {
  const CMatrix k1 = f0(x);
  const CMatrix k2 = fmid(x + 0.5 * h * k1);
  const CMatrix k3 = fmid(x + 0.5 * h * k2);
  const CMatrix k4 = f1(x + h * k3);
  x += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

}  // namespace

PropagatorPair propagate_pair(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid,
                              std::size_t substeps) {
  if (kernel.size() != system.upper_count())
    throw std::invalid_argument("propagate_pair: channel count must equal the number of upper levels");
  if (substeps < 1) throw std::invalid_argument("propagate_pair: substeps must be >= 1");
  const auto M = static_cast<Eigen::Index>(system.upper_count());
  const double h = grid.dt / static_cast<double>(substeps);

  CMatrix K = CMatrix::Zero(2 * M, 2 * M);
  K.topLeftCorner(M, M) = -kI * system.excited_hamiltonian();
  K.topRightCorner(M, M) = -CMatrix::Identity(M, M);
  K.bottomLeftCorner(M, M) = kernel.at_zero();
  for (Eigen::Index m = 0; m < M; ++m)
    K(M + m, M + m) = -cplx(kernel.channel(m).gamma, kernel.channel(m).Omega);

  // One classical RK4 step of X' = K X is X <- (1 + hK + (hK)^2/2 + (hK)^3/6 + (hK)^4/24) X.
  const CMatrix hK = h * K;
  CMatrix step = CMatrix::Identity(2 * M, 2 * M);
  CMatrix term = CMatrix::Identity(2 * M, 2 * M);
  for (int order = 1; order <= 4; ++order) {
    term = (term * hK) / static_cast<double>(order);
    step += term;
  }

  PropagatorPair pair;
  pair.grid = grid;
  pair.O.reserve(grid.points());
  pair.Y.reserve(grid.points());

  CMatrix X = CMatrix::Zero(2 * M, M);
  X.topRows(M) = CMatrix::Identity(M, M);
  CMatrix next(2 * M, M);
  pair.O.push_back(X.topRows(M));
  pair.Y.push_back(X.bottomRows(M));
  for (std::size_t k = 1; k <= grid.steps; ++k) {
    for (std::size_t sub = 0; sub < substeps; ++sub) {
      next.noalias() = step * X;
      X.swap(next);
    }
    if (!X.allFinite()) throw NumericalError("propagate_pair: non-finite propagator at t = " + std::to_string(grid.time(k)));
    pair.O.push_back(X.topRows(M));
    pair.Y.push_back(X.bottomRows(M));
  }
  return pair;
}

MasterSolution assemble_state(const SystemSpec& system, const PropagatorPair& pair, const CMatrix& rho0) {
  require_density(system, rho0, "assemble_state");
  const auto M = static_cast<Eigen::Index>(system.upper_count());
  const auto g = static_cast<Eigen::Index>(system.ground());

  const CMatrix excited0 = rho0.topLeftCorner(M, M);
  const CVector coherence0 = rho0.block(0, g, M, 1);
  const double ground0 = rho0(g, g).real();
  const double excited_trace0 = excited0.trace().real();

  MasterSolution sol;
  sol.grid = pair.grid;
  sol.rho.reserve(pair.O.size());
  sol.p.reserve(pair.O.size());
  sol.rho_e.reserve(pair.O.size());
  for (std::size_t k = 0; k < pair.O.size(); ++k) {
    const CMatrix& O = pair.O[k];
    CMatrix rho = CMatrix::Zero(M + 1, M + 1);
    rho.topLeftCorner(M, M) = O * excited0 * O.adjoint();
    const double p = clamp_population(rho.topLeftCorner(M, M).trace().real(), excited_trace0, pair.grid.time(k));
    const CVector coh = O * coherence0;
    rho.block(0, g, M, 1) = coh;
    rho.block(g, 0, 1, M) = coh.adjoint();
    rho(g, g) = ground0 + excited_trace0 - p;
    sol.rho_e.push_back(normalized_block(rho, system.upper_count(), p));
    sol.p.push_back(p);
    sol.rho.push_back(std::move(rho));
  }
  return sol;
}

MasterSolution integrate_master_direct(const SystemSpec& system, const CoefficientField& field, const CMatrix& rho0) {
  require_density(system, rho0, "integrate_master_direct");
  if (!field.pole_free())
    throw PoleError("integrate_master_direct: coefficient field has a pole; use the propagator path",
                    *field.pole_time);
  if (field.values.size() != field.grid.points())
    throw std::invalid_argument("integrate_master_direct: field does not cover its grid");
  if (field.grid.steps % 2 != 0)
    throw std::invalid_argument("integrate_master_direct: field grid must have an even number of steps");
  if (field.channels() != system.upper_count())
    throw std::invalid_argument("integrate_master_direct: field size does not match the system");

  const std::size_t M = system.upper_count();
  const CMatrix& H = system.hamiltonian();
  std::vector<CMatrix> L, Ld;
  for (std::size_t m = 0; m < M; ++m) {
    L.push_back(lowering_operator(system, m));
    Ld.push_back(L.back().adjoint());
  }

  auto generator = [&](const CMatrix& F) {
    return [&, F](const CMatrix& rho) {
      CMatrix out = -kI * (H * rho - rho * H);
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t p = 0; p < M; ++p) {
          const CMatrix jump = L[p] * rho * Ld[m];
          out += F(m, p) * (jump - Ld[m] * L[p] * rho);
          out += std::conj(F(p, m)) * (jump - rho * Ld[m] * L[p]);
        }
      return out;
    };
  };

  const TimeGrid out_grid{2.0 * field.grid.dt, field.grid.steps / 2};
  const double h = out_grid.dt;
  MasterSolution sol;
  sol.grid = out_grid;
  CMatrix rho = rho0;
  const double trace0 = rho0.trace().real();
  for (std::size_t k = 0;; ++k) {
    const double p = clamp_population(excited_population(rho, M), trace0, out_grid.time(k));
    sol.p.push_back(p);
    sol.rho_e.push_back(normalized_block(rho, M, p));
    sol.rho.push_back(rho);
    if (k == out_grid.steps) break;
    const auto f0 = generator(field.at(2 * k));
    const auto fm = generator(field.at(2 * k + 1));
    const auto f1 = generator(field.at(2 * k + 2));
    rk4_step(rho, h, f0, fm, f1);
    if (!rho.allFinite()) throw NumericalError("integrate_master_direct: non-finite state");
    if (std::abs(rho.trace().real() - trace0) > 1e-8)
      throw NumericalError("integrate_master_direct: trace drift beyond 1e-8");
  }
  return sol;
}

MasterSolution markov_master(const SystemSpec& system, std::span<const cplx> kappas, const CMatrix& rho0,
                             const TimeGrid& grid, std::size_t substeps) {
  require_density(system, rho0, "markov_master");
  if (substeps < 1) throw std::invalid_argument("markov_master: substeps must be >= 1");
  const auto [plus, minus] = superposition_states(system, kappas);
  (void)minus;
  const double rate = 0.5 * (std::norm(kappas[0]) + std::norm(kappas[1]));
  const CMatrix& H = system.hamiltonian();
  const CMatrix Leff = level_state(system, system.ground()).amplitudes * plus.amplitudes.adjoint();
  const CMatrix Ld = Leff.adjoint();
  const CMatrix LdL = Ld * Leff;

  auto rhs = [&](const CMatrix& rho) {
    const CMatrix jump = Leff * rho * Ld;
    CMatrix out = -kI * (H * rho - rho * H);
    out += rate * ((jump - LdL * rho) + (jump - rho * LdL));
    return out;
  };

  const std::size_t M = system.upper_count();
  const double h = grid.dt / static_cast<double>(substeps);
  MasterSolution sol;
  sol.grid = grid;
  CMatrix rho = rho0;
  const double trace0 = rho0.trace().real();
  for (std::size_t k = 0;; ++k) {
    const double p = clamp_population(excited_population(rho, M), trace0, grid.time(k));
    sol.p.push_back(p);
    sol.rho_e.push_back(normalized_block(rho, M, p));
    sol.rho.push_back(rho);
    if (k == grid.steps) break;
    for (std::size_t sub = 0; sub < substeps; ++sub) rk4_step(rho, h, rhs, rhs, rhs);
  }
  return sol;
}

}  // namespace veeqsd
