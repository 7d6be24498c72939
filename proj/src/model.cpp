#include "veeqsd/model.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Eigenvalues>

namespace veeqsd {

TimeGrid TimeGrid::from_horizon(double dt, double horizon) {
  if (!(dt > 0.0) || !std::isfinite(dt)) throw std::invalid_argument("time grid: dt must be positive and finite");
  if (!(horizon >= 0.0) || !std::isfinite(horizon)) throw std::invalid_argument("time grid: horizon must be non-negative");
  const double n = horizon / dt;
  const double rounded = std::round(n);
  // Accept horizons that are an integer number of steps up to rounding noise.
  const auto steps = static_cast<std::size_t>(std::abs(n - rounded) < 1e-9 * std::max(1.0, n) ? rounded : std::ceil(n));
  return {dt, steps};
}

SystemSpec::SystemSpec(std::size_t upper_count, std::vector<double> energies) : energies_(std::move(energies)) {
  if (upper_count < 1) throw std::invalid_argument("system: upper_count must be >= 1");
  if (energies_.size() != upper_count)
    throw std::invalid_argument("system: expected " + std::to_string(upper_count) + " energies, got " +
                                std::to_string(energies_.size()));
  for (double w : energies_)
    if (!std::isfinite(w)) throw std::invalid_argument("system: level energies must be finite");
  hamiltonian_ = CMatrix::Zero(dimension(), dimension());
  for (std::size_t m = 0; m < upper_count; ++m) hamiltonian_(m, m) = energies_[m];
}

SystemSpec build_system(std::size_t upper_count, std::vector<double> energies) {
  return SystemSpec(upper_count, std::move(energies));
}

CMatrix lowering_operator(const SystemSpec& spec, std::size_t m) {
  if (m >= spec.upper_count()) throw std::out_of_range("lowering_operator: upper level index out of range");
  CMatrix op = CMatrix::Zero(spec.dimension(), spec.dimension());
  op(spec.ground(), m) = 1.0;
  return op;
}

bool PureState::in_excited_subspace(double tol) const {
  return amplitudes.size() > 0 && std::abs(amplitudes(amplitudes.size() - 1)) <= tol;
}

PureState level_state(const SystemSpec& spec, std::size_t level) {
  if (level >= spec.dimension()) throw std::out_of_range("level_state: level index out of range");
  PureState s{CVector::Zero(spec.dimension())};
  s.amplitudes(level) = 1.0;
  return s;
}

std::pair<PureState, PureState> superposition_states(const SystemSpec& spec, std::span<const cplx> kappas) {
  if (spec.upper_count() != 2) throw std::invalid_argument("superposition_states: requires exactly two upper levels");
  if (kappas.size() != 2) throw std::invalid_argument("superposition_states: requires two couplings");
  const double k = std::sqrt(std::norm(kappas[0]) + std::norm(kappas[1]));
  if (!(k > 0.0)) throw std::invalid_argument("superposition_states: couplings are all zero");

  PureState plus{CVector::Zero(3)};
  PureState minus{CVector::Zero(3)};
  plus.amplitudes(0) = kappas[0] / k;
  plus.amplitudes(1) = kappas[1] / k;
  minus.amplitudes(0) = kappas[1] / k;
  minus.amplitudes(1) = -kappas[0] / k;
  return {plus, minus};
}

DensityReport validate_density(const SystemSpec& spec, const CMatrix& rho, const DensityTolerances& tol) {
  const auto d = static_cast<Eigen::Index>(spec.dimension());
  if (rho.rows() != d || rho.cols() != d)
    throw std::invalid_argument("validate_density: expected a " + std::to_string(d) + "x" + std::to_string(d) +
                                " matrix");
  DensityReport r;
  r.hermiticity_defect = (rho - rho.adjoint()).cwiseAbs().maxCoeff();
  r.trace_defect = std::abs(rho.trace() - 1.0);
  const CMatrix herm = 0.5 * (rho + rho.adjoint());
  Eigen::SelfAdjointEigenSolver<CMatrix> es(herm, Eigen::EigenvaluesOnly);
  r.min_eigenvalue = es.eigenvalues().minCoeff();
  r.passed = r.hermiticity_defect <= tol.hermiticity && r.trace_defect <= tol.trace &&
             r.min_eigenvalue >= tol.min_eigenvalue;
  return r;
}

double trace_distance(const CMatrix& a, const CMatrix& b) {
  const CMatrix diff = a - b;
  Eigen::SelfAdjointEigenSolver<CMatrix> es(0.5 * (diff + diff.adjoint()), Eigen::EigenvaluesOnly);
  return 0.5 * es.eigenvalues().cwiseAbs().sum();
}

}  // namespace veeqsd
