#pragma once

// Vee-type level structure: M upper levels above a single ground level.
// Levels are indexed from 0; upper levels occupy 0..M-1 and the ground
// level sits last at index M with zero energy. hbar = 1 throughout.

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "veeqsd/types.hpp"

namespace veeqsd {

// Uniform grid t_k = k * dt, k = 0..steps.
struct TimeGrid {
  double dt = 0.0;
  std::size_t steps = 0;

  static TimeGrid from_horizon(double dt, double horizon);

  std::size_t points() const { return steps + 1; }
  double time(std::size_t k) const { return static_cast<double>(k) * dt; }
  double horizon() const { return time(steps); }
  // Same horizon, `factor` times more steps.
  TimeGrid refined(std::size_t factor) const { return {dt / static_cast<double>(factor), steps * factor}; }
  bool operator==(const TimeGrid&) const = default;
};

class SystemSpec {
 public:
  SystemSpec(std::size_t upper_count, std::vector<double> energies);

  std::size_t upper_count() const { return energies_.size(); }
  std::size_t dimension() const { return energies_.size() + 1; }
  std::size_t ground() const { return energies_.size(); }
  double energy(std::size_t m) const { return energies_.at(m); }
  const std::vector<double>& energies() const { return energies_; }

  // Full (M+1)x(M+1) diagonal Hamiltonian.
  const CMatrix& hamiltonian() const { return hamiltonian_; }
  // M x M block on the excited subspace.
  CMatrix excited_hamiltonian() const { return hamiltonian_.topLeftCorner(upper_count(), upper_count()); }

 private:
  std::vector<double> energies_;
  CMatrix hamiltonian_;
};

SystemSpec build_system(std::size_t upper_count, std::vector<double> energies);

// L_m = |g><m|.
CMatrix lowering_operator(const SystemSpec& spec, std::size_t m);

struct PureState {
  CVector amplitudes;

  bool in_excited_subspace(double tol = 0.0) const;
  CMatrix projector() const { return amplitudes * amplitudes.adjoint(); }
};

PureState level_state(const SystemSpec& spec, std::size_t level);

// Bright and dark superpositions of a two-upper-level system:
//   phi+ = (k1|1> + k2|2>)/k,  phi- = (k2|1> - k1|2>)/k,  k^2 = |k1|^2 + |k2|^2.
std::pair<PureState, PureState> superposition_states(const SystemSpec& spec, std::span<const cplx> kappas);

struct DensityTolerances {
  double hermiticity = 1e-10;
  double trace = 1e-9;
  double min_eigenvalue = -1e-10;
};

struct DensityReport {
  double hermiticity_defect = 0.0;  // max |rho - rho^dagger|
  double trace_defect = 0.0;        // |Tr rho - 1|
  double min_eigenvalue = 0.0;      // of the Hermitian part
  bool passed = false;
};

DensityReport validate_density(const SystemSpec& spec, const CMatrix& rho, const DensityTolerances& tol = {});

// 1/2 sum |eig(a - b)| for Hermitian a, b.
double trace_distance(const CMatrix& a, const CMatrix& b);

}  // namespace veeqsd
