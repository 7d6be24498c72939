#pragma once

// Exact reduced dynamics of the vee system.
//
// The excited block evolves as rho_e(t) = O(t) rho_e(0) O(t)^dagger with the
// decay operator dO/dt = (-i H_e - F(t)) O. Writing Y = F O turns the Riccati
// nonlinearity into the linear, pole-free pair
//
//   dO/dt = -i H_e O - Y,       dY/dt = alpha(0) O - diag(g_m + i W_m) Y,
//
// with O(0) = 1, Y(0) = 0. Wherever O is invertible, F = Y O^{-1}.

#include <cstddef>
#include <span>
#include <vector>

#include "veeqsd/coefficients.hpp"
#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"

namespace veeqsd {

struct PropagatorPair {
  TimeGrid grid;
  std::vector<CMatrix> O;
  std::vector<CMatrix> Y;
};

PropagatorPair propagate_pair(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid,
                              std::size_t substeps = 1);

struct MasterSolution {
  TimeGrid grid;
  std::vector<CMatrix> rho;    // full (M+1)x(M+1)
  std::vector<double> p;       // excited population
  std::vector<CMatrix> rho_e;  // normalized excited block (M x M); zero when p == 0
};

MasterSolution assemble_state(const SystemSpec& system, const PropagatorPair& pair, const CMatrix& rho0);

// Integrates
//   drho/dt = -i[H, rho] + sum_mp ( F_mp [L_p rho, L_m^+] + conj(F_pm) [L_p, rho L_m^+] )
// with RK4. The field must be pole-free and sampled at twice the output
// resolution: each output step consumes F at t, t + h/2, t + h.
MasterSolution integrate_master_direct(const SystemSpec& system, const CoefficientField& field, const CMatrix& rho0);

// Markov limit with two channels: rate (G1 + G2)/2 and L_eff = |g><phi+|.
MasterSolution markov_master(const SystemSpec& system, std::span<const cplx> kappas, const CMatrix& rho0,
                             const TimeGrid& grid, std::size_t substeps = 1);

}  // namespace veeqsd
