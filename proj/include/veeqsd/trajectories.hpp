#pragma once

// Stochastic state vectors of the vee system driven by the colored noise.
//
// Linear mode:     d psi = [-i H + sum_m (z*_m L_m - L_m^+ Qbar_m)] psi
// Nonlinear mode:  d psi = -i H psi + sum_m [z~*_m D(L_m) - D(D(L_m^+) Qbar_m)] psi
// with Qbar_m = sum_p F_mp(t) L_p, D(A) = A - <A>, and z~* the recentred noise.
//
// Steppers are RK4 on the output grid. The coefficient field and the noise
// path live on the twice-refined grid so that every stage time is a sample
// point: step k reads indices 2k, 2k+1, 2k+2.

#include <span>
#include <vector>

#include "veeqsd/coefficients.hpp"
#include "veeqsd/model.hpp"
#include "veeqsd/noise.hpp"

namespace veeqsd {

enum class QsdMode { linear, nonlinear };

const char* qsd_mode_name(QsdMode mode);

struct TrajectoryState {
  TimeGrid grid;
  QsdMode mode = QsdMode::linear;
  std::vector<CVector> psi;  // unnormalized (linear) or unit norm (nonlinear)
};

// Throws PoleError when the field has a pole, std::invalid_argument on grid
// mismatch or a non-normalized psi0, NumericalError on non-finite amplitudes.
TrajectoryState evolve_linear(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                              const CVector& psi0);

TrajectoryState evolve_nonlinear(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                                 const CVector& psi0, const ShiftKernel& shift);

// Per output time k and channel m (slot k*M + m): z_m(t_k) P_t - Qbar_m(t_k) P_t
// with P_t = |psi><psi|. Its ensemble mean vanishes for linear trajectories.
std::vector<CMatrix> novikov_residual(const SystemSpec& system, const CoefficientField& field, const NoisePath& path,
                                      const TrajectoryState& trajectory);

}  // namespace veeqsd
