#pragma once

// Coefficient field F(t) = [F_mn(t)] carrying all reservoir memory of the
// exact vee-system master equation.
//
//  - solve_F_ou: Riccati system for OU kernels,
//      dF/dt = alpha(0) - diag(g_m + i W_m) F + i F H_e + F F,   F(0) = 0.
//  - solve_F_general: two-time consistency equations for any kernel,
//      d/dt f(t,s) = f(t,s) (i H_e + F(t)),  f(s,s) = 1,
//      F(t) = int_0^t ds alpha(t,s) f(t,s).
//  - analytic_Q / exp_integral_Q: closed forms for one channel with
//    degenerate upper levels, where F_mn = conj(k_m) k_n / k^2 * Q(t).

#include <cstddef>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"

namespace veeqsd {

enum class FieldSource { ou_ode, general, analytic_single_channel };

struct CoefficientField {
  TimeGrid grid;
  std::vector<CMatrix> values;  // F(t_k); truncated before a flagged pole
  FieldSource source = FieldSource::ou_ode;
  // First grid time at which |F_mn| exceeded the pole threshold.
  std::optional<double> pole_time;
  // max |F(dt) - F(dt/2)| over the shared grid; NaN when not estimated.
  double step_error = std::numeric_limits<double>::quiet_NaN();

  bool pole_free() const { return !pole_time.has_value(); }
  std::size_t channels() const { return values.empty() ? 0 : static_cast<std::size_t>(values.front().rows()); }
  const CMatrix& at(std::size_t k) const { return values.at(k); }
};

struct RiccatiOptions {
  std::size_t substeps = 1;  // RK4 steps per grid interval
  bool estimate_error = true;
  double pole_factor = 1e6;  // pole flag when |F_mn| > pole_factor * kappa^2
};

// Largest rate in the problem; the default grids keep dt * rate_scale <= 0.01.
double rate_scale(const SystemSpec& system, const CorrelationKernel& kernel);

CoefficientField solve_F_ou(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid,
                            const RiccatiOptions& options = {});

// f(t_j, s_k) for s_k <= t_j on the output grid.
struct TwoTimeField {
  TimeGrid grid;
  std::size_t channels = 0;
  bool full_history = false;
  // Packed triangle (index j(j+1)/2 + k) when full_history, otherwise only
  // the last row f(T, s_k).
  std::vector<CMatrix> values;

  const CMatrix& at(std::size_t j, std::size_t k) const;
};

struct TwoTimeOptions {
  std::size_t substeps = 1;
  bool keep_history = false;
  bool estimate_error = false;
  // Step-halving disagreement above this raises NumericalError.
  double error_tolerance = std::numeric_limits<double>::infinity();
};

std::pair<TwoTimeField, CoefficientField> solve_F_general(const SystemSpec& system, const KernelFunction& kernel,
                                                          std::size_t channels, const TimeGrid& grid,
                                                          const TwoTimeOptions& options = {});

struct SingleChannelParams {
  double kappa_sq = 0.0;
  double gamma = 0.0;
  double Delta = 0.0;  // omega_0 - Omega
  cplx beta;           // -(gamma - i Delta)/2
  cplx eta;            // principal sqrt(kappa^2 gamma/2 - beta^2)
};

SingleChannelParams single_channel_params(double kappa_sq, double gamma, double Delta);
// Throws std::invalid_argument unless the channels share gamma and Omega and
// the upper levels are degenerate.
SingleChannelParams single_channel_params(const SystemSpec& system, const CorrelationKernel& kernel);
bool is_single_channel_degenerate(const SystemSpec& system, const CorrelationKernel& kernel);

// Q(t) = k^2 (g/2) sin(eta t) / (eta cos(eta t) - beta sin(eta t)); throws
// PoleError where the denominator vanishes.
cplx analytic_Q(const SingleChannelParams& params, double t);
// exp(-int_0^t Q) = e^{beta t} (eta cos(eta t) - beta sin(eta t)) / eta.
cplx exp_integral_Q(const SingleChannelParams& params, double t);

// F_mn(t_k) = conj(k_m) k_n / k^2 * Q(t_k); stops at the first pole.
CoefficientField analytic_field(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid);

}  // namespace veeqsd
