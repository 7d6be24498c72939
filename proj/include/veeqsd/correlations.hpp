#pragma once

// Generalized Ornstein-Uhlenbeck reservoir correlations.
//
// Channel m carries a quasi-Lorentzian coupling spectrum with strength kappa_m,
// bandwidth gamma_m and centre Omega_m. The cross-correlation between channels
// m and n at lag tau = t - s is
//
//   alpha_mn(tau) = conj(k_m) k_n g_m g_n / (g_m + g_n + i(W_m - W_n))
//                   * { exp(-(g_m + i W_m) tau)   tau >= 0
//                     { exp( (g_n - i W_n) tau)   tau <  0
//
// which reduces to |k_m|^2 (g_m/2) exp(-g_m |tau|) exp(-i W_m tau) on the
// diagonal.

#include <cstddef>
#include <functional>
#include <vector>

#include "veeqsd/types.hpp"

namespace veeqsd {

struct OUChannel {
  cplx kappa{0.0, 0.0};
  double gamma = 1.0;
  double Omega = 0.0;

  double decay_rate() const { return std::norm(kappa); }
};

OUChannel make_channel(cplx kappa, double gamma, double Omega);

// Kernel as a plain callable alpha(m, n, t, s); the general coefficient solver
// accepts any such function.
using KernelFunction = std::function<cplx(std::size_t, std::size_t, double, double)>;

class CorrelationKernel {
 public:
  explicit CorrelationKernel(std::vector<OUChannel> channels);

  std::size_t size() const { return channels_.size(); }
  const OUChannel& channel(std::size_t m) const { return channels_.at(m); }
  const std::vector<OUChannel>& channels() const { return channels_; }

  cplx alpha(std::size_t m, std::size_t n, double t, double s) const { return alpha_lag(m, n, t - s); }
  cplx alpha_lag(std::size_t m, std::size_t n, double tau) const;

  // Matrix [alpha_mn(0)].
  CMatrix at_zero() const;
  // Sum of decay rates, kappa^2 = sum_m |kappa_m|^2.
  double total_rate() const;

  KernelFunction as_function() const;

 private:
  cplx prefactor(std::size_t m, std::size_t n) const;
  std::vector<OUChannel> channels_;
};

// g(w) = kappa/sqrt(2 pi) * gamma/(gamma + i(w - Omega)), flat mode density.
cplx coupling_spectrum(const OUChannel& channel, double omega);

}  // namespace veeqsd
