#include "veeqsd/correlations.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace veeqsd {

OUChannel make_channel(cplx kappa, double gamma, double Omega) {
  if (!std::isfinite(kappa.real()) || !std::isfinite(kappa.imag()))
    throw std::invalid_argument("channel: kappa must be finite");
  if (!(gamma > 0.0) || !std::isfinite(gamma)) throw std::invalid_argument("channel: gamma must be positive");
  if (!std::isfinite(Omega)) throw std::invalid_argument("channel: Omega must be finite");
  return {kappa, gamma, Omega};
}

CorrelationKernel::CorrelationKernel(std::vector<OUChannel> channels) : channels_(std::move(channels)) {
  if (channels_.empty()) throw std::invalid_argument("kernel: at least one channel required");
  for (const auto& c : channels_) make_channel(c.kappa, c.gamma, c.Omega);
}

cplx CorrelationKernel::prefactor(std::size_t m, std::size_t n) const {
  const auto& a = channels_.at(m);
  const auto& b = channels_.at(n);
  return std::conj(a.kappa) * b.kappa * a.gamma * b.gamma / cplx(a.gamma + b.gamma, a.Omega - b.Omega);
}

cplx CorrelationKernel::alpha_lag(std::size_t m, std::size_t n, double tau) const {
  const cplx pre = prefactor(m, n);
  // tau == 0 goes through the tau >= 0 branch; both branches agree there.
  if (tau >= 0.0) {
    const auto& a = channels_[m];
    return pre * std::exp(-cplx(a.gamma, a.Omega) * tau);
  }
  const auto& b = channels_[n];
  return pre * std::exp(cplx(b.gamma, -b.Omega) * tau);
}

CMatrix CorrelationKernel::at_zero() const {
  const auto M = static_cast<Eigen::Index>(size());
  CMatrix a(M, M);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < M; ++n) a(m, n) = prefactor(m, n);
  return a;
}

double CorrelationKernel::total_rate() const {
  double k2 = 0.0;
  for (const auto& c : channels_) k2 += c.decay_rate();
  return k2;
}

KernelFunction CorrelationKernel::as_function() const {
  return [k = *this](std::size_t m, std::size_t n, double t, double s) { return k.alpha(m, n, t, s); };
}

cplx coupling_spectrum(const OUChannel& channel, double omega) {
  const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return channel.kappa * norm * channel.gamma / cplx(channel.gamma, omega - channel.Omega);
}

}  // namespace veeqsd
