#pragma once

// Independent oracles and fixtures shared by the test binaries. Nothing here
// calls into the solvers under test.

#include <cmath>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

#include <unsupported/Eigen/MatrixFunctions>

#include "veeqsd/correlations.hpp"
#include "veeqsd/model.hpp"

namespace veeqsd::testing {

// Composite Simpson rule on [a, b] with n (even) panels.
template <class F>
cplx simpson(const F& f, double a, double b, std::size_t n) {
  if (n % 2) ++n;
  const double h = (b - a) / static_cast<double>(n);
  cplx sum = f(a) + f(b);
  for (std::size_t i = 1; i < n; ++i) sum += (i % 2 ? 4.0 : 2.0) * f(a + static_cast<double>(i) * h);
  return sum * (h / 3.0);
}

// Classical RK4 for y' = f(t, y) with a fixed step count.
template <class Vec, class F>
Vec rk4(const F& f, Vec y, double t0, double t1, std::size_t steps) {
  const double h = (t1 - t0) / static_cast<double>(steps);
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    const Vec k1 = f(t, y);
    const Vec k2 = f(t + 0.5 * h, Vec(y + 0.5 * h * k1));
    const Vec k3 = f(t + 0.5 * h, Vec(y + 0.5 * h * k2));
    const Vec k4 = f(t + h, Vec(y + h * k3));
    y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return y;
}

inline CMatrix expm(const CMatrix& a) { return a.exp(); }

inline CMatrix random_density(Eigen::Index dim, std::mt19937_64& rng, Eigen::Index rank = -1) {
  std::normal_distribution<double> n(0.0, 1.0);
  if (rank < 0) rank = dim;
  CMatrix g(dim, rank);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = {n(rng), n(rng)};
  CMatrix rho = g * g.adjoint();
  return rho / rho.trace().real();
}

inline CVector random_state(Eigen::Index dim, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  CVector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = {n(rng), n(rng)};
  return v.normalized();
}

// Two upper levels at energy w, both channels real kappa = sqrt(Gamma).
struct VeeCase {
  SystemSpec system;
  CorrelationKernel kernel;
};

inline VeeCase vee(double w1, double w2, OUChannel c1, OUChannel c2) {
  return {build_system(2, {w1, w2}), CorrelationKernel({c1, c2})};
}

inline OUChannel channel(double Gamma, double gamma, double Omega) {
  return make_channel(std::sqrt(Gamma), gamma, Omega);
}

// Equal channels, Gamma = 1, Delta = 0.01, degenerate levels at 1.
inline VeeCase fig2_case(double gamma) { return vee(1.0, 1.0, channel(1, gamma, 0.99), channel(1, gamma, 0.99)); }

inline VeeCase fig3_case(double gamma2) { return vee(1.0, 1.0, channel(1, 5.0, 0.99), channel(1, gamma2, 0.99)); }

inline VeeCase fig4_case(double gamma, double Omega2) {
  return vee(1.0, 1.0, channel(1, gamma, 1.01), channel(1, gamma, Omega2));
}

inline CMatrix projector(const CVector& v) { return v * v.adjoint(); }

inline double max_abs(const CMatrix& m) { return m.cwiseAbs().maxCoeff(); }

}  // namespace veeqsd::testing
