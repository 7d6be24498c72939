#include "veeqsd/coefficients.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace veeqsd {

namespace {

// RHS of the OU Riccati system with diagonal G and H_e.
struct RiccatiRhs {
  CMatrix source;          // alpha(0)
  Eigen::VectorXcd decay;  // gamma_m + i Omega_m
  Eigen::VectorXd omega;   // level energies

  void operator()(const CMatrix& F, CMatrix& out) const {
    out.noalias() = F * F;
    out += source;
    const auto M = F.rows();
    for (Eigen::Index n = 0; n < M; ++n)
      for (Eigen::Index m = 0; m < M; ++m) out(m, n) -= (decay(m) - kI * omega(n)) * F(m, n);
  }
};

double max_abs(const CMatrix& F) {
  double r = 0.0;
  for (Eigen::Index i = 0; i < F.size(); ++i) {
    const double a = std::abs(F.data()[i]);
    if (!std::isfinite(a)) return std::numeric_limits<double>::infinity();
    r = std::max(r, a);
  }
  return r;
}

CoefficientField riccati_run(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid,
                             std::size_t substeps, double pole_factor) {
  const auto M = static_cast<Eigen::Index>(kernel.size());
  RiccatiRhs rhs{kernel.at_zero(), Eigen::VectorXcd(M), Eigen::VectorXd(M)};
  for (Eigen::Index m = 0; m < M; ++m) {
    rhs.decay(m) = cplx(kernel.channel(m).gamma, kernel.channel(m).Omega);
    rhs.omega(m) = system.energy(m);
  }
  const double threshold = pole_factor * kernel.total_rate();
  const double h = grid.dt / static_cast<double>(substeps);

  CoefficientField field;
  field.grid = grid;
  field.source = FieldSource::ou_ode;
  field.values.reserve(grid.points());

  CMatrix F = CMatrix::Zero(M, M);
  CMatrix k1(M, M), k2(M, M), k3(M, M), k4(M, M), tmp(M, M);
  field.values.push_back(F);
  for (std::size_t k = 1; k <= grid.steps; ++k) {
    for (std::size_t sub = 0; sub < substeps; ++sub) {
      rhs(F, k1);
      tmp = F + 0.5 * h * k1;
      rhs(tmp, k2);
      tmp = F + 0.5 * h * k2;
      rhs(tmp, k3);
      tmp = F + h * k3;
      rhs(tmp, k4);
      F += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (max_abs(F) > threshold) {
      field.pole_time = grid.time(k);
      return field;
    }
    field.values.push_back(F);
  }
  return field;
}

}  // namespace

double rate_scale(const SystemSpec& system, const CorrelationKernel& kernel) {
  double r = kernel.total_rate();
  for (const auto& c : kernel.channels()) r = std::max({r, c.gamma, std::abs(c.Omega)});
  for (double w : system.energies()) r = std::max(r, std::abs(w));
  return r;
}

CoefficientField solve_F_ou(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid,
                            const RiccatiOptions& options) {
  if (kernel.size() != system.upper_count())
    throw std::invalid_argument("solve_F_ou: channel count must equal the number of upper levels");
  if (options.substeps < 1) throw std::invalid_argument("solve_F_ou: substeps must be >= 1");

  CoefficientField field = riccati_run(system, kernel, grid, options.substeps, options.pole_factor);
  if (options.estimate_error) {
    const CoefficientField fine = riccati_run(system, kernel, grid, 2 * options.substeps, options.pole_factor);
    const std::size_t shared = std::min(field.values.size(), fine.values.size());
    double err = 0.0;
    for (std::size_t k = 0; k < shared; ++k) err = std::max(err, (field.values[k] - fine.values[k]).cwiseAbs().maxCoeff());
    field.step_error = err;
  }
  for (const auto& F : field.values)
    if (!F.allFinite()) throw NumericalError("solve_F_ou: non-finite coefficient");
  return field;
}

const CMatrix& TwoTimeField::at(std::size_t j, std::size_t k) const {
  if (k > j || j > grid.steps) throw std::out_of_range("TwoTimeField: requires s <= t on the grid");
  if (full_history) return values.at(j * (j + 1) / 2 + k);
  if (j != grid.steps) throw std::out_of_range("TwoTimeField: only the final row was kept");
  return values.at(k);
}

namespace {

// Dense row-major M x M blocks stored back to back.
class TwoTimeSolver {
 public:
  TwoTimeSolver(const SystemSpec& system, const KernelFunction& kernel, std::size_t channels, double h,
                std::size_t internal_steps)
      : kernel_(kernel), M_(channels), h_(h), n_(internal_steps) {
    omega_.resize(M_);
    for (std::size_t m = 0; m < M_; ++m) omega_[m] = system.energy(m);
    const std::size_t block = M_ * M_;
    rows_.assign((n_ + 1) * block, cplx{});
    stage_.assign((n_ + 1) * block, cplx{});
    acc_.assign((n_ + 1) * block, cplx{});
    kvec_.assign((n_ + 1) * block, cplx{});
    set_identity(&rows_[0]);
  }

  std::size_t channels() const { return M_; }
  std::size_t current() const { return j_; }
  const cplx* row(std::size_t k) const { return &rows_[k * M_ * M_]; }

  // F(t) from rows X_0..X_j on s_0..s_j, plus an extra node at t carrying the
  // identity when t lies past s_j.
  void field(double t, const std::vector<cplx>& X, std::size_t j, std::vector<cplx>& F) const {
    const std::size_t block = M_ * M_;
    F.assign(block, cplx{});
    std::vector<cplx> a(block);
    const double tail = t - s(j);
    for (std::size_t k = 0; k <= j; ++k) {
      double w;
      if (j == 0) {
        w = 0.5 * tail;
      } else if (k == 0) {
        w = 0.5 * h_;
      } else if (k == j) {
        w = 0.5 * h_ + 0.5 * tail;
      } else {
        w = h_;
      }
      if (w == 0.0) continue;
      load_alpha(t, s(k), a);
      accumulate(w, a.data(), &X[k * block], F.data());
    }
    if (tail > 0.0) {
      load_alpha(t, t, a);
      for (std::size_t i = 0; i < block; ++i) F[i] += 0.5 * tail * a[i];
    }
  }

  void step() {
    const std::size_t block = M_ * M_;
    const std::size_t j = j_;
    const double t = s(j);
    std::vector<cplx> F;
    std::vector<cplx> gen(block);

    auto eval = [&](double time, const std::vector<cplx>& X) {
      field(time, X, j, F);
      for (std::size_t i = 0; i < block; ++i) gen[i] = F[i];
      for (std::size_t m = 0; m < M_; ++m) gen[m * M_ + m] += kI * omega_[m];
      for (std::size_t k = 0; k <= j; ++k) right_multiply(&X[k * block], gen.data(), &kvec_[k * block]);
    };

    // k1
    eval(t, rows_);
    for (std::size_t i = 0; i < (j + 1) * block; ++i) {
      acc_[i] = kvec_[i];
      stage_[i] = rows_[i] + 0.5 * h_ * kvec_[i];
    }
    eval(t + 0.5 * h_, stage_);
    for (std::size_t i = 0; i < (j + 1) * block; ++i) {
      acc_[i] += 2.0 * kvec_[i];
      stage_[i] = rows_[i] + 0.5 * h_ * kvec_[i];
    }
    eval(t + 0.5 * h_, stage_);
    for (std::size_t i = 0; i < (j + 1) * block; ++i) {
      acc_[i] += 2.0 * kvec_[i];
      stage_[i] = rows_[i] + h_ * kvec_[i];
    }
    eval(t + h_, stage_);
    for (std::size_t i = 0; i < (j + 1) * block; ++i) rows_[i] += (h_ / 6.0) * (acc_[i] + kvec_[i]);
    ++j_;
    set_identity(&rows_[j_ * block]);
  }

  CMatrix current_field() const {
    std::vector<cplx> F;
    field(s(j_), rows_, j_, F);
    return to_matrix(F.data());
  }

  CMatrix to_matrix(const cplx* p) const {
    CMatrix out(M_, M_);
    for (std::size_t r = 0; r < M_; ++r)
      for (std::size_t c = 0; c < M_; ++c) out(r, c) = p[r * M_ + c];
    return out;
  }

 private:
  double s(std::size_t k) const { return static_cast<double>(k) * h_; }

  void set_identity(cplx* p) const {
    for (std::size_t i = 0; i < M_ * M_; ++i) p[i] = 0.0;
    for (std::size_t m = 0; m < M_; ++m) p[m * M_ + m] = 1.0;
  }

  void load_alpha(double t, double sk, std::vector<cplx>& a) const {
    for (std::size_t m = 0; m < M_; ++m)
      for (std::size_t n = 0; n < M_; ++n) a[m * M_ + n] = kernel_(m, n, t, sk);
  }

  // F += w * A X
  void accumulate(double w, const cplx* A, const cplx* X, cplx* F) const {
    for (std::size_t m = 0; m < M_; ++m)
      for (std::size_t n = 0; n < M_; ++n) {
        const cplx a = w * A[m * M_ + n];
        for (std::size_t p = 0; p < M_; ++p) F[m * M_ + p] += a * X[n * M_ + p];
      }
  }

  // out = X G
  void right_multiply(const cplx* X, const cplx* G, cplx* out) const {
    for (std::size_t q = 0; q < M_; ++q)
      for (std::size_t p = 0; p < M_; ++p) {
        cplx acc{};
        for (std::size_t m = 0; m < M_; ++m) acc += X[q * M_ + m] * G[m * M_ + p];
        out[q * M_ + p] = acc;
      }
  }

  const KernelFunction& kernel_;
  std::size_t M_;
  double h_;
  std::size_t n_;
  std::size_t j_ = 0;
  std::vector<double> omega_;
  std::vector<cplx> rows_, stage_, acc_, kvec_;
};

std::pair<TwoTimeField, CoefficientField> general_run(const SystemSpec& system, const KernelFunction& kernel,
                                                      std::size_t channels, const TimeGrid& grid,
                                                      std::size_t substeps, bool keep_history) {
  const double h = grid.dt / static_cast<double>(substeps);
  TwoTimeSolver solver(system, kernel, channels, h, grid.steps * substeps);

  TwoTimeField two;
  two.grid = grid;
  two.channels = channels;
  two.full_history = keep_history;

  CoefficientField field;
  field.grid = grid;
  field.source = FieldSource::general;
  field.values.reserve(grid.points());
  field.values.push_back(CMatrix::Zero(channels, channels));
  if (keep_history) two.values.push_back(solver.to_matrix(solver.row(0)));

  for (std::size_t k = 1; k <= grid.steps; ++k) {
    for (std::size_t sub = 0; sub < substeps; ++sub) solver.step();
    CMatrix F = solver.current_field();
    if (!F.allFinite()) throw NumericalError("solve_F_general: non-finite coefficient at t = " +
                                             std::to_string(grid.time(k)));
    field.values.push_back(std::move(F));
    if (keep_history)
      for (std::size_t i = 0; i <= k; ++i) two.values.push_back(solver.to_matrix(solver.row(i * substeps)));
  }
  if (!keep_history)
    for (std::size_t i = 0; i <= grid.steps; ++i) two.values.push_back(solver.to_matrix(solver.row(i * substeps)));
  return {std::move(two), std::move(field)};
}

}  // namespace

std::pair<TwoTimeField, CoefficientField> solve_F_general(const SystemSpec& system, const KernelFunction& kernel,
                                                          std::size_t channels, const TimeGrid& grid,
                                                          const TwoTimeOptions& options) {
  if (channels != system.upper_count())
    throw std::invalid_argument("solve_F_general: channel count must equal the number of upper levels");
  if (options.substeps < 1) throw std::invalid_argument("solve_F_general: substeps must be >= 1");
  if (!kernel) throw std::invalid_argument("solve_F_general: empty kernel");

  auto result = general_run(system, kernel, channels, grid, options.substeps, options.keep_history);
  if (options.estimate_error) {
    const auto fine = general_run(system, kernel, channels, grid, 2 * options.substeps, false);
    double err = 0.0;
    for (std::size_t k = 0; k < result.second.values.size(); ++k)
      err = std::max(err, (result.second.values[k] - fine.second.values[k]).cwiseAbs().maxCoeff());
    result.second.step_error = err;
    if (err > options.error_tolerance)
      throw NumericalError("solve_F_general: quadrature unstable, step-halving disagreement " + std::to_string(err));
  }
  return result;
}

SingleChannelParams single_channel_params(double kappa_sq, double gamma, double Delta) {
  if (!(kappa_sq >= 0.0) || !(gamma > 0.0) || !std::isfinite(Delta))
    throw std::invalid_argument("single_channel_params: need kappa^2 >= 0, gamma > 0, finite Delta");
  SingleChannelParams p;
  p.kappa_sq = kappa_sq;
  p.gamma = gamma;
  p.Delta = Delta;
  p.beta = -0.5 * cplx(gamma, -Delta);
  p.eta = std::sqrt(cplx(0.5 * kappa_sq * gamma, 0.0) - p.beta * p.beta);
  return p;
}

bool is_single_channel_degenerate(const SystemSpec& system, const CorrelationKernel& kernel) {
  if (kernel.size() != system.upper_count()) return false;
  const auto& c0 = kernel.channel(0);
  const double w0 = system.energy(0);
  auto close = [](double a, double b) { return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)}); };
  for (std::size_t m = 0; m < kernel.size(); ++m) {
    if (!close(kernel.channel(m).gamma, c0.gamma) || !close(kernel.channel(m).Omega, c0.Omega)) return false;
    if (!close(system.energy(m), w0)) return false;
  }
  return true;
}

SingleChannelParams single_channel_params(const SystemSpec& system, const CorrelationKernel& kernel) {
  if (!is_single_channel_degenerate(system, kernel))
    throw std::invalid_argument("single_channel_params: channels must share gamma and Omega over degenerate levels");
  const auto& c0 = kernel.channel(0);
  return single_channel_params(kernel.total_rate(), c0.gamma, system.energy(0) - c0.Omega);
}

namespace {

// sin(eta t)/eta, continuous through eta -> 0.
cplx sinc_term(cplx eta, double t) {
  const cplx x = eta * t;
  if (std::abs(x) < 1e-4) return t * (1.0 - x * x / 6.0 + x * x * x * x / 120.0);
  return std::sin(x) / eta;
}

}  // namespace

cplx analytic_Q(const SingleChannelParams& p, double t) {
  const cplx s = sinc_term(p.eta, t);
  const cplx c = std::cos(p.eta * t);
  const cplx denom = c - p.beta * s;
  const double scale = std::max(1.0, std::abs(c) + std::abs(p.beta * s));
  if (std::abs(denom) < 1e-12 * scale) throw PoleError("analytic_Q: pole", t);
  return 0.5 * p.kappa_sq * p.gamma * s / denom;
}

cplx exp_integral_Q(const SingleChannelParams& p, double t) {
  const cplx s = sinc_term(p.eta, t);
  return std::exp(p.beta * t) * (std::cos(p.eta * t) - p.beta * s);
}

CoefficientField analytic_field(const SystemSpec& system, const CorrelationKernel& kernel, const TimeGrid& grid) {
  const SingleChannelParams params = single_channel_params(system, kernel);
  const auto M = static_cast<Eigen::Index>(kernel.size());
  CMatrix shape(M, M);
  for (Eigen::Index m = 0; m < M; ++m)
    for (Eigen::Index n = 0; n < M; ++n)
      shape(m, n) = params.kappa_sq > 0.0
                        ? std::conj(kernel.channel(m).kappa) * kernel.channel(n).kappa / params.kappa_sq
                        : cplx{};

  CoefficientField field;
  field.grid = grid;
  field.source = FieldSource::analytic_single_channel;
  // Same threshold as the Riccati solve; a real denominator changing sign
  // between grid points is a pole the grid stepped over.
  const double threshold = RiccatiOptions{}.pole_factor * params.kappa_sq;
  cplx prev_denom = 1.0;
  for (std::size_t k = 0; k <= grid.steps; ++k) {
    const double t = grid.time(k);
    const cplx denom = std::cos(params.eta * t) - params.beta * sinc_term(params.eta, t);
    const cplx turn = denom * std::conj(prev_denom);
    if (turn.real() < 0.0 && std::abs(turn.imag()) <= 1e-9 * std::abs(turn)) {
      field.pole_time = t;
      break;
    }
    prev_denom = denom;
    cplx Q;
    try {
      Q = analytic_Q(params, t);
    } catch (const PoleError& e) {
      field.pole_time = e.time();
      break;
    }
    if (std::abs(Q) > threshold) {
      field.pole_time = t;
      break;
    }
    field.values.push_back(Q * shape);
  }
  return field;
}

}  // namespace veeqsd
