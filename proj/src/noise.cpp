#include "veeqsd/noise.hpp"

#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <stdexcept>

#include <Eigen/Cholesky>

#include "veeqsd/simd/kernels.hpp"

namespace veeqsd {

namespace {

constexpr std::array<char, 8> kMagic{'V', 'Q', 'S', 'D', 'N', 'O', 'I', 'S'};
constexpr std::uint32_t kFormatVersion = 1;

std::vector<cplx> pack_lower(const CMatrix& L) {
  const auto D = static_cast<std::size_t>(L.rows());
  std::vector<cplx> packed(D * (D + 1) / 2);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t k = 0; k <= i; ++k)
      packed[i * (i + 1) / 2 + k] = L(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
  return packed;
}

template <class T>
void put(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T get(std::istream& in) {
  T value{};
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw IoError("noise batch: truncated file");
  return value;
}

}  // namespace

CMatrix CovarianceFactor::reconstruct() const {
  const auto D = static_cast<Eigen::Index>(dimension);
  CMatrix L = CMatrix::Zero(D, D);
  for (Eigen::Index i = 0; i < D; ++i)
    for (Eigen::Index k = 0; k <= i; ++k) L(i, k) = row(static_cast<std::size_t>(i))[k];
  return L * L.adjoint();
}

CMatrix covariance_matrix(const CorrelationKernel& kernel, const TimeGrid& grid) {
  const std::size_t M = kernel.size();
  const std::size_t P = grid.points();
  const auto D = static_cast<Eigen::Index>(M * P);
  CMatrix C(D, D);
  for (std::size_t j = 0; j < P; ++j)
    for (std::size_t k = 0; k < P; ++k)
      for (std::size_t m = 0; m < M; ++m)
        for (std::size_t n = 0; n < M; ++n)
          C(static_cast<Eigen::Index>(j * M + m), static_cast<Eigen::Index>(k * M + n)) =
              kernel.alpha(m, n, grid.time(j), grid.time(k));
  return C;
}

CovarianceFactor build_covariance(const CorrelationKernel& kernel, const TimeGrid& grid, std::size_t cap) {
  const std::size_t D = kernel.size() * grid.points();
  if (kernel.size() == 0) throw std::invalid_argument("build_covariance: kernel has no channels");
  if (D > cap)
    throw std::invalid_argument("build_covariance: stacked dimension " + std::to_string(D) + " exceeds cap " +
                                std::to_string(cap));

  CMatrix C = covariance_matrix(kernel, grid);
  const double max_diag = C.diagonal().real().maxCoeff();
  const double base = 1e-12 * max_diag;

  CovarianceFactor factor;
  factor.grid = grid;
  factor.channels = kernel.size();
  factor.dimension = D;
  // Uncoupled channels: the noise vanishes identically.
  if (max_diag == 0.0) {
    factor.lower_packed.assign(D * (D + 1) / 2, cplx{});
    return factor;
  }

  double jitter = 0.0;
  for (int attempt = 0; attempt <= 4; ++attempt) {
    if (attempt > 0) {
      const double next = base * std::pow(10.0, attempt - 1);
      C.diagonal().array() += next - jitter;
      jitter = next;
    }
    Eigen::LLT<CMatrix, Eigen::Lower> llt(C);
    if (llt.info() != Eigen::Success) continue;
    CMatrix L = llt.matrixL();
    if (!L.allFinite()) continue;
    factor.lower_packed = pack_lower(L);
    factor.jitter = jitter;
    return factor;
  }
  throw NumericalError("build_covariance: factorization failed with jitter " + std::to_string(jitter) +
                       " (kernel not positive semidefinite on this grid?)");
}

NoisePath sample_path(const CovarianceFactor& factor, std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  std::mt19937_64 engine(seq);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));

  const std::size_t D = factor.dimension;
  std::vector<cplx> w(D);
  for (auto& v : w) {
    const double re = normal(engine);
    const double im = normal(engine);
    v = {re, im};
  }
  NoisePath path;
  path.index = index;
  path.zstar.resize(D);
  simd::lower_packed_matvec(factor.lower_packed.data(), w.data(), path.zstar.data(), D);
  for (auto& z : path.zstar) z = std::conj(z);
  return path;
}

NoisePathBatch sample_noise(const CovarianceFactor& factor, std::uint64_t seed, std::size_t count,
                            std::uint64_t first_index) {
  if (count < 1) throw std::invalid_argument("sample_noise: count must be >= 1");
  NoisePathBatch batch;
  batch.grid = factor.grid;
  batch.channels = factor.channels;
  batch.seed = seed;
  batch.paths.reserve(count);
  for (std::size_t i = 0; i < count; ++i) batch.paths.push_back(sample_path(factor, seed, first_index + i));
  return batch;
}

void write_noise_batch(const NoisePathBatch& batch, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  const std::size_t values = batch.channels * batch.grid.points();
  out.write(kMagic.data(), kMagic.size());
  put(out, kFormatVersion);
  put(out, static_cast<std::uint32_t>(batch.channels));
  put(out, static_cast<std::uint64_t>(batch.grid.points()));
  put(out, batch.grid.dt);
  put(out, batch.seed);
  put(out, static_cast<std::uint64_t>(batch.paths.size()));
  for (const NoisePath& p : batch.paths) {
    if (p.zstar.size() != values) throw std::invalid_argument("write_noise_batch: path length does not match grid");
    put(out, p.index);
    out.write(reinterpret_cast<const char*>(p.zstar.data()), static_cast<std::streamsize>(values * sizeof(cplx)));
  }
  if (!out) throw IoError("write failed: " + path.string());
}

NoisePathBatch read_noise_batch(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError(path.string() + ": not a noise batch file");
  if (get<std::uint32_t>(in) != kFormatVersion) throw IoError(path.string() + ": unsupported noise batch version");
  NoisePathBatch batch;
  batch.channels = get<std::uint32_t>(in);
  const auto points = get<std::uint64_t>(in);
  if (points == 0) throw IoError(path.string() + ": empty grid");
  batch.grid = TimeGrid{get<double>(in), static_cast<std::size_t>(points - 1)};
  batch.seed = get<std::uint64_t>(in);
  const auto count = get<std::uint64_t>(in);
  const std::size_t values = batch.channels * points;
  batch.paths.resize(count);
  for (NoisePath& p : batch.paths) {
    p.index = get<std::uint64_t>(in);
    p.zstar.resize(values);
    in.read(reinterpret_cast<char*>(p.zstar.data()), static_cast<std::streamsize>(values * sizeof(cplx)));
    if (!in) throw IoError(path.string() + ": truncated file");
  }
  return batch;
}

const char* shift_convention_name(ShiftConvention c) {
  switch (c) {
    case ShiftConvention::conjugated:
      return "conjugated";
    case ShiftConvention::unconjugated:
      return "unconjugated";
    case ShiftConvention::literal:
      return "literal";
  }
  return "unknown";
}

ShiftConvention parse_shift_convention(const std::string& text) {
  for (ShiftConvention c : {ShiftConvention::conjugated, ShiftConvention::unconjugated, ShiftConvention::literal})
    if (text == shift_convention_name(c)) return c;
  throw std::invalid_argument("unknown shift convention '" + text + "'");
}

ShiftKernel::ShiftKernel(const CorrelationKernel& kernel, const TimeGrid& grid, ShiftConvention convention)
    : grid_(grid), channels_(kernel.size()), convention_(convention) {
  const std::size_t P = grid.points();
  reversed_.resize(channels_ * channels_ * P);
  for (std::size_t m = 0; m < channels_; ++m)
    for (std::size_t n = 0; n < channels_; ++n) {
      cplx* rev = reversed_.data() + (m * channels_ + n) * P;
      for (std::size_t lag = 0; lag < P; ++lag) {
        const cplx a = kernel.alpha_lag(m, n, grid.time(lag));
        rev[P - 1 - lag] = convention == ShiftConvention::conjugated ? std::conj(a) : a;
      }
    }
}

const cplx* ShiftKernel::reversed(std::size_t m, std::size_t n) const {
  return reversed_.data() + (m * channels_ + n) * grid_.points();
}

cplx ShiftKernel::at_lag(std::size_t m, std::size_t n, std::size_t lag) const {
  const std::size_t P = grid_.points();
  if (m >= channels_ || n >= channels_ || lag >= P) throw std::out_of_range("ShiftKernel::at_lag");
  return reversed(m, n)[P - 1 - lag];
}

cplx ShiftKernel::shift(std::size_t m, std::size_t j, std::span<const cplx> ell) const {
  return j == 0 ? cplx{} : shift_frozen_tail(m, j, j, ell);
}

cplx ShiftKernel::shift_frozen_tail(std::size_t m, std::size_t j, std::size_t known,
                                    std::span<const cplx> ell) const {
  const std::size_t P = grid_.points();
  if (ell.size() != channels_ * P) throw std::invalid_argument("ShiftKernel: history length does not match grid");
  if (j >= P || known > j) throw std::out_of_range("ShiftKernel: index outside grid");
  if (j == 0) return {};
  const double dt = grid_.dt;
  cplx total{};
  for (std::size_t n = 0; n < channels_; ++n) {
    const std::size_t src = convention_ == ShiftConvention::literal ? m : n;
    const cplx* hist = ell.data() + src * P;
    const cplx* rev = reversed(m, n);
    // sum_{k<=known} K((j-k) dt) ell_k
    cplx acc{};
    if (known > 0) {
      acc = simd::dot(hist, rev + (P - 1 - j), known + 1);
      acc -= 0.5 * (rev[P - 1 - j] * hist[0] + rev[P - 1 - (j - known)] * hist[known]);
    }
    // int_{t_known}^{t_j} K(t_j - s) ds, trapezoid on the grid lags 0..j-known
    cplx tail{};
    const std::size_t span = j - known;
    if (span > 0) {
      for (std::size_t lag = 0; lag <= span; ++lag) tail += rev[P - 1 - lag];
      tail -= 0.5 * (rev[P - 1] + rev[P - 1 - span]);
    }
    total += dt * (acc + tail * hist[known]);
  }
  return total;
}

NoisePath girsanov_shift(const NoisePath& path, const ShiftKernel& kernel, std::span<const cplx> ell) {
  const std::size_t M = kernel.channels();
  const std::size_t P = kernel.grid().points();
  if (path.zstar.size() != M * P) throw std::invalid_argument("girsanov_shift: path does not match the kernel grid");
  if (ell.size() != M * P) throw std::invalid_argument("girsanov_shift: history does not match the kernel grid");
  NoisePath shifted = path;
  for (std::size_t j = 1; j < P; ++j)
    for (std::size_t m = 0; m < M; ++m) shifted.zstar[j * M + m] += kernel.shift(m, j, ell);
  return shifted;
}

}  // namespace veeqsd
