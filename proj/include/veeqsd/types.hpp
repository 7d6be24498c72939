#pragma once

#include <complex>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace veeqsd {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;

inline constexpr cplx kI{0.0, 1.0};

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Numerical failure: Riccati pole on a grid that needs a pole-free field,
// non-finite intermediate, tolerance breach.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class PoleError : public NumericalError {
 public:
  PoleError(const std::string& what, double time) : NumericalError(what), time_(time) {}
  double time() const { return time_; }

 private:
  double time_;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace veeqsd
