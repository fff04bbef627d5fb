#pragma once

#include <stdexcept>
#include <string>

namespace cusumkit {

/// Raised when an input violates a documented precondition (bad interval,
/// headstart outside [0,h), theta == 0, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Base for failures of the numerics themselves, as opposed to bad input.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// (I - K) is numerically singular: reciprocal condition estimate below the
/// configured floor.
class SingularSystemError : public NumericalError {
 public:
  SingularSystemError(const std::string& what, double rcond)
      : NumericalError(what), rcond_(rcond) {}
  double rcond() const noexcept { return rcond_; }

 private:
  double rcond_;
};

/// P_i(0;0,h) is so close to 1 that the geometric renewal sum blows up.
class DegenerateGeometryError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Tail-ratio estimate for the run-length moments never stabilized.
class NonConvergenceError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

/// Too many Monte Carlo replications hit the step cap.
class CapExceededError : public NumericalError {
 public:
  CapExceededError(const std::string& what, double fraction)
      : NumericalError(what), fraction_(fraction) {}
  double cap_hit_fraction() const noexcept { return fraction_; }

 private:
  double fraction_;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw InvalidArgument(message);
}

}  // namespace detail
}  // namespace cusumkit
