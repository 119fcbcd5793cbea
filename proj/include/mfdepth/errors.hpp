#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfdepth {

// Base of everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Bad user-facing configuration (unknown activation, invalid hyperparameters).
class ConfigurationError : public Error {
 public:
  using Error::Error;
};

// Argument outside the mathematical domain of an operation (e.g. q < 0).
class DomainError : public Error {
 public:
  using Error::Error;
};

// A quadrature evaluation produced a non-finite value.
class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::size_t node, double abscissa)
      : Error(what), node_(node), abscissa_(abscissa) {}

  std::size_t node() const noexcept { return node_; }
  double abscissa() const noexcept { return abscissa_; }

 private:
  std::size_t node_;
  double abscissa_;
};

// Iterative solver failed to reach its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double last_iterate)
      : Error(what), last_iterate_(last_iterate) {}

  double last_iterate() const noexcept { return last_iterate_; }

 private:
  double last_iterate_;
};

// The variance map has no finite fixed point (linear activation, sigma_w^2/rho >= 1).
class NoFixedPointError : public Error {
 public:
  using Error::Error;
};

// Correlation requested for a zero-variance signal.
class DegenerateVarianceError : public Error {
 public:
  using Error::Error;
};

// chi1 - 1 does not change sign on the searched sigma_w^2 bracket.
class NoCriticalPointError : public Error {
 public:
  using Error::Error;
};

// Too few usable samples for a fit.
class InsufficientDataError : public Error {
 public:
  using Error::Error;
};

}  // namespace mfdepth
