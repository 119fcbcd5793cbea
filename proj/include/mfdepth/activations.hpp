#pragma once

#include <cmath>
#include <string>
#include <string_view>

#include "mfdepth/errors.hpp"

namespace mfdepth {

// A pointwise nonlinearity with analytic first and second derivatives.
class Activation {
 public:
  enum class Kind { tanh, linear, hard_tanh };

  explicit Activation(Kind kind) : kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

  std::string_view name() const noexcept {
    switch (kind_) {
      case Kind::tanh: return "tanh";
      case Kind::linear: return "linear";
      case Kind::hard_tanh: return "hard_tanh";
    }
    return "unknown";
  }

  bool bounded() const noexcept { return kind_ != Kind::linear; }
  bool odd() const noexcept { return true; }

  double phi(double x) const noexcept {
    switch (kind_) {
      case Kind::tanh: return std::tanh(x);
      case Kind::linear: return x;
      case Kind::hard_tanh: return x < -1.0 ? -1.0 : (x > 1.0 ? 1.0 : x);
    }
    return x;
  }

  double d_phi(double x) const noexcept {
    switch (kind_) {
      case Kind::tanh: {
        const double t = std::tanh(x);
        return 1.0 - t * t;
      }
      case Kind::linear: return 1.0;
      case Kind::hard_tanh: return std::abs(x) < 1.0 ? 1.0 : 0.0;
    }
    return 1.0;
  }

  // Piecewise-linear hard_tanh has zero curvature away from its kinks.
  double dd_phi(double x) const noexcept {
    switch (kind_) {
      case Kind::tanh: {
        const double t = std::tanh(x);
        return -2.0 * t * (1.0 - t * t);
      }
      case Kind::linear:
      case Kind::hard_tanh: return 0.0;
    }
    return 0.0;
  }

  double operator()(double x) const noexcept { return phi(x); }

 private:
  Kind kind_;
};

inline constexpr std::string_view kSupportedActivations = "tanh, linear, hard_tanh";

inline Activation builtin(std::string_view name) {
  if (name == "tanh") return Activation(Activation::Kind::tanh);
  if (name == "linear") return Activation(Activation::Kind::linear);
  if (name == "hard_tanh") return Activation(Activation::Kind::hard_tanh);
  throw ConfigurationError("unknown activation '" + std::string(name) +
                           "'; supported: " + std::string(kSupportedActivations));
}

}  // namespace mfdepth
