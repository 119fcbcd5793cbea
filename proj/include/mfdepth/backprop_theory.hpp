#pragma once

// Mean-field backpropagation: layer-wise error variance q~_aa^l = E[(delta_i^l)^2]
// and error covariance q~_ab^l = E[delta_a delta_b], filled backwards from the
// output layer, and the signed gradient depth scale.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mfdepth/activations.hpp"
#include "mfdepth/errors.hpp"
#include "mfdepth/meanfield.hpp"
#include "mfdepth/quadrature.hpp"

namespace mfdepth {

// Width ratio multiplying each backward step l+1 -> l.
//  derivation: N_{l+1} / N_{l+2} (the width beyond the last layer is taken as N_L)
//  main_text:  N_{l+1} / N_l
// Both reduce to 1 for constant widths.
enum class WidthRatio { derivation, main_text };

struct GradientStats {
  std::vector<double> q_tilde_aa;  // index l = 0..L
  std::vector<double> q_tilde_ab;
  std::vector<int> widths;
};

namespace detail {

inline void check_widths(const std::vector<int>& widths) {
  if (widths.empty()) throw DomainError("widths must be nonempty");
  for (int n : widths) {
    if (n <= 0) throw DomainError("widths must be positive");
  }
}

inline double width_ratio(const std::vector<int>& widths, std::size_t l, WidthRatio form) {
  const std::size_t last = widths.size() - 1;
  const auto at = [&](std::size_t k) { return static_cast<double>(widths[std::min(k, last)]); };
  return form == WidthRatio::derivation ? at(l + 1) / at(l + 2) : at(l + 1) / at(l);
}

inline std::vector<double> backward_fill(const std::vector<int>& widths, double seed, double factor,
                                         WidthRatio form) {
  check_widths(widths);
  std::vector<double> out(widths.size());
  out.back() = seed;
  for (std::size_t l = widths.size() - 1; l-- > 0;) {
    out[l] = out[l + 1] * width_ratio(widths, l, form) * factor;
  }
  return out;
}

}  // namespace detail

inline std::vector<double> grad_variance_trajectory(const HyperParams& hp, const Activation& act,
                                                    double q_star, const std::vector<int>& widths,
                                                    double q_tilde_L = 1.0,
                                                    WidthRatio form = WidthRatio::derivation,
                                                    const QuadratureRule& rule = default_rule()) {
  if (!(q_tilde_L > 0.0)) throw DomainError("q_tilde_L must be > 0");
  return detail::backward_fill(widths, q_tilde_L, chi1(hp, act, q_star, rule), form);
}

// Per-layer factor of the error covariance: sigma_w^2 E[phi'(u1) phi'(u2)] at (q*, c*).
// Evaluated through the generic two-point expectation, independently of
// correlation_slope, so the two can be compared.
inline double grad_covariance_factor(const HyperParams& hp, const Activation& act, double q_star,
                                     double c_star, const QuadratureRule& rule = default_rule()) {
  const CorrelatedPair pair(q_star, q_star, c_star);
  return hp.sigma_w_sq *
         gauss_expect_2d([&](double u1, double u2) { return act.d_phi(u1) * act.d_phi(u2); }, pair, rule);
}

inline std::vector<double> grad_covariance_trajectory(const HyperParams& hp, const Activation& act,
                                                      double q_star, double c_star,
                                                      const std::vector<int>& widths,
                                                      double q_tilde_ab_L = 1.0,
                                                      WidthRatio form = WidthRatio::derivation,
                                                      const QuadratureRule& rule = default_rule()) {
  if (!(std::abs(c_star) <= 1.0)) throw DomainError("|c*| must be <= 1");
  return detail::backward_fill(widths, q_tilde_ab_L, grad_covariance_factor(hp, act, q_star, c_star, rule),
                               form);
}

inline GradientStats gradient_stats(const HyperParams& hp, const Activation& act, double q_star,
                                    double c_star, const std::vector<int>& widths,
                                    WidthRatio form = WidthRatio::derivation,
                                    const QuadratureRule& rule = default_rule()) {
  GradientStats s;
  s.q_tilde_aa = grad_variance_trajectory(hp, act, q_star, widths, 1.0, form, rule);
  s.q_tilde_ab = grad_covariance_trajectory(hp, act, q_star, c_star, widths, 1.0, form, rule);
  s.widths = widths;
  return s;
}

// -1 / log(chi1): positive when gradients vanish, negative when they explode,
// +inf at chi1 == 1.
inline double xi_grad(double chi1_value) {
  if (!(chi1_value > 0.0)) throw DomainError("xi_grad: chi1 must be > 0");
  if (chi1_value == 1.0) return std::numeric_limits<double>::infinity();
  return -1.0 / std::log(chi1_value);
}

}  // namespace mfdepth
