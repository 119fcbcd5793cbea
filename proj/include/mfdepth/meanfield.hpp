#pragma once

// Forward mean-field maps for wide random networks: the single-input variance
// map, the two-input covariance/correlation map, their fixed points, the
// stability coefficient chi1 and the depth scales over which the maps relax.
//
// Dropout with keep-probability rho rescales the variance map to sigma_w^2/rho
// while the off-diagonal map keeps the bare sigma_w^2.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <boost/math/tools/toms748_solve.hpp>

#include "mfdepth/activations.hpp"
#include "mfdepth/errors.hpp"
#include "mfdepth/quadrature.hpp"

namespace mfdepth {

struct HyperParams {
  double sigma_w_sq = 1.0;
  double sigma_b_sq = 0.0;
  double rho = 1.0;  // dropout keep-probability

  // sigma_w_sq == 0 is accepted: the maps are still well defined.
  void validate() const {
    if (!(sigma_w_sq >= 0.0) || !std::isfinite(sigma_w_sq)) {
      throw ConfigurationError("sigma_w_sq must be finite and >= 0, got " + std::to_string(sigma_w_sq));
    }
    if (!(sigma_b_sq >= 0.0) || !std::isfinite(sigma_b_sq)) {
      throw ConfigurationError("sigma_b_sq must be finite and >= 0, got " + std::to_string(sigma_b_sq));
    }
    if (!(rho > 0.0 && rho <= 1.0)) {
      throw ConfigurationError("rho must lie in (0, 1], got " + std::to_string(rho));
    }
  }

  double effective_weight_variance() const noexcept { return sigma_w_sq / rho; }
};

inline constexpr double kFixedPointTolerance = 1e-12;
inline constexpr int kMaxFixedPointIterations = 100000;
inline constexpr double kFixedPointCheck = 1e-10;
inline constexpr double kCriticalTolerance = 1e-12;
inline constexpr double kDefaultInitialVariance = 0.8;
inline constexpr double kDefaultInitialCorrelation = 0.6;

struct SolverOptions {
  double tolerance = kFixedPointTolerance;
  int max_iterations = kMaxFixedPointIterations;
  // When plain iteration stalls (near-critical variance maps relax
  // algebraically), fall back to bisection on V(q) - q.
  bool bracket_fallback = true;
};

// ---------------------------------------------------------------------------
// Maps

inline double variance_map(double q, const HyperParams& hp, const Activation& act,
                           const QuadratureRule& rule = default_rule()) {
  if (!(q >= 0.0)) throw DomainError("variance_map: q must be >= 0, got " + std::to_string(q));
  const double s = std::sqrt(q);
  const double second_moment = gauss_expect_1d(
      [&](double z) {
        const double y = act.phi(s * z);
        return y * y;
      },
      rule);
  return hp.sigma_w_sq / hp.rho * second_moment + hp.sigma_b_sq;
}

// Next-layer covariance q_ab. Carries the bare sigma_w^2 even with dropout:
// independent masks contribute E[p_a] E[p_b] = rho^2, cancelling the 1/rho^2.
inline double covariance_map(double c, double q_a, double q_b, const HyperParams& hp,
                             const Activation& act, const QuadratureRule& rule = default_rule()) {
  const CorrelatedPair pair(q_a, q_b, c);
  const auto phi = [&](double u) { return act.phi(u); };
  const double cross = act.odd() ? gauss_expect_2d_product_even(phi, phi, pair, rule)
                                 : gauss_expect_2d_product(phi, phi, pair, rule);
  return hp.sigma_w_sq * cross + hp.sigma_b_sq;
}

inline double correlation_map(double c, double q_a, double q_b, const HyperParams& hp,
                              const Activation& act, const QuadratureRule& rule = default_rule()) {
  if (q_a * q_b == 0.0) {
    throw DegenerateVarianceError("correlation undefined for zero-variance input");
  }
  return covariance_map(c, q_a, q_b, hp, act, rule) / std::sqrt(q_a * q_b);
}

// Closed-form image of c = 1 under the dropout correlation map at q_a = q_b = q_bar:
// 1 - (1 - rho) / (rho q_bar) sigma_w^2 E[phi^2(sqrt(q_bar) z)].
inline double dropout_unit_correlation_image(double q_bar, const HyperParams& hp,
                                             const Activation& act,
                                             const QuadratureRule& rule = default_rule()) {
  if (!(q_bar > 0.0)) throw DegenerateVarianceError("q_bar must be > 0");
  const double s = std::sqrt(q_bar);
  const double second_moment = gauss_expect_1d(
      [&](double z) {
        const double y = act.phi(s * z);
        return y * y;
      },
      rule);
  return 1.0 - (1.0 - hp.rho) / (hp.rho * q_bar) * hp.sigma_w_sq * second_moment;
}

// ---------------------------------------------------------------------------
// Stability coefficient and depth scales

// sigma_w^2 E[phi'(sqrt(q) z)^2], with sigma_w^2 -> sigma_w^2 / rho under dropout.
inline double chi1(const HyperParams& hp, const Activation& act, double q_star,
                   const QuadratureRule& rule = default_rule()) {
  if (!(q_star >= 0.0)) throw DomainError("chi1: q* must be >= 0");
  const double s = std::sqrt(q_star);
  const double m = gauss_expect_1d(
      [&](double z) {
        const double d = act.d_phi(s * z);
        return d * d;
      },
      rule);
  return hp.effective_weight_variance() * m;
}

// Slope of the correlation map at (q, c): sigma_w^2 E[phi'(u1) phi'(u2)].
inline double correlation_slope(const HyperParams& hp, const Activation& act, double q, double c,
                                const QuadratureRule& rule = default_rule()) {
  const CorrelatedPair pair(q, q, c);
  const auto d_phi = [&](double u) { return act.d_phi(u); };
  return hp.sigma_w_sq * (act.odd() ? gauss_expect_2d_product_even(d_phi, d_phi, pair, rule)
                                    : gauss_expect_2d_product(d_phi, d_phi, pair, rule));
}

enum class Regime {
  exponential,      // 0 < factor < 1, xi finite and positive
  critical,         // factor == 1 within tolerance, xi = +inf
  non_exponential,  // factor <= 0 or > 1; xi reported but not a relaxation length
};

// A per-layer contraction factor and the depth scale xi = -1 / log(factor).
struct DepthScale {
  double factor = 1.0;
  double xi = std::numeric_limits<double>::infinity();
  Regime regime = Regime::critical;

  bool finite() const noexcept { return std::isfinite(xi); }
};

inline DepthScale depth_scale_from_factor(double factor, double tolerance = kCriticalTolerance) {
  if (std::abs(factor - 1.0) <= tolerance) {
    return {factor, std::numeric_limits<double>::infinity(), Regime::critical};
  }
  if (factor <= 0.0) return {factor, std::numeric_limits<double>::quiet_NaN(), Regime::non_exponential};
  const double xi = -1.0 / std::log(factor);
  return {factor, xi, factor > 1.0 ? Regime::non_exponential : Regime::exponential};
}

inline DepthScale xi_q(const HyperParams& hp, const Activation& act, double q_star,
                       const QuadratureRule& rule = default_rule()) {
  if (!(q_star >= 0.0)) throw DomainError("xi_q: q* must be >= 0");
  const double s = std::sqrt(q_star);
  const double m = gauss_expect_1d(
      [&](double z) {
        const double u = s * z;
        const double d = act.d_phi(u);
        return d * d + act.dd_phi(u) * act.phi(u);
      },
      rule);
  return depth_scale_from_factor(hp.effective_weight_variance() * m);
}

// Band of chi1 - 1 in which the chaotic fixed point c* < 1 sits too close to
// c = 1 to be resolved in double precision (the map's bump is O((chi1 - 1)^2)).
inline constexpr double kUnresolvedChaoticBand = 1e-6;

inline DepthScale xi_c(const HyperParams& hp, const Activation& act, double q_star, double c_star,
                       const QuadratureRule& rule = default_rule()) {
  if (!(q_star >= 0.0)) throw DomainError("xi_c: q* must be >= 0");
  if (!(c_star >= -1.0 && c_star <= 1.0)) throw DomainError("xi_c: c* must lie in [-1, 1]");
  double factor = correlation_slope(hp, act, q_star, c_star, rule);
  if (c_star == 1.0 && factor > 1.0 && factor - 1.0 <= kUnresolvedChaoticBand) {
    // Just past criticality the stable root sits O(chi1 - 1) below c = 1 and the
    // map is smooth there (Mehler series), so its slope is 2 - chi1 to first order.
    factor = 2.0 - factor;
  }
  return depth_scale_from_factor(factor);
}

// ---------------------------------------------------------------------------
// Fixed points

struct QStarResult {
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
  bool bracketed = false;  // finished by bisection rather than plain iteration
};

inline QStarResult solve_q_star(const HyperParams& hp, const Activation& act,
                                double q0 = kDefaultInitialVariance,
                                const QuadratureRule& rule = default_rule(),
                                const SolverOptions& opts = {}) {
  hp.validate();
  if (!(q0 >= 0.0)) throw DomainError("solve_q_star: q0 must be >= 0");
  if (!act.bounded()) {
    if (act.kind() != Activation::Kind::linear) {
      throw ConfigurationError("fixed points need a bounded activation");
    }
    if (hp.effective_weight_variance() >= 1.0) {
      throw NoFixedPointError("linear activation with sigma_w^2/rho >= 1 has no finite q*");
    }
  }

  const double zero_slope = hp.effective_weight_variance() * act.d_phi(0.0) * act.d_phi(0.0);
  const bool zero_is_stable_root = hp.sigma_b_sq == 0.0 && act.phi(0.0) == 0.0 && zero_slope <= 1.0;

  double q = q0;
  int it = 0;
  while (it < opts.max_iterations) {
    const double next = variance_map(q, hp, act, rule);
    double delta = std::abs(next - q);
    q = next;
    ++it;
    if (delta < opts.tolerance) {
      // Polish to working precision while the update keeps shrinking.
      for (int extra = 0; extra < 100 && delta > 0.0; ++extra) {
        const double again = variance_map(q, hp, act, rule);
        const double d = std::abs(again - q);
        ++it;
        if (d >= delta) break;
        q = again;
        delta = d;
      }
      if (zero_is_stable_root && q < opts.tolerance) q = 0.0;
      return {q, it, true, false};
    }
  }
  if (!opts.bracket_fallback) {
    throw ConvergenceError("q* iteration did not converge after " + std::to_string(it) + " steps", q);
  }

  auto g = [&](double x) { return variance_map(x, hp, act, rule) - x; };
  double hi = q;
  if (!(g(hi) < 0.0)) {
    hi = std::max(1.0, q);
    while (!(g(hi) < 0.0)) {
      hi *= 2.0;
      ++it;
      if (hi > 1e300) throw ConvergenceError("q* bracket: no upper bound", q);
    }
  }
  double lo = 0.0;
  if (!(g(0.0) > 0.0)) {
    lo = hi;
    do {
      lo *= 0.5;
      ++it;
    } while (!(g(lo) > 0.0) && lo > 1e-300);
    if (!(lo > 1e-300)) {
      if (std::abs(g(0.0)) > kFixedPointCheck) throw ConvergenceError("q* bracket failed", q);
      return {0.0, it, true, true};
    }
  }
  for (int k = 0; k < 400; ++k, ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    (g(mid) > 0.0 ? lo : hi) = mid;
  }
  const double root = std::abs(g(lo)) < std::abs(g(hi)) ? lo : hi;
  if (std::abs(g(root)) > kFixedPointCheck) {
    throw ConvergenceError("q* bisection did not reach the fixed-point tolerance", root);
  }
  return {root, it, true, true};
}

struct CStarResult {
  double value = 1.0;
  int iterations = 0;
  bool degenerate = false;      // q* == 0; reported as c* = 1
  bool boundary = false;        // root found at an end of [0, 1]
  bool multiple_roots = false;  // more than one stable root in [0, 1]
  bool stable = true;           // |slope| < 1 at the returned root
};

inline CStarResult solve_c_star(const HyperParams& hp, const Activation& act, double q_star,
                                const QuadratureRule& rule = default_rule()) {
  hp.validate();
  if (!(q_star >= 0.0)) throw DomainError("solve_c_star: q* must be >= 0");
  if (q_star == 0.0) {
    CStarResult r;
    r.degenerate = true;
    return r;
  }
  if (hp.rho == 1.0 && chi1(hp, act, q_star, rule) <= 1.0) {
    return {};  // ordered phase: c* = 1 exactly
  }

  CStarResult result;
  auto displacement = [&](double c) {
    ++result.iterations;
    return correlation_map(c, q_star, q_star, hp, act, rule) - c;
  };

  // Scan [0, 1) with points accumulating towards 1, where the chaotic root
  // approaches criticality. Record every + to - crossing (stable roots).
  std::vector<double> grid;
  for (int k = 1; k <= 8; ++k) grid.push_back(0.1 * k);
  for (int k = 4; k <= 60; ++k) grid.push_back(1.0 - std::pow(10.0, -0.25 * k));
  grid.erase(std::remove_if(grid.begin(), grid.end(), [](double c) { return c >= 1.0; }), grid.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const double d0 = displacement(0.0);
  struct Bracket {
    double lo, hi;
  };
  std::vector<Bracket> brackets;
  double prev_c = 0.0;
  double prev_d = d0;
  bool zero_root = false;
  for (double c : grid) {
    const double d = displacement(c);
    if (prev_d > 0.0 && d < 0.0) brackets.push_back({prev_c, c});
    if (prev_c == 0.0 && prev_d == 0.0 && d < 0.0) zero_root = true;
    prev_c = c;
    prev_d = d;
  }

  auto verify = [&](double c) {
    if (std::abs(displacement(c)) > kFixedPointCheck) {
      throw ConvergenceError("c* failed the fixed-point check", c);
    }
  };

  if (brackets.empty()) {
    if (zero_root) {
      verify(0.0);
      result.value = 0.0;
      result.boundary = true;
    } else {
      verify(1.0);
      result.value = 1.0;
      result.boundary = true;
    }
  } else {
    Bracket chosen = brackets.front();
    if (brackets.size() > 1) {
      result.multiple_roots = true;
      // Pick the basin reached by iterating from the canonical starting correlation.
      double c = kDefaultInitialCorrelation;
      for (int k = 0; k < 2000; ++k) c = correlation_map(c, q_star, q_star, hp, act, rule);
      double best = std::numeric_limits<double>::infinity();
      for (const auto& b : brackets) {
        const double dist = std::abs(0.5 * (b.lo + b.hi) - c);
        if (dist < best) {
          best = dist;
          chosen = b;
        }
      }
    }
    std::uintmax_t max_iter = 200;
    const auto [lo, hi] = boost::math::tools::toms748_solve(
        displacement, chosen.lo, chosen.hi, boost::math::tools::eps_tolerance<double>(), max_iter);
    result.value = 0.5 * (lo + hi);
    verify(result.value);
  }
  result.stable = std::abs(correlation_slope(hp, act, q_star, result.value, rule)) < 1.0 ||
                  (result.value == 1.0);
  return result;
}

struct FixedPoint {
  double q_star = 0.0;
  double c_star = 1.0;
  int iterations_q = 0;
  int iterations_c = 0;
  bool converged = false;
  bool degenerate = false;
  bool multiple_roots = false;
};

inline FixedPoint solve_fixed_point(const HyperParams& hp, const Activation& act,
                                    double q0 = kDefaultInitialVariance,
                                    const QuadratureRule& rule = default_rule()) {
  const QStarResult q = solve_q_star(hp, act, q0, rule);
  const CStarResult c = solve_c_star(hp, act, q.value, rule);
  return {q.value, c.value, q.iterations, c.iterations, q.converged, c.degenerate, c.multiple_roots};
}

// ---------------------------------------------------------------------------
// Critical line

// sigma_w^2 where chi1 = 1 at fixed sigma_b^2 (no dropout), by bisection on [1e-3, 10].
inline double critical_sigma_w(double sigma_b_sq, const Activation& act,
                               const QuadratureRule& rule = default_rule(),
                               double tolerance = 1e-9) {
  if (!act.bounded()) throw ConfigurationError("critical line requires a bounded activation");
  SolverOptions opts;
  opts.max_iterations = 2000;
  auto excess = [&](double sw) {
    const HyperParams hp{sw, sigma_b_sq, 1.0};
    const double q = solve_q_star(hp, act, kDefaultInitialVariance, rule, opts).value;
    return chi1(hp, act, q, rule) - 1.0;
  };
  double lo = 1e-3;
  double hi = 10.0;
  if (!(excess(lo) < 0.0 && excess(hi) > 0.0)) {
    throw NoCriticalPointError("chi1 - 1 does not change sign for sigma_w^2 in [1e-3, 10] at sigma_b^2 = " +
                               std::to_string(sigma_b_sq));
  }
  while (hi - lo > tolerance) {
    const double mid = 0.5 * (lo + hi);
    (excess(mid) < 0.0 ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Trajectories

struct Trajectory {
  int layers = 0;
  std::vector<double> q_aa;  // length layers + 1, index 0 is the input layer
  std::vector<double> q_bb;
  std::vector<double> c_ab;
  std::optional<double> q_star;
  std::optional<double> c_star;
};

// Joint iteration of the variance and covariance maps for a pair of inputs.
inline Trajectory iterate_trajectory(const HyperParams& hp, const Activation& act, double q0_a,
                                     double q0_b, double c0, int layers,
                                     const QuadratureRule& rule = default_rule()) {
  hp.validate();
  if (layers < 1) throw DomainError("iterate_trajectory: need at least one layer");
  if (!(std::abs(c0) <= 1.0)) throw DomainError("iterate_trajectory: |c0| must be <= 1");

  Trajectory t;
  t.layers = layers;
  t.q_aa.reserve(layers + 1);
  t.q_bb.reserve(layers + 1);
  t.c_ab.reserve(layers + 1);
  t.q_aa.push_back(q0_a);
  t.q_bb.push_back(q0_b);
  t.c_ab.push_back(c0);
  for (int l = 1; l <= layers; ++l) {
    const double qa = t.q_aa.back();
    const double qb = t.q_bb.back();
    const double cov = covariance_map(t.c_ab.back(), qa, qb, hp, act, rule);
    const double next_a = variance_map(qa, hp, act, rule);
    const double next_b = variance_map(qb, hp, act, rule);
    const double norm = std::sqrt(next_a * next_b);
    // Two zero-variance signals are identical.
    const double c = norm > 0.0 ? std::clamp(cov / norm, -1.0, 1.0) : 1.0;
    t.q_aa.push_back(next_a);
    t.q_bb.push_back(next_b);
    t.c_ab.push_back(c);
  }

  try {
    const QStarResult q = solve_q_star(hp, act, q0_a, rule);
    t.q_star = q.value;
    t.c_star = solve_c_star(hp, act, q.value, rule).value;
  } catch (const Error&) {
    // No fixed point (e.g. linear with sigma_w^2 >= 1); residuals unavailable.
  }
  return t;
}

}  // namespace mfdepth
