#pragma once

// Depth scales measured from trajectories: residuals against the fixed points
// and a log-linear least-squares fit over the clean exponential window.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "mfdepth/errors.hpp"
#include "mfdepth/meanfield.hpp"

namespace mfdepth {

inline constexpr double kDefaultFitFloor = 1e-10;
inline constexpr double kDefaultFitCeiling = 1e-1;

struct ExpFit {
  double xi = 0.0;  // -1 / slope; negative for growing series
  double log_intercept = 0.0;
  double slope = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 0.0;
  std::pair<int, int> window{0, 0};  // first and last index used, inclusive
  int n_points = 0;
  bool infinite = false;  // |slope| <= 1e-14
};

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
  double r_squared = 1.0;
};

// Ordinary least squares y = intercept + slope * x.
inline LinearFit least_squares(std::span<const double> x, std::span<const double> y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw InsufficientDataError("least squares needs >= 2 paired points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxx = 0.0, sxy = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    sxy += dx * dy;
    syy += dy * dy;
  }
  if (sxx == 0.0) throw InsufficientDataError("least squares needs distinct abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  double sse = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - f.intercept - f.slope * x[i];
    sse += r * r;
  }
  f.slope_stderr = n > 2 ? std::sqrt(sse / static_cast<double>(n - 2) / sxx)
                         : std::numeric_limits<double>::infinity();
  f.r_squared = syy > 0.0 ? std::clamp(1.0 - sse / syy, 0.0, 1.0) : 1.0;
  return f;
}

// Longest contiguous run of entries strictly inside (floor, ceiling); earliest wins ties.
inline std::pair<int, int> fit_window(std::span<const double> series, double floor, double ceiling) {
  int best_first = 0, best_len = 0;
  int run_first = 0, run_len = 0;
  for (int i = 0; i < static_cast<int>(series.size()); ++i) {
    const double v = series[i];
    if (v > floor && v < ceiling) {
      if (run_len == 0) run_first = i;
      ++run_len;
      if (run_len > best_len) {
        best_len = run_len;
        best_first = run_first;
      }
    } else {
      run_len = 0;
    }
  }
  return {best_first, best_first + best_len - 1};
}

inline ExpFit fit_exponential(std::span<const double> series, double floor = kDefaultFitFloor,
                              double ceiling = kDefaultFitCeiling) {
  if (!(floor >= 0.0 && ceiling > floor)) throw DomainError("fit window needs 0 <= floor < ceiling");
  const auto [first, last] = fit_window(series, floor, ceiling);
  const int n = last - first + 1;
  if (n < 3) {
    throw InsufficientDataError("fewer than 3 points inside (" + std::to_string(floor) + ", " +
                                std::to_string(ceiling) + ")");
  }
  std::vector<double> x(n), y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = first + i;
    y[i] = std::log(series[first + i]);
  }
  const LinearFit lf = least_squares(x, y);
  ExpFit f;
  f.slope = lf.slope;
  f.slope_stderr = lf.slope_stderr;
  f.log_intercept = lf.intercept;
  f.r_squared = lf.r_squared;
  f.window = {first, last};
  f.n_points = n;
  if (std::abs(lf.slope) <= 1e-14) {
    f.infinite = true;
    f.xi = lf.slope < 0.0 ? std::numeric_limits<double>::infinity()
                          : (lf.slope > 0.0 ? -std::numeric_limits<double>::infinity()
                                            : std::numeric_limits<double>::infinity());
  } else {
    f.xi = -1.0 / lf.slope;
  }
  return f;
}

struct Residuals {
  std::vector<double> q;
  std::vector<double> c;
};

inline Residuals residuals(const Trajectory& t) {
  if (!t.q_star || !t.c_star) throw DomainError("trajectory carries no fixed points");
  Residuals r;
  r.q.reserve(t.q_aa.size());
  r.c.reserve(t.c_ab.size());
  for (double q : t.q_aa) r.q.push_back(std::abs(q - *t.q_star));
  for (double c : t.c_ab) r.c.push_back(std::abs(c - *t.c_star));
  return r;
}

// Layers needed for the residuals to cross the default fit window: a generous
// multiple of the slowest theoretical depth scale.
inline int trajectory_length_for(double xi_max) {
  if (!std::isfinite(xi_max)) return 20000;
  return static_cast<int>(std::clamp(40.0 * xi_max + 50.0, 100.0, 20000.0));
}

// xi_q from the variance residuals of a single input started at q0.
inline ExpFit measure_xi_q(const HyperParams& hp, const Activation& act, int layers,
                           double floor = kDefaultFitFloor, double ceiling = kDefaultFitCeiling,
                           double q0 = kDefaultInitialVariance, const QuadratureRule& rule = default_rule()) {
  hp.validate();
  if (layers < 1) throw DomainError("measure_xi_q: need at least one layer");
  const double q_star = solve_q_star(hp, act, q0, rule).value;
  std::vector<double> r;
  r.reserve(layers + 1);
  double q = q0;
  r.push_back(std::abs(q - q_star));
  for (int l = 1; l <= layers; ++l) {
    q = variance_map(q, hp, act, rule);
    r.push_back(std::abs(q - q_star));
  }
  return fit_exponential(r, floor, ceiling);
}

// xi_c from the correlation residuals of a pair whose variances start at q*,
// so the variance transient does not leak into the correlation series.
inline ExpFit measure_xi_c(const HyperParams& hp, const Activation& act, int layers,
                           double floor = kDefaultFitFloor, double ceiling = kDefaultFitCeiling,
                           double c0 = kDefaultInitialCorrelation, const QuadratureRule& rule = default_rule()) {
  double q = solve_q_star(hp, act, kDefaultInitialVariance, rule).value;
  if (q == 0.0) q = kDefaultInitialVariance;
  const Trajectory t = iterate_trajectory(hp, act, q, q, c0, layers, rule);
  return fit_exponential(residuals(t).c, floor, ceiling);
}

}  // namespace mfdepth
