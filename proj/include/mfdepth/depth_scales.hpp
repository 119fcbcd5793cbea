#pragma once

#include "mfdepth/backprop_theory.hpp"
#include "mfdepth/meanfield.hpp"

namespace mfdepth {

struct DepthScales {
  double q_star = 0.0;
  double c_star = 1.0;
  double chi1 = 1.0;
  DepthScale xi_q;
  DepthScale xi_c;
  double xi_grad = 0.0;
  bool degenerate = false;  // q* == 0
};

inline DepthScales depth_scales(const HyperParams& hp, const Activation& act,
                                const QuadratureRule& rule = default_rule(),
                                double q0 = kDefaultInitialVariance) {
  DepthScales d;
  d.q_star = solve_q_star(hp, act, q0, rule).value;
  const CStarResult c = solve_c_star(hp, act, d.q_star, rule);
  d.c_star = c.value;
  d.degenerate = c.degenerate;
  d.chi1 = chi1(hp, act, d.q_star, rule);
  d.xi_q = xi_q(hp, act, d.q_star, rule);
  d.xi_c = xi_c(hp, act, d.q_star, d.c_star, rule);
  d.xi_grad = d.chi1 > 0.0 ? mfdepth::xi_grad(d.chi1) : std::numeric_limits<double>::quiet_NaN();
  return d;
}

}  // namespace mfdepth
