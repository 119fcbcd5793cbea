#pragma once

// Expectations under the standard Gaussian measure.

#include <cmath>
#include <cstddef>
#include <algorithm>
#include <map>
#include <utility>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "mfdepth/errors.hpp"

namespace mfdepth {

// Rule families for E[f(z)], z ~ N(0, 1):
//  - trapezoid: equispaced nodes on [-8, 8] weighted by the normal density.
//    Converges geometrically for integrands analytic in a strip, which covers
//    tanh(sqrt(q) z) at the variances reached here (poles at |Im z| = pi / (2 sqrt(q))).
//  - gauss_hermite: classical Gauss-Hermite; exact for polynomials of degree
//    < 2n but slow on tanh-type integrands once q is O(1).
enum class RuleKind { trapezoid, gauss_hermite };

inline constexpr int kDefaultQuadratureOrder = 101;
inline constexpr RuleKind kDefaultRuleKind = RuleKind::trapezoid;
inline constexpr double kTrapezoidHalfWidth = 8.0;

// Nodes and weights for E[f(z)], z ~ N(0, 1). Weights sum to one.
class QuadratureRule {
 public:
  QuadratureRule(RuleKind kind, int order);

  RuleKind kind() const noexcept { return kind_; }
  int order() const noexcept { return static_cast<int>(nodes_.size()); }
  std::span<const double> nodes() const noexcept { return nodes_; }
  std::span<const double> weights() const noexcept { return weights_; }

 private:
  void build_trapezoid(int n);
  void build_gauss_hermite(int n);
  void normalize();

  RuleKind kind_;
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

inline QuadratureRule::QuadratureRule(RuleKind kind, int order) : kind_(kind) {
  if (order < 1) {
    throw ConfigurationError("quadrature order must be positive, got " +
                             std::to_string(order));
  }
  if (kind == RuleKind::trapezoid) {
    build_trapezoid(order);
  } else {
    build_gauss_hermite(order);
  }
  normalize();
}

inline void QuadratureRule::build_trapezoid(int n) {
  nodes_.assign(n, 0.0);
  weights_.assign(n, 1.0);
  if (n == 1) return;
  const double h = 2.0 * kTrapezoidHalfWidth / (n - 1);
  for (int k = 0; k < n; ++k) {
    // Mirror so the rule is exactly symmetric.
    const double z = k < n / 2 ? -kTrapezoidHalfWidth + k * h : (k == n - 1 - k ? 0.0 : -nodes_[n - 1 - k]);
    nodes_[k] = z;
    weights_[k] = std::exp(-0.5 * z * z);
  }
}

inline void QuadratureRule::build_gauss_hermite(int n) {
  // Golub-Welsch eigenvalues of the Jacobi matrix seed the roots of H_n; a
  // Newton pass on the orthonormal Hermite functions psi_j = p_j exp(-x^2 / 2)
  // polishes them and yields the Christoffel numbers (valid up to n ~ 700).
  std::vector<double> x(n, 0.0);
  if (n > 1) {
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd sub(n - 1);
    for (int k = 1; k < n; ++k) sub[k - 1] = std::sqrt(0.5 * k);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver;
    solver.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
    for (int i = 0; i < n; ++i) x[i] = solver.eigenvalues()[i];
  }
  const double pim4 = 1.0 / std::pow(std::numbers::pi, 0.25);
  auto newton = [&](double z, double& pp) {
    for (int it = 0; it < 20; ++it) {
      double p1 = pim4 * std::exp(-0.5 * z * z);
      double p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(static_cast<double>(j) / (j + 1)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double z1 = z;
      z = z1 - p1 / pp;
      if (std::abs(z - z1) <= 1e-15 * std::max(1.0, std::abs(z))) break;
    }
    return z;
  };

  nodes_.assign(n, 0.0);
  weights_.assign(n, 0.0);
  for (int i = 0; i < (n + 1) / 2; ++i) {
    // Positive half, then mirror for exact symmetry.
    const int k = n - 1 - i;
    const bool middle = (k == i);
    double pp = 0.0;
    double z = newton(middle ? 0.0 : std::abs(x[k]), pp);
    if (middle) z = 0.0;
    // psi-based Christoffel numbers already include exp(x^2); multiply it back out.
    const double w = 2.0 / (pp * pp) * std::exp(-z * z);
    nodes_[k] = std::numbers::sqrt2 * z;
    nodes_[i] = -nodes_[k];
    weights_[k] = w;
    weights_[i] = w;
  }
}

inline void QuadratureRule::normalize() {
  const std::size_t n = weights_.size();
  // Smallest weights (the tails) first.
  double total = 0.0;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    total += weights_[i];
    if (n - 1 - i != i) total += weights_[n - 1 - i];
  }
  for (double& wi : weights_) wi /= total;
}

// Process-wide cache; rules are immutable once built.
inline const QuadratureRule& quadrature_rule(RuleKind kind, int order) {
  static std::mutex mutex;
  static std::map<std::pair<RuleKind, int>, std::unique_ptr<const QuadratureRule>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[{kind, order}];
  if (!slot) slot = std::make_unique<const QuadratureRule>(kind, order);
  return *slot;
}

inline const QuadratureRule& default_rule() {
  return quadrature_rule(kDefaultRuleKind, kDefaultQuadratureOrder);
}

inline const QuadratureRule& gauss_hermite(int order) {
  return quadrature_rule(RuleKind::gauss_hermite, order);
}

// Covariance of two zero-mean Gaussians (u1, u2) given by variances and a
// correlation: u1 = sqrt(q_a) z1, u2 = sqrt(q_b) (c z1 + sqrt(1 - c^2) z2).
struct CorrelatedPair {
  double q_a;
  double q_b;
  double c;

  CorrelatedPair(double q_a_, double q_b_, double c_) : q_a(q_a_), q_b(q_b_), c(c_) {
    if (!(q_a >= 0.0) || !(q_b >= 0.0)) {
      throw DomainError("correlated pair needs non-negative variances");
    }
    if (!(std::abs(c) <= 1.0)) {
      throw DomainError("correlation must lie in [-1, 1], got " + std::to_string(c));
    }
  }

  // Exactly zero at |c| = 1.
  double orthogonal_weight() const noexcept {
    return std::abs(c) == 1.0 ? 0.0 : std::sqrt((1.0 - c) * (1.0 + c));
  }
};

namespace detail {

[[noreturn]] inline void throw_non_finite(std::size_t node, double abscissa) {
  throw NumericError("non-finite integrand at quadrature node " + std::to_string(node) +
                         " (z = " + std::to_string(abscissa) + ")",
                     node, abscissa);
}

}  // namespace detail

// Sum_i w_i f(z_i) ~= E[f(z)].
template <class F>
double gauss_expect_1d(F&& f, const QuadratureRule& rule = default_rule()) {
  const auto z = rule.nodes();
  const auto w = rule.weights();
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double v = f(z[i]);
    if (!std::isfinite(v)) detail::throw_non_finite(i, z[i]);
    sum += w[i] * v;
  }
  return sum;
}

// Tensor-product rule for E[f(u1, u2)].
template <class F>
double gauss_expect_2d(F&& f, const CorrelatedPair& pair,
                       const QuadratureRule& rule = default_rule()) {
  const auto z = rule.nodes();
  const auto w = rule.weights();
  const double sa = std::sqrt(pair.q_a);
  const double sb = std::sqrt(pair.q_b);
  const double along = pair.c * sb;
  const double across = pair.orthogonal_weight() * sb;
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double u1 = sa * z[i];
    const double base = along * z[i];
    double inner = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double v = f(u1, base + across * z[j]);
      if (!std::isfinite(v)) detail::throw_non_finite(i * z.size() + j, z[j]);
      inner += w[j] * v;
    }
    sum += w[i] * inner;
  }
  return sum;
}

// E[g(u1) h(u2)], evaluating g once per outer node.
template <class G, class H>
double gauss_expect_2d_product(G&& g, H&& h, const CorrelatedPair& pair,
                               const QuadratureRule& rule = default_rule()) {
  const auto z = rule.nodes();
  const auto w = rule.weights();
  const double sa = std::sqrt(pair.q_a);
  const double sb = std::sqrt(pair.q_b);
  const double along = pair.c * sb;
  const double across = pair.orthogonal_weight() * sb;
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double gi = g(sa * z[i]);
    if (!std::isfinite(gi)) detail::throw_non_finite(i, z[i]);
    const double base = along * z[i];
    double inner = 0.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
      const double v = h(base + across * z[j]);
      if (!std::isfinite(v)) detail::throw_non_finite(i * z.size() + j, z[j]);
      inner += w[j] * v;
    }
    sum += w[i] * gi * inner;
  }
  return sum;
}

// Same as gauss_expect_2d_product for g(-x) h(-y) = g(x) h(y), e.g. two odd
// functions: a rule symmetric about 0 needs only half the outer nodes.
template <class G, class H>
double gauss_expect_2d_product_even(G&& g, H&& h, const CorrelatedPair& pair,
                                    const QuadratureRule& rule = default_rule()) {
  const auto z = rule.nodes();
  const auto w = rule.weights();
  const std::size_t n = z.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    if (z[i] != -z[n - 1 - i] || w[i] != w[n - 1 - i]) return gauss_expect_2d_product(g, h, pair, rule);
  }
  const double sa = std::sqrt(pair.q_a);
  const double sb = std::sqrt(pair.q_b);
  const double along = pair.c * sb;
  const double across = pair.orthogonal_weight() * sb;
  double sum = 0.0;
  for (std::size_t i = 0; i < (n + 1) / 2; ++i) {
    const double gi = g(sa * z[i]);
    if (!std::isfinite(gi)) detail::throw_non_finite(i, z[i]);
    const double base = along * z[i];
    double inner = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double v = h(base + across * z[j]);
      if (!std::isfinite(v)) detail::throw_non_finite(i * n + j, z[j]);
      inner += w[j] * v;
    }
    sum += (2 * i + 1 == n ? 1.0 : 2.0) * w[i] * gi * inner;
  }
  return sum;
}

}  // namespace mfdepth
