#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "mfdepth/quadrature.hpp"

using namespace mfdepth;

namespace {

// Frozen from tests/oracles: 1e8-sample Monte Carlo, stderr ~3e-5.
constexpr double kMcTanhSqQ08 = 0.3541015485127873;
constexpr double kMcTanhTanhPair = 0.20413530389801682;

class RuleMoments : public ::testing::TestWithParam<std::pair<RuleKind, int>> {};

}  // namespace

TEST_P(RuleMoments, NormalizedSymmetricUnitVariance) {
  const auto [kind, order] = GetParam();
  const QuadratureRule& r = quadrature_rule(kind, order);
  EXPECT_EQ(r.order(), order);
  double s0 = 0, s1 = 0, s2 = 0;
  for (int i = 0; i < r.order(); ++i) {
    s0 += r.weights()[i];
    s1 += r.weights()[i] * r.nodes()[i];
    s2 += r.weights()[i] * r.nodes()[i] * r.nodes()[i];
  }
  EXPECT_NEAR(s0, 1.0, 1e-14);
  EXPECT_NEAR(s1, 0.0, 1e-13);
  EXPECT_NEAR(s2, 1.0, 1e-12);
}

INSTANTIATE_TEST_SUITE_P(Rules, RuleMoments,
                         ::testing::Values(std::pair{RuleKind::trapezoid, 101}, std::pair{RuleKind::trapezoid, 202},
                                           std::pair{RuleKind::gauss_hermite, 20},
                                           std::pair{RuleKind::gauss_hermite, 61},
                                           std::pair{RuleKind::gauss_hermite, 200}));

TEST(Quadrature, RulesAreCachedPerOrder) {
  EXPECT_EQ(&quadrature_rule(RuleKind::trapezoid, 101), &default_rule());
  EXPECT_EQ(&gauss_hermite(61), &gauss_hermite(61));
  EXPECT_NE(&gauss_hermite(61), &gauss_hermite(62));
}

TEST(Quadrature, RejectsNonPositiveOrder) {
  EXPECT_THROW(quadrature_rule(RuleKind::trapezoid, 0), Error);
}

TEST(Quadrature, OneDimensionalExamples) {
  EXPECT_NEAR(gauss_expect_1d([](double) { return 1.0; }), 1.0, 1e-14);
  EXPECT_NEAR(gauss_expect_1d([](double z) { return z * z; }), 1.0, 1e-12);
  EXPECT_NEAR(gauss_expect_1d([](double z) { return z * z * z * z; }), 3.0, 1e-10);
  const double s = std::sqrt(0.8);
  const double v = gauss_expect_1d([&](double z) { return std::pow(std::tanh(s * z), 2); });
  EXPECT_NEAR(v, kMcTanhSqQ08, 1e-4);
}

TEST(Quadrature, TwoDimensionalExamples) {
  EXPECT_NEAR(gauss_expect_2d([](double a, double b) { return a * b; }, {2.0, 2.0, 0.5}), 1.0, 1e-12);
  EXPECT_NEAR(gauss_expect_2d([](double a, double) { return a; }, {0.7, 1.3, -0.2}), 0.0, 1e-14);
  const double v = gauss_expect_2d([](double a, double b) { return std::tanh(a) * std::tanh(b); }, {0.8, 0.8, 0.6});
  EXPECT_NEAR(v, kMcTanhTanhPair, 1e-4);
}

TEST(Quadrature, ProductFormMatchesGeneric) {
  const CorrelatedPair p(0.9, 1.4, 0.37);
  const double g = gauss_expect_2d([](double a, double b) { return std::tanh(a) * std::tanh(b); }, p);
  const double h = gauss_expect_2d_product([](double a) { return std::tanh(a); }, [](double b) { return std::tanh(b); }, p);
  EXPECT_NEAR(g, h, 1e-15);
}

TEST(Quadrature, EvenFoldMatchesProductForm) {
  auto tanh_f = [](double a) { return std::tanh(a); };
  auto sech_sq = [](double a) { return 1.0 / (std::cosh(a) * std::cosh(a)); };
  for (const QuadratureRule* rule : {&quadrature_rule(RuleKind::trapezoid, 101), &quadrature_rule(RuleKind::trapezoid, 202),
                                     &quadrature_rule(RuleKind::gauss_hermite, 61)}) {
    for (double c : {-0.8, 0.0, 0.37, 0.999, 1.0}) {
      const CorrelatedPair p(0.9, 1.4, c);
      EXPECT_NEAR(gauss_expect_2d_product_even(tanh_f, tanh_f, p, *rule),
                  gauss_expect_2d_product(tanh_f, tanh_f, p, *rule), 1e-15);
      EXPECT_NEAR(gauss_expect_2d_product_even(sech_sq, sech_sq, p, *rule),
                  gauss_expect_2d_product(sech_sq, sech_sq, p, *rule), 1e-15);
    }
  }
}

TEST(Quadrature, FullCorrelationReducesToOneDimension) {
  for (double q : {0.1, 0.8, 2.5}) {
    const double s = std::sqrt(q);
    auto f = [](double a, double b) { return std::tanh(a) * std::sin(b) + a * a * std::cos(b); };
    const double two = gauss_expect_2d(f, {q, q, 1.0});
    const double one = gauss_expect_1d([&](double z) { return f(s * z, s * z); });
    EXPECT_NEAR(two, one, 1e-10) << "q=" << q;
  }
}

TEST(Quadrature, OrthogonalWeightExactlyZeroAtUnitCorrelation) {
  EXPECT_EQ(CorrelatedPair(1.0, 1.0, 1.0).orthogonal_weight(), 0.0);
  EXPECT_EQ(CorrelatedPair(1.0, 1.0, -1.0).orthogonal_weight(), 0.0);
}

TEST(Quadrature, SymmetricUnderSwap) {
  auto f = [](double a, double b) { return std::tanh(a) * b * b + std::sin(a - 0.3 * b); };
  auto ft = [&](double a, double b) { return f(b, a); };
  for (double c : {-0.7, 0.0, 0.45, 0.99}) {
    const double ab = gauss_expect_2d(f, {0.6, 1.9, c});
    const double ba = gauss_expect_2d(ft, {1.9, 0.6, c});
    EXPECT_NEAR(ab, ba, 1e-12) << "c=" << c;
  }
}

TEST(Quadrature, DoublingOrderIsConverged) {
  const QuadratureRule& fine = quadrature_rule(RuleKind::trapezoid, 202);
  const double s = std::sqrt(0.8);
  auto f1 = [&](double z) { return std::pow(std::tanh(s * z), 2); };
  EXPECT_NEAR(gauss_expect_1d(f1), gauss_expect_1d(f1, fine), 1e-10);
  auto f2 = [](double a, double b) { return std::tanh(a) * std::tanh(b); };
  EXPECT_NEAR(gauss_expect_2d(f2, {0.8, 0.8, 0.6}), gauss_expect_2d(f2, {0.8, 0.8, 0.6}, fine), 1e-10);
}

TEST(Quadrature, GaussHermiteAgreesOnPolynomials) {
  const QuadratureRule& gh = gauss_hermite(30);
  EXPECT_NEAR(gauss_expect_1d([](double z) { return std::pow(z, 6); }, gh), 15.0, 1e-10);
  EXPECT_NEAR(gauss_expect_1d([](double z) { return std::pow(z, 8); }, gh), 105.0, 1e-9);
}

TEST(Quadrature, InvalidPairRejected) {
  EXPECT_THROW(CorrelatedPair(-0.1, 1.0, 0.0), DomainError);
  EXPECT_THROW(CorrelatedPair(1.0, 1.0, 1.0001), DomainError);
  EXPECT_THROW(CorrelatedPair(1.0, 1.0, std::nan("")), DomainError);
}

TEST(Quadrature, NonFiniteIntegrandNamesNode) {
  try {
    gauss_expect_1d([](double z) { return z > 7.0 ? std::numeric_limits<double>::infinity() : 0.0; });
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_GT(e.abscissa(), 7.0);
    EXPECT_NE(std::string(e.what()).find("node"), std::string::npos);
  }
}
