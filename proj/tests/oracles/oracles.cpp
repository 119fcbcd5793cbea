// Independent reference values, frozen into the unit tests.
// Shares no code with the library: its own RNG, its own quadrature
// (composite Simpson on [-10, 10]) and plain fixed-point loops.

#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <vector>

namespace {

constexpr double kHalfWidth = 10.0;

struct Simpson {
  std::vector<double> z, w;
  explicit Simpson(int intervals) {
    const double h = 2.0 * kHalfWidth / intervals;
    const double norm = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    for (int i = 0; i <= intervals; ++i) {
      const double x = -kHalfWidth + i * h;
      const double c = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
      z.push_back(x);
      w.push_back(c * h / 3.0 * norm * std::exp(-0.5 * x * x));
    }
  }
  double e1(const std::function<double(double)>& f) const {
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) s += w[i] * f(z[i]);
    return s;
  }
  double e2(const std::function<double(double, double)>& f, double q, double c) const {
    const double r = std::sqrt(q), s = std::sqrt(1.0 - c * c);
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      double inner = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) inner += w[j] * f(r * z[i], r * (c * z[i] + s * z[j]));
      acc += w[i] * inner;
    }
    return acc;
  }
};

double dtanh(double x) {
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

double q_star(const Simpson& s, double sw, double sb) {
  double q = 0.8;
  for (int it = 0; it < 100000; ++it) {
    const double r = std::sqrt(q);
    const double next = sw * s.e1([&](double z) { return std::pow(std::tanh(r * z), 2); }) + sb;
    if (next == q) break;
    q = next;
  }
  return q;
}

double chi(const Simpson& s, double sw, double q) {
  const double r = std::sqrt(q);
  return sw * s.e1([&](double z) { return std::pow(dtanh(r * z), 2); });
}

// Critical sigma_w^2 at sigma_b^2 via the parametric line
// q -> (1 / E[phi'^2], q - E[phi^2] / E[phi'^2]).
double critical_line(const Simpson& s, double sb) {
  auto bias_at = [&](double q) {
    const double r = std::sqrt(q);
    const double sw = 1.0 / s.e1([&](double z) { return std::pow(dtanh(r * z), 2); });
    return std::pair{sw, q - sw * s.e1([&](double z) { return std::pow(std::tanh(r * z), 2); })};
  };
  double lo = 1e-12, hi = 10.0;
  for (int k = 0; k < 200; ++k) {
    const double mid = 0.5 * (lo + hi);
    (bias_at(mid).second < sb ? lo : hi) = mid;
  }
  return bias_at(0.5 * (lo + hi)).first;
}

// -1/slope of log residuals over the window (1e-10, 1e-1), longest run.
double fit_xi(const std::vector<double>& r) {
  int best = 0, best_first = 0, run = 0, first = 0;
  for (int i = 0; i < (int)r.size(); ++i) {
    if (r[i] > 1e-10 && r[i] < 1e-1) {
      if (!run) first = i;
      if (++run > best) best = run, best_first = first;
    } else {
      run = 0;
    }
  }
  double mx = 0, my = 0;
  for (int i = 0; i < best; ++i) mx += best_first + i, my += std::log(r[best_first + i]);
  mx /= best, my /= best;
  double sxx = 0, sxy = 0;
  for (int i = 0; i < best; ++i) {
    const double dx = best_first + i - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(r[best_first + i]) - my);
  }
  return -sxx / sxy;
}

}  // namespace

int main() {
  const Simpson fine(2000);
  const Simpson grid2d(400);

  std::mt19937_64 gen(20240601);
  std::normal_distribution<double> n01;
  const long samples = 100000000;
  const double r08 = std::sqrt(0.8);
  const double qs17 = q_star(fine, 1.7, 0.05);
  const double r17 = std::sqrt(qs17);
  double s1 = 0, s1sq = 0, s2 = 0, s2sq = 0, s3 = 0, s3sq = 0, s4 = 0, s4sq = 0;
  const double c = 0.6, o = std::sqrt(1 - c * c);
  for (long i = 0; i < samples; ++i) {
    const double z1 = n01(gen), z2 = n01(gen);
    const double a = std::pow(std::tanh(r08 * z1), 2);
    const double b = std::tanh(r08 * z1) * std::tanh(r08 * (c * z1 + o * z2));
    const double d = std::tanh(r17 * z1) * std::tanh(r17 * (c * z1 + o * z2));
    const double e = std::pow(dtanh(r17 * z1), 2);
    s1 += a, s1sq += a * a, s2 += b, s2sq += b * b, s3 += d, s3sq += d * d, s4 += e, s4sq += e * e;
  }
  auto report = [&](const char* name, double sum, double sumsq, double scale, double shift) {
    const double m = sum / samples;
    const double se = std::sqrt((sumsq / samples - m * m) / samples);
    std::printf("%-40s %.17g  (mc stderr %.2g)\n", name, scale * m + shift, scale * se);
  };
  report("mc E tanh^2(sqrt(0.8) z)", s1, s1sq, 1.0, 0.0);
  report("mc E tanh(u1)tanh(u2) (0.8,0.8,0.6)", s2, s2sq, 1.0, 0.0);
  report("mc variance_map(0.8; 1.7, 0.05)", s1, s1sq, 1.7, 0.05);
  report("mc correlation_map(0.6; q*(1.7,0.05))", s3, s3sq, 1.7 / qs17, 0.05 / qs17);
  report("mc chi1(1.7, 0.05)", s4, s4sq, 1.7, 0.0);

  std::printf("%-40s %.17g\n", "q*(tanh, 1.7, 0.05)", qs17);
  std::printf("%-40s %.17g\n", "chi1 quad (1.7, 0.05)", chi(fine, 1.7, qs17));

  // c* at (2.5, 0.05) by direct iteration from 0.6.
  {
    const double q = q_star(fine, 2.5, 0.05);
    double cc = 0.6;
    int it = 0;
    for (; it < 100000; ++it) {
      const double next =
          (2.5 * grid2d.e2([](double u, double v) { return std::tanh(u) * std::tanh(v); }, q, cc) + 0.05) / q;
      if (std::abs(next - cc) < 1e-16) {
        cc = next;
        break;
      }
      cc = next;
    }
    std::printf("%-40s %.17g  (%d steps)\n", "c*(tanh, 2.5, 0.05)", cc, it);
  }

  for (double sb : {0.05, 0.3}) {
    std::printf("critical sigma_w^2 at sigma_b^2=%-13g %.17g\n", sb, critical_line(fine, sb));
  }

  // Residual fits from directly iterated maps.
  {
    const double sw = 1.5, sb = 0.05;
    const double qs = q_star(fine, sw, sb);
    std::vector<double> r;
    double q = 0.8;
    for (int l = 0; l <= 200; ++l) {
      r.push_back(std::abs(q - qs));
      const double rq = std::sqrt(q);
      q = sw * fine.e1([&](double z) { return std::pow(std::tanh(rq * z), 2); }) + sb;
    }
    std::printf("%-40s %.17g\n", "fitted xi_q (1.5, 0.05)", fit_xi(r));
  }
  {
    const double sw = 3.0, sb = 0.05;
    const double qs = q_star(fine, sw, sb);
    double cs = 0.6;
    auto cmap = [&](double cc) {
      return (sw * grid2d.e2([](double u, double v) { return std::tanh(u) * std::tanh(v); }, qs, cc) + sb) / qs;
    };
    for (int k = 0; k < 2000; ++k) cs = cmap(cs);
    std::vector<double> r;
    double cc = 0.6;
    for (int l = 0; l <= 400; ++l) {
      r.push_back(std::abs(cc - cs));
      cc = cmap(cc);
    }
    std::printf("%-40s %.17g\n", "fitted xi_c (3.0, 0.05) at q = q*", fit_xi(r));
  }
  return 0;
}
