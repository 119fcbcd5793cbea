#include <cmath>
#include <string>

#include <gtest/gtest.h>

#include "mfdepth/commands.hpp"

using namespace mfdepth;

namespace {

double num(const Cell& c) { return std::get<double>(c); }
const std::string& str(const Cell& c) { return std::get<std::string>(c); }

std::size_t col(const Table& t, const std::string& name) {
  for (std::size_t i = 0; i < t.columns.size(); ++i) {
    if (t.columns[i] == name) return i;
  }
  ADD_FAILURE() << "no column " << name;
  return 0;
}

SweepSpec point(double sw, double sb, double rho = 1.0, const char* act = "tanh") {
  SweepSpec s;
  s.sigma_w_sq = {sw, sw, 1};
  s.sigma_b_sq = {sb, sb, 1};
  s.rho = {rho};
  s.activation = act;
  return s;
}

}  // namespace

TEST(Range, Parse) {
  const Range a = Range::parse("0.1:3.0:30");
  EXPECT_EQ(a.steps, 30);
  EXPECT_DOUBLE_EQ(a.values().front(), 0.1);
  EXPECT_DOUBLE_EQ(a.values().back(), 3.0);
  EXPECT_EQ(Range::parse("1.7").values(), std::vector<double>{1.7});
  EXPECT_THROW(Range::parse("1:2"), ConfigurationError);
  EXPECT_THROW(Range::parse("2:1:5"), ConfigurationError);
  EXPECT_THROW(Range::parse("1:2:0"), ConfigurationError);
  EXPECT_THROW(Range::parse("abc"), ConfigurationError);
  EXPECT_THROW(Range::parse("1:2:2.5"), ConfigurationError);
}

TEST(SweepSpec, ErrorsNameTheFlag) {
  SweepSpec s;
  s.rho = {1.2};
  try {
    s.validate();
    FAIL();
  } catch (const ConfigurationError& e) {
    EXPECT_NE(std::string(e.what()).find("--rho"), std::string::npos);
  }
  s = SweepSpec{};
  s.activation = "relu";
  EXPECT_THROW(s.validate(), ConfigurationError);
  s = SweepSpec{};
  s.fit_floor = 1.0;
  EXPECT_THROW(s.validate(), ConfigurationError);
}

TEST(GridPoints, DeterministicOrder) {
  SweepSpec s;
  s.sigma_w_sq = Range::parse("1:2:2");
  s.sigma_b_sq = Range::parse("0.1:0.2:2");
  s.rho = {1.0, 0.9};
  const auto pts = grid_points(s);
  ASSERT_EQ(pts.size(), 8u);
  EXPECT_EQ(pts[0].rho, 1.0);
  EXPECT_EQ(pts[1].sigma_w_sq, 2.0);
  EXPECT_EQ(pts[2].sigma_b_sq, 0.2);
  EXPECT_EQ(pts[4].rho, 0.9);
}

TEST(Output, CsvRoundTrip) {
  Table t;
  t.columns = {"a", "b", "c", "error"};
  t.add({0.1, 1.0 / 3.0, std::numeric_limits<double>::infinity(), std::string("")});
  t.add({-2.5e-300, std::nan(""), -std::numeric_limits<double>::infinity(), std::string("x, \"y\"")});
  t.add({std::monostate{}, 123456789.123456789, 6.02214076e23, std::string("ok")});
  const Table back = parse_csv(to_csv(t));
  ASSERT_EQ(back.columns, t.columns);
  ASSERT_EQ(back.rows.size(), 3u);
  EXPECT_EQ(num(back.rows[0][1]), 1.0 / 3.0);
  EXPECT_TRUE(std::isinf(num(back.rows[0][2])));
  EXPECT_EQ(num(back.rows[1][0]), -2.5e-300);
  EXPECT_TRUE(std::isnan(num(back.rows[1][1])));
  EXPECT_EQ(str(back.rows[1][3]), "x, \"y\"");
  EXPECT_TRUE(std::holds_alternative<std::monostate>(back.rows[2][0]));
  EXPECT_EQ(num(back.rows[2][1]), 123456789.123456789);
  EXPECT_EQ(num(back.rows[2][2]), 6.02214076e23);
}

TEST(Output, CsvRoundTripsRealSweep) {
  SweepSpec s;
  s.sigma_w_sq = Range::parse("0.5:3.0:6");
  s.sigma_b_sq = Range::parse("0.05");
  const Table t = cmd_phase_diagram(s);
  const Table back = parse_csv(to_csv(t));
  ASSERT_EQ(back.rows.size(), t.rows.size());
  for (std::size_t r = 0; r < t.rows.size(); ++r) {
    for (std::size_t c = 0; c < t.columns.size(); ++c) {
      if (const auto* d = std::get_if<double>(&t.rows[r][c])) {
        EXPECT_EQ(num(back.rows[r][c]), *d);
      }
    }
  }
}

TEST(Output, JsonInfinityFlag) {
  Table t;
  t.columns = {"xi", "name"};
  t.add({std::numeric_limits<double>::infinity(), std::string("p")});
  t.add({2.5, std::string("q")});
  const auto j = nlohmann::json::parse(to_json(t));
  ASSERT_EQ(j.size(), 2u);
  EXPECT_TRUE(j[0]["xi"].is_null());
  EXPECT_EQ(j[0]["xi_flag"], "inf");
  EXPECT_EQ(j[1]["xi"], 2.5);
  EXPECT_FALSE(j[1].contains("xi_flag"));
}

TEST(PhaseDiagram, ZeroBiasCriticalRow) {
  SweepSpec s = point(1.0, 0.0);
  s.sigma_w_sq = Range::parse("0.5:1.5:3");
  const Table t = cmd_phase_diagram(s);
  ASSERT_EQ(t.rows.size(), 4u);
  const auto& crit = t.rows.back();
  EXPECT_EQ(str(crit[col(t, "phase")]), "critical");
  EXPECT_NEAR(num(crit[col(t, "sigma_w_sq")]), 1.0, 1e-6);
  EXPECT_EQ(t.exit_status(), 0);
}

TEST(PhaseDiagram, PhaseLabels) {
  const Table ordered = cmd_phase_diagram(point(1.7, 0.05));
  EXPECT_EQ(str(ordered.rows[0][col(ordered, "phase")]), "ordered");
  EXPECT_LT(num(ordered.rows[0][col(ordered, "chi1")]), 1.0);
  const Table chaotic = cmd_phase_diagram(point(2.5, 0.05));
  EXPECT_EQ(str(chaotic.rows[0][col(chaotic, "phase")]), "chaotic");
  EXPECT_LT(num(chaotic.rows[0][col(chaotic, "c_star")]), 1.0);
}

TEST(PhaseDiagram, DropoutHasNoCriticalRow) {
  SweepSpec s = point(1.0, 0.05, 0.9);
  s.sigma_w_sq = Range::parse("0.1:3.0:30");
  const Table t = cmd_phase_diagram(s);
  EXPECT_EQ(t.rows.size(), 30u);
  for (const auto& r : t.rows) EXPECT_NE(str(r[col(t, "phase")]), "critical");
}

TEST(DepthScalesCommand, LinearSweepExact) {
  SweepSpec s = point(0.5, 0.1, 1.0, "linear");
  s.sigma_w_sq = Range::parse("0.1:0.9:5");
  s.fit_floor = 1e-6;
  const Table t = cmd_depth_scales(s);
  EXPECT_EQ(t.exit_status(), 0);
  for (const auto& r : t.rows) {
    EXPECT_NEAR(num(r[col(t, "xi_q_measured")]) / num(r[col(t, "xi_q_theory")]), 1.0, 1e-8);
    EXPECT_NEAR(num(r[col(t, "xi_c_measured")]) / num(r[col(t, "xi_c_theory")]), 1.0, 1e-8);
  }
}

TEST(DepthScalesCommand, TanhGridAgreement) {
  SweepSpec s;
  s.sigma_w_sq = Range::parse("0.5:3.0:6");
  s.sigma_b_sq = Range::parse("0.1");
  const Table t = cmd_depth_scales(s);
  const double crit = critical_sigma_w(0.1, builtin("tanh"));
  for (const auto& r : t.rows) {
    if (std::abs(num(r[0]) - crit) < 0.1) continue;
    EXPECT_NEAR(num(r[col(t, "xi_q_measured")]) / num(r[col(t, "xi_q_theory")]), 1.0, 0.02);
    EXPECT_NEAR(num(r[col(t, "xi_c_measured")]) / num(r[col(t, "xi_c_theory")]), 1.0, 0.02);
  }
}

TEST(DepthScalesCommand, DropoutBoundedXiC) {
  SweepSpec s = point(1.0, 0.05, 0.94);
  s.sigma_w_sq = Range::parse("0.1:3.0:30");
  const Table t = cmd_depth_scales(s);
  for (const auto& r : t.rows) EXPECT_TRUE(std::isfinite(num(r[col(t, "xi_c_theory")])));
}

TEST(DepthScalesCommand, PartialFailureExitStatus) {
  SweepSpec s = point(0.5, 0.1, 1.0, "linear");
  s.sigma_w_sq = Range::parse("0.5:1.5:2");
  const Table t = cmd_depth_scales(s);
  EXPECT_TRUE(t.partial_failure);
  EXPECT_EQ(t.exit_status(), 2);
  EXPECT_EQ(str(t.rows[0].back()), "");
  EXPECT_NE(str(t.rows[1].back()), "");
}

TEST(CriticalLineCommand, Anchor) {
  const Table t = cmd_critical_line(point(1.0, 0.0));
  EXPECT_NEAR(num(t.rows[0][col(t, "sigma_w_sq_crit")]), 1.0, 1e-6);
}

TEST(TrainableDepth, Examples) {
  const Table lin = cmd_trainable_depth(point(0.5, 0.1, 1.0, "linear"));
  EXPECT_NEAR(num(lin.rows[0][col(lin, "trainable_depth")]), 6.0 / std::log(2.0), 1e-9);
  const Table crit = cmd_trainable_depth(point(1.0, 0.0));
  EXPECT_TRUE(std::isinf(num(crit.rows[0][col(crit, "trainable_depth")])));
  EXPECT_NE(to_csv(crit).find(",inf,"), std::string::npos);
}

TEST(Simulate, ForwardLinearFlat) {
  SweepSpec s = point(1.0, 0.0, 1.0, "linear");
  s.depth = 8;
  s.width = 200;
  s.networks = 40;
  const Table t = cmd_simulate(s, SimulateMode::forward);
  ASSERT_EQ(t.rows.size(), 8u);
  for (const auto& r : t.rows) {
    EXPECT_LE(std::abs(num(r[col(t, "q_aa_hat")]) - 0.8), 5 * num(r[col(t, "q_aa_stderr")]));
    EXPECT_NEAR(num(r[col(t, "q_aa_theory")]), 0.8, 1e-12);
  }
}

TEST(Simulate, GradientCovarianceLinear) {
  SweepSpec s = point(0.5, 0.1, 1.0, "linear");
  s.depth = 40;
  s.width = 150;
  s.networks = 20;
  s.q0 = 0.4;
  const Table t = cmd_simulate(s, SimulateMode::grad_covariance);
  EXPECT_NEAR(num(t.rows[0][col(t, "theory_slope")]), std::log(0.5), 1e-12);
  EXPECT_NEAR(num(t.rows[0][col(t, "measured_slope")]) / std::log(0.5), 1.0, 0.10);
}

TEST(Simulate, GradientsColumns) {
  SweepSpec s = point(1.0, 0.05);
  s.depth = 30;
  s.width = 60;
  s.networks = 5;
  const Table t = cmd_simulate(s, SimulateMode::gradients);
  EXPECT_EQ(t.rows.size(), 30u);
  EXPECT_LT(num(t.rows[0][col(t, "theory_slope")]), 0.0);
}

TEST(Simulate, SinglePointOnly) {
  SweepSpec s = point(1.0, 0.05);
  s.sigma_w_sq = Range::parse("1:2:2");
  EXPECT_THROW(cmd_simulate(s, SimulateMode::forward), ConfigurationError);
}
