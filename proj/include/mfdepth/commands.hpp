#pragma once

// Sweep commands behind the command-line tool. Each returns a Table; rows
// follow grid order (rho, then sigma_b^2, then sigma_w^2) whatever order the
// points finish in.

#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mfdepth/analysis.hpp"
#include "mfdepth/backprop_theory.hpp"
#include "mfdepth/depth_scales.hpp"
#include "mfdepth/meanfield.hpp"
#include "mfdepth/parallel.hpp"
#include "mfdepth/simulator.hpp"

namespace mfdepth {

// ---------------------------------------------------------------------------
// Tables

using Cell = std::variant<std::monostate, double, std::string>;

struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<Cell>> rows;
  bool partial_failure = false;

  void add(std::vector<Cell> row) { rows.push_back(std::move(row)); }
  int exit_status() const noexcept { return partial_failure ? 2 : 0; }
};

inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

namespace detail {

inline std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

}  // namespace detail

inline std::string to_csv(const Table& t) {
  std::ostringstream out;
  for (std::size_t i = 0; i < t.columns.size(); ++i) out << (i ? "," : "") << t.columns[i];
  out << '\n';
  for (const auto& row : t.rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) out << ',';
      if (const auto* d = std::get_if<double>(&row[i])) {
        out << format_number(*d);
      } else if (const auto* s = std::get_if<std::string>(&row[i])) {
        out << detail::csv_escape(*s);
      }
    }
    out << '\n';
  }
  return out.str();
}

// Array of objects keyed by column. Non-finite numbers become null with a
// sibling "<column>_flag" holding "inf", "-inf" or "nan".
inline std::string to_json(const Table& t) {
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const auto& row : t.rows) {
    nlohmann::ordered_json obj = nlohmann::ordered_json::object();
    for (std::size_t i = 0; i < row.size(); ++i) {
      const std::string& key = t.columns[i];
      if (const auto* d = std::get_if<double>(&row[i])) {
        if (std::isfinite(*d)) {
          obj[key] = *d;
        } else {
          obj[key] = nullptr;
          obj[key + "_flag"] = format_number(*d);
        }
      } else if (const auto* s = std::get_if<std::string>(&row[i])) {
        obj[key] = *s;
      } else {
        obj[key] = nullptr;
      }
    }
    rows.push_back(std::move(obj));
  }
  return rows.dump(2) + "\n";
}

// Inverse of to_csv for numeric and plain string cells.
inline Table parse_csv(const std::string& text) {
  Table t;
  std::istringstream in(text);
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < l.size(); ++i) {
      const char ch = l[i];
      if (quoted) {
        if (ch == '"' && i + 1 < l.size() && l[i + 1] == '"') {
          cur += '"';
          ++i;
        } else if (ch == '"') {
          quoted = false;
        } else {
          cur += ch;
        }
      } else if (ch == '"') {
        quoted = true;
      } else if (ch == ',') {
        out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    out.push_back(cur);
    return out;
  };
  if (!std::getline(in, line)) return t;
  t.columns = split(line);
  while (std::getline(in, line)) {
    std::vector<Cell> row;
    for (const auto& f : split(line)) {
      if (f.empty()) {
        row.emplace_back(std::monostate{});
        continue;
      }
      if (f == "inf") {
        row.emplace_back(std::numeric_limits<double>::infinity());
      } else if (f == "-inf") {
        row.emplace_back(-std::numeric_limits<double>::infinity());
      } else if (f == "nan") {
        row.emplace_back(std::numeric_limits<double>::quiet_NaN());
      } else {
        std::size_t used = 0;
        try {
          const double v = std::stod(f, &used);
          if (used == f.size()) {
            row.emplace_back(v);
            continue;
          }
        } catch (const std::exception&) {
        }
        row.emplace_back(f);
      }
    }
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Sweep specification

struct Range {
  double min = 0.0;
  double max = 0.0;
  int steps = 1;

  std::vector<double> values() const {
    if (steps == 1) return {min};
    std::vector<double> v(steps);
    for (int i = 0; i < steps; ++i) v[i] = min + (max - min) * i / (steps - 1);
    return v;
  }

  // "v" or "min:max:steps".
  static Range parse(const std::string& text) {
    Range r;
    const auto bad = [&] { return ConfigurationError("expected 'value' or 'min:max:steps', got '" + text + "'"); };
    std::vector<std::string> parts;
    std::string cur;
    for (char ch : text) {
      if (ch == ':') {
        parts.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    parts.push_back(cur);
    try {
      std::size_t used = 0;
      auto num = [&](const std::string& s) {
        const double v = std::stod(s, &used);
        if (used != s.size()) throw bad();
        return v;
      };
      if (parts.size() == 1) {
        r.min = r.max = num(parts[0]);
      } else if (parts.size() == 3) {
        r.min = num(parts[0]);
        r.max = num(parts[1]);
        const double steps = num(parts[2]);
        if (steps != std::floor(steps)) throw bad();
        r.steps = static_cast<int>(steps);
      } else {
        throw bad();
      }
    } catch (const ConfigurationError&) {
      throw;
    } catch (const std::exception&) {
      throw bad();
    }
    if (r.steps < 1) throw ConfigurationError("steps must be >= 1 in '" + text + "'");
    if (r.max < r.min) throw ConfigurationError("range must be ordered (min <= max) in '" + text + "'");
    return r;
  }
};

enum class SimulateMode { forward, gradients, grad_covariance };

struct SweepSpec {
  Range sigma_w_sq{1.0, 1.0, 1};
  Range sigma_b_sq{0.05, 0.05, 1};
  std::vector<double> rho{1.0};
  std::string activation = "tanh";
  int depth = 60;
  std::uint64_t seed = 0;
  const QuadratureRule* rule = nullptr;
  double fit_floor = kDefaultFitFloor;
  double fit_ceiling = kDefaultFitCeiling;
  double q0 = kDefaultInitialVariance;
  double c0 = kDefaultInitialCorrelation;

  // simulator
  int width = 300;
  int networks = 50;
  BackpropWeights backprop = BackpropWeights::tied;
  ForwardSampling sampling = ForwardSampling::materialized;
  std::string input_file;
  int target_class = 0;

  const QuadratureRule& quadrature() const { return rule ? *rule : default_rule(); }

  void validate() const {
    for (double r : rho) {
      if (!(r > 0.0 && r <= 1.0)) throw ConfigurationError("--rho: every value must lie in (0, 1]");
    }
    if (rho.empty()) throw ConfigurationError("--rho: at least one value required");
    if (sigma_w_sq.min < 0.0) throw ConfigurationError("--sigma-w-sq: values must be >= 0");
    if (sigma_b_sq.min < 0.0) throw ConfigurationError("--sigma-b-sq: values must be >= 0");
    try {
      (void)builtin(activation);
    } catch (const ConfigurationError& e) {
      throw ConfigurationError(std::string("--activation: ") + e.what());
    }
    if (depth < 1) throw ConfigurationError("--depth: must be >= 1");
    if (width < 1) throw ConfigurationError("--width: must be >= 1");
    if (networks < 1) throw ConfigurationError("--networks: must be >= 1");
    if (!(fit_floor >= 0.0 && fit_ceiling > fit_floor)) {
      throw ConfigurationError("--fit-floor/--fit-ceiling: need 0 <= floor < ceiling");
    }
  }
};

struct GridPoint {
  double sigma_w_sq, sigma_b_sq, rho;
};

inline std::vector<GridPoint> grid_points(const SweepSpec& spec) {
  std::vector<GridPoint> pts;
  for (double r : spec.rho) {
    for (double sb : spec.sigma_b_sq.values()) {
      for (double sw : spec.sigma_w_sq.values()) pts.push_back({sw, sb, r});
    }
  }
  return pts;
}

namespace detail {

// Evaluates fn for every grid point concurrently; rows land at their grid index.
template <class Fn>
std::vector<std::vector<Cell>> map_grid(const std::vector<GridPoint>& pts, Fn&& fn) {
  std::vector<std::vector<Cell>> rows(pts.size());
  parallel_for(pts.size(), [&](std::size_t i) { rows[i] = fn(pts[i]); });
  return rows;
}

inline bool has_error(const std::vector<Cell>& row) {
  const auto* s = std::get_if<std::string>(&row.back());
  return s && !s->empty();
}

inline Table finish(std::vector<std::string> columns, std::vector<std::vector<Cell>> rows) {
  Table t;
  t.columns = std::move(columns);
  for (auto& r : rows) {
    if (has_error(r)) t.partial_failure = true;
    t.rows.push_back(std::move(r));
  }
  return t;
}

inline std::string phase_name(double chi1_value, double rho) {
  if (rho == 1.0 && std::abs(chi1_value - 1.0) <= kCriticalTolerance) return "critical";
  return chi1_value < 1.0 ? "ordered" : "chaotic";
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands

inline Table cmd_phase_diagram(const SweepSpec& spec) {
  spec.validate();
  const Activation act = builtin(spec.activation);
  const QuadratureRule& rule = spec.quadrature();
  auto rows = detail::map_grid(grid_points(spec), [&](const GridPoint& p) -> std::vector<Cell> {
    try {
      const HyperParams hp{p.sigma_w_sq, p.sigma_b_sq, p.rho};
      const double q = solve_q_star(hp, act, spec.q0, rule).value;
      const double c = solve_c_star(hp, act, q, rule).value;
      const double x = chi1(hp, act, q, rule);
      return {p.sigma_w_sq, p.sigma_b_sq, p.rho, q, c, x, detail::phase_name(x, p.rho), std::string()};
    } catch (const Error& e) {
      return {p.sigma_w_sq, p.sigma_b_sq, p.rho, {}, {}, {}, {}, std::string(e.what())};
    }
  });
  // The critical line exists only without dropout.
  bool has_rho_one = false;
  for (double r : spec.rho) has_rho_one = has_rho_one || r == 1.0;
  if (has_rho_one) {
    const std::vector<double> biases = spec.sigma_b_sq.values();
    std::vector<GridPoint> pts;
    for (double sb : biases) pts.push_back({0.0, sb, 1.0});
    auto crit = detail::map_grid(pts, [&](const GridPoint& p) -> std::vector<Cell> {
      try {
        const double sw = critical_sigma_w(p.sigma_b_sq, act, rule);
        const HyperParams hp{sw, p.sigma_b_sq, 1.0};
        const double q = solve_q_star(hp, act, spec.q0, rule).value;
        return {sw, p.sigma_b_sq, 1.0, q, 1.0, chi1(hp, act, q, rule), std::string("critical"), std::string()};
      } catch (const Error& e) {
        return {{}, p.sigma_b_sq, 1.0, {}, {}, {}, std::string("critical"), std::string(e.what())};
      }
    });
    for (auto& r : crit) rows.push_back(std::move(r));
  }
  return detail::finish({"sigma_w_sq", "sigma_b_sq", "rho", "q_star", "c_star", "chi1", "phase", "error"},
                        std::move(rows));
}

inline Table cmd_depth_scales(const SweepSpec& spec) {
  spec.validate();
  const Activation act = builtin(spec.activation);
  const QuadratureRule& rule = spec.quadrature();
  auto rows = detail::map_grid(grid_points(spec), [&](const GridPoint& p) -> std::vector<Cell> {
    const HyperParams hp{p.sigma_w_sq, p.sigma_b_sq, p.rho};
    DepthScales d;
    try {
      d = depth_scales(hp, act, rule, spec.q0);
    } catch (const Error& e) {
      return {p.sigma_w_sq, p.sigma_b_sq, p.rho, {}, {}, {}, {}, {}, std::string(e.what())};
    }
    std::string error;
    Cell xq_meas, xc_meas;
    auto layers = [](double xi) { return trajectory_length_for(std::isnan(xi) ? 1e300 : xi); };
    try {
      xq_meas = measure_xi_q(hp, act, layers(d.xi_q.xi), spec.fit_floor, spec.fit_ceiling, spec.q0, rule).xi;
    } catch (const Error& e) {
      error += std::string("xi_q fit: ") + e.what();
    }
    try {
      xc_meas = measure_xi_c(hp, act, layers(d.xi_c.xi), spec.fit_floor, spec.fit_ceiling, spec.c0, rule).xi;
    } catch (const Error& e) {
      error += std::string(error.empty() ? "" : "; ") + "xi_c fit: " + e.what();
    }
    return {p.sigma_w_sq, p.sigma_b_sq, p.rho, d.xi_q.xi, xq_meas, d.xi_c.xi, xc_meas, d.xi_grad, error};
  });
  return detail::finish({"sigma_w_sq", "sigma_b_sq", "rho", "xi_q_theory", "xi_q_measured", "xi_c_theory",
                         "xi_c_measured", "xi_grad", "error"},
                        std::move(rows));
}

inline Table cmd_critical_line(const SweepSpec& spec) {
  spec.validate();
  const Activation act = builtin(spec.activation);
  const QuadratureRule& rule = spec.quadrature();
  std::vector<GridPoint> pts;
  for (double sb : spec.sigma_b_sq.values()) pts.push_back({0.0, sb, 1.0});
  auto rows = detail::map_grid(pts, [&](const GridPoint& p) -> std::vector<Cell> {
    try {
      return {p.sigma_b_sq, critical_sigma_w(p.sigma_b_sq, act, rule), std::string()};
    } catch (const Error& e) {
      return {p.sigma_b_sq, {}, std::string(e.what())};
    }
  });
  return detail::finish({"sigma_b_sq", "sigma_w_sq_crit", "error"}, std::move(rows));
}

inline constexpr double kTrainableDepthMultiple = 6.0;

inline Table cmd_trainable_depth(const SweepSpec& spec) {
  spec.validate();
  const Activation act = builtin(spec.activation);
  const QuadratureRule& rule = spec.quadrature();
  auto rows = detail::map_grid(grid_points(spec), [&](const GridPoint& p) -> std::vector<Cell> {
    try {
      const HyperParams hp{p.sigma_w_sq, p.sigma_b_sq, p.rho};
      const double q = solve_q_star(hp, act, spec.q0, rule).value;
      const double c = solve_c_star(hp, act, q, rule).value;
      const double xi = xi_c(hp, act, q, c, rule).xi;
      return {p.sigma_w_sq, p.sigma_b_sq, p.rho, xi, kTrainableDepthMultiple * xi, std::string()};
    } catch (const Error& e) {
      return {p.sigma_w_sq, p.sigma_b_sq, p.rho, {}, {}, std::string(e.what())};
    }
  });
  return detail::finish({"sigma_w_sq", "sigma_b_sq", "rho", "xi_c", "trainable_depth", "error"}, std::move(rows));
}

inline Table cmd_simulate(const SweepSpec& spec, SimulateMode mode) {
  spec.validate();
  if (spec.sigma_w_sq.steps != 1 || spec.sigma_b_sq.steps != 1 || spec.rho.size() != 1) {
    throw ConfigurationError("simulate: --sigma-w-sq, --sigma-b-sq and --rho take a single value");
  }
  NetworkConfig cfg;
  cfg.depth = spec.depth;
  cfg.width = spec.width;
  cfg.hp = {spec.sigma_w_sq.min, spec.sigma_b_sq.min, spec.rho.front()};
  cfg.activation = spec.activation;
  cfg.seed = spec.seed;
  cfg.backprop_weights = spec.backprop;
  cfg.sampling = spec.sampling;
  cfg.target_class = spec.target_class;
  cfg.validate();
  const Activation act = builtin(spec.activation);
  const QuadratureRule& rule = spec.quadrature();

  InputPair inputs;
  if (!spec.input_file.empty()) {
    const auto rows = read_input_file(spec.input_file, cfg.width);
    inputs.a = rows[0];
    inputs.b = rows.size() > 1 ? rows[1] : rows[0];
  } else {
    inputs = make_input_pair(cfg, spec.q0, spec.c0);
  }

  Table t;
  if (mode == SimulateMode::forward) {
    const EmpiricalTrajectory e = forward_pair(cfg, inputs.a, inputs.b, spec.networks);
    const double q0a = inputs.a.squaredNorm() / cfg.width * cfg.hp.sigma_w_sq + cfg.hp.sigma_b_sq;
    const double q0b = inputs.b.squaredNorm() / cfg.width * cfg.hp.sigma_w_sq + cfg.hp.sigma_b_sq;
    const double c0 = (inputs.a.dot(inputs.b) / cfg.width * cfg.hp.sigma_w_sq + cfg.hp.sigma_b_sq) /
                      std::sqrt(q0a * q0b);
    const Trajectory th = iterate_trajectory(cfg.hp, act, q0a, q0b, std::clamp(c0, -1.0, 1.0),
                                             std::max(1, cfg.depth - 1), rule);
    t.columns = {"layer", "q_aa_hat", "q_aa_stderr", "c_ab_hat", "c_ab_stderr", "q_aa_theory", "c_ab_theory"};
    for (int l = 0; l < e.layers(); ++l) {
      t.add({static_cast<double>(l), e.q_aa_hat[l], e.q_aa_stderr[l], e.c_ab_hat[l], e.c_ab_stderr[l],
             th.q_aa[l], th.c_ab[l]});
    }
    t.partial_failure = e.truncated;
    return t;
  }

  const HyperParams& hp = cfg.hp;
  const double q = solve_q_star(hp, act, spec.q0, rule).value;
  if (mode == SimulateMode::gradients) {
    const GradientSeries g = backward_gradients(cfg, inputs.a, spec.networks);
    const double theory = std::log(chi1(hp, act, q, rule));
    t.columns = {"layer", "mean_log_grad_sq", "mean_log_grad_sq_stderr", "log_mean_grad_sq", "theory_slope",
                 "measured_slope", "measured_slope_stderr"};
    for (std::size_t i = 0; i < g.mean_log_grad_sq.size(); ++i) {
      t.add({static_cast<double>(g.first_layer + static_cast<int>(i)), g.mean_log_grad_sq[i],
             g.log_grad_sq_stderr[i], g.log_mean_grad_sq[i], theory, g.slope, g.slope_stderr});
    }
    t.partial_failure = g.truncated;
    return t;
  }
  const double c = solve_c_star(hp, act, q, rule).value;
  const GradientCovarianceSeries g = backward_covariance(cfg, inputs.a, inputs.b, spec.networks);
  const double theory = std::log(grad_covariance_factor(hp, act, q, c, rule));
  t.columns = {"layer", "mean_dot", "dot_stderr", "theory_slope", "measured_slope", "measured_slope_stderr"};
  for (std::size_t i = 0; i < g.mean_dot.size(); ++i) {
    t.add({static_cast<double>(g.first_layer + static_cast<int>(i)), g.mean_dot[i], g.dot_stderr[i], theory,
           g.slope, g.slope_stderr});
  }
  t.partial_failure = g.truncated;
  return t;
}

}  // namespace mfdepth
