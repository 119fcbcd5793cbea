#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mfdepth/commands.hpp"

namespace {

int env_quad_order() {
  if (const char* env = std::getenv("MFDEPTH_QUAD_ORDER")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return mfdepth::kDefaultQuadratureOrder;
}

std::vector<double> parse_rho_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw mfdepth::ConfigurationError("--rho: expected a comma-separated list of numbers, got '" + text + "'");
    }
  }
  return out;
}

struct Options {
  std::string sigma_w_sq = "1.0";
  std::string sigma_b_sq = "0.05";
  std::string rho = "1";
  std::string activation = "tanh";
  int depth = 60;
  int width = 300;
  int networks = 50;
  std::uint64_t seed = 0;
  std::string format = "csv";
  std::string out;
  int quad_order = env_quad_order();
  std::string quad_rule = "trapezoid";
  double fit_floor = mfdepth::kDefaultFitFloor;
  double fit_ceiling = mfdepth::kDefaultFitCeiling;
  double q0 = mfdepth::kDefaultInitialVariance;
  double c0 = mfdepth::kDefaultInitialCorrelation;
  std::string backprop = "tied";
  std::string sampling = "materialized";
  std::string input_file;
  int target = 0;
};

mfdepth::SweepSpec to_spec(const Options& o) {
  mfdepth::SweepSpec s;
  try {
    s.sigma_w_sq = mfdepth::Range::parse(o.sigma_w_sq);
  } catch (const mfdepth::ConfigurationError& e) {
    throw mfdepth::ConfigurationError(std::string("--sigma-w-sq: ") + e.what());
  }
  try {
    s.sigma_b_sq = mfdepth::Range::parse(o.sigma_b_sq);
  } catch (const mfdepth::ConfigurationError& e) {
    throw mfdepth::ConfigurationError(std::string("--sigma-b-sq: ") + e.what());
  }
  s.rho = parse_rho_list(o.rho);
  s.activation = o.activation;
  s.depth = o.depth;
  s.width = o.width;
  s.networks = o.networks;
  s.seed = o.seed;
  s.fit_floor = o.fit_floor;
  s.fit_ceiling = o.fit_ceiling;
  s.q0 = o.q0;
  s.c0 = o.c0;
  s.backprop = o.backprop == "independent" ? mfdepth::BackpropWeights::independent : mfdepth::BackpropWeights::tied;
  s.sampling = o.sampling == "marginal" ? mfdepth::ForwardSampling::marginal : mfdepth::ForwardSampling::materialized;
  s.input_file = o.input_file;
  s.target_class = o.target;
  if (o.quad_order < 1) throw mfdepth::ConfigurationError("--quad-order: must be positive");
  s.rule = &mfdepth::quadrature_rule(
      o.quad_rule == "gauss-hermite" ? mfdepth::RuleKind::gauss_hermite : mfdepth::RuleKind::trapezoid,
      o.quad_order);
  s.validate();
  return s;
}

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--sigma-w-sq", o.sigma_w_sq, "Weight variance: value or min:max:steps")->capture_default_str();
  cmd->add_option("--sigma-b-sq", o.sigma_b_sq, "Bias variance: value or min:max:steps")->capture_default_str();
  cmd->add_option("--rho", o.rho, "Dropout keep-probabilities, comma separated")->capture_default_str();
  cmd->add_option("--activation", o.activation, "tanh, linear or hard_tanh")->capture_default_str();
  cmd->add_option("--depth", o.depth, "Network depth L (simulate)")->capture_default_str();
  cmd->add_option("--width", o.width, "Layer width N (simulate)")->capture_default_str();
  cmd->add_option("--networks", o.networks, "Ensemble size (simulate)")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Random seed")->capture_default_str();
  cmd->add_option("--format", o.format, "Output format")->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  cmd->add_option("--out", o.out, "Output path (default stdout)");
  cmd->add_option("--quad-order", o.quad_order, "Quadrature nodes per dimension (env MFDEPTH_QUAD_ORDER)")
      ->capture_default_str();
  cmd->add_option("--quad-rule", o.quad_rule, "Quadrature rule")
      ->check(CLI::IsMember({"trapezoid", "gauss-hermite"}))
      ->capture_default_str();
  cmd->add_option("--fit-floor", o.fit_floor, "Lower bound of the residual fit window")->capture_default_str();
  cmd->add_option("--fit-ceiling", o.fit_ceiling, "Upper bound of the residual fit window")->capture_default_str();
  cmd->add_option("--q0", o.q0, "Initial variance")->capture_default_str();
  cmd->add_option("--c0", o.c0, "Initial correlation")->capture_default_str();
}

void add_simulation(CLI::App* cmd, Options& o) {
  cmd->add_option("--backprop", o.backprop, "Backward weights")
      ->check(CLI::IsMember({"tied", "independent"}))
      ->capture_default_str();
  cmd->add_option("--sampling", o.sampling, "Weight sampling; marginal needs --backprop independent")
      ->check(CLI::IsMember({"materialized", "marginal"}))
      ->capture_default_str();
  cmd->add_option("--input-file", o.input_file, "Little-endian float32 rows of length --width");
  cmd->add_option("--target", o.target, "Readout target class")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field signal and gradient propagation in wide random networks"};
  app.require_subcommand(1);
  Options o;

  auto* phase = app.add_subcommand("phase-diagram", "Fixed points, chi1 and phase over a grid, plus the critical line");
  auto* depth = app.add_subcommand("depth-scales", "Theoretical and fitted depth scales over a grid");
  auto* critical = app.add_subcommand("critical-line", "Critical sigma_w^2 for each sigma_b^2");
  auto* trainable = app.add_subcommand("trainable-depth", "6 xi_c over a grid");
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo ensembles of random networks");
  simulate->require_subcommand(1);
  auto* forward = simulate->add_subcommand("forward", "Layer-wise variance and correlation of an input pair");
  auto* gradients = simulate->add_subcommand("gradients", "Layer-wise squared gradient norms");
  auto* covariance = simulate->add_subcommand("grad-covariance", "Layer-wise gradient dot products of an input pair");
  for (auto* cmd : {phase, depth, critical, trainable, forward, gradients, covariance}) add_common(cmd, o);
  for (auto* cmd : {forward, gradients, covariance}) add_simulation(cmd, o);

  CLI11_PARSE(app, argc, argv);

  try {
    const mfdepth::SweepSpec spec = to_spec(o);
    mfdepth::Table table;
    if (phase->parsed()) table = mfdepth::cmd_phase_diagram(spec);
    else if (depth->parsed()) table = mfdepth::cmd_depth_scales(spec);
    else if (critical->parsed()) table = mfdepth::cmd_critical_line(spec);
    else if (trainable->parsed()) table = mfdepth::cmd_trainable_depth(spec);
    else if (forward->parsed()) table = mfdepth::cmd_simulate(spec, mfdepth::SimulateMode::forward);
    else if (gradients->parsed()) table = mfdepth::cmd_simulate(spec, mfdepth::SimulateMode::gradients);
    else table = mfdepth::cmd_simulate(spec, mfdepth::SimulateMode::grad_covariance);

    const std::string text = o.format == "json" ? mfdepth::to_json(table) : mfdepth::to_csv(table);
    if (o.out.empty()) {
      std::cout << text;
    } else {
      std::ofstream file(o.out);
      if (!file) throw mfdepth::ConfigurationError("--out: cannot write '" + o.out + "'");
      file << text;
    }
    if (table.partial_failure) std::cerr << "warning: partial result (failed rows or truncated trajectory)\n";
    return table.exit_status();
  } catch (const mfdepth::ConfigurationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const mfdepth::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
