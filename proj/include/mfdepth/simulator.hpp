#pragma once

// Monte Carlo ensembles of finite-width random networks.
//
// Hidden layers l = 0..L-1 have pre-activations
//   z^0 = W^0 x + b^0,
//   z^l = (1/rho) W^l (p^l . phi(z^{l-1})) + b^l   (l >= 1),
// with W_ij ~ N(0, sigma_w^2 / N), b_i ~ N(0, sigma_b^2) and dropout masks
// p^l ~ Bernoulli(rho), drawn independently per input. A 10-way softmax
// readout with the same weight statistics closes the network for backprop.
// Every random quantity comes from its own (seed, network, layer, role) stream.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/random/bernoulli_distribution.hpp>
#include <boost/random/normal_distribution.hpp>

#include "mfdepth/activations.hpp"
#include "mfdepth/analysis.hpp"
#include "mfdepth/errors.hpp"
#include "mfdepth/meanfield.hpp"
#include "mfdepth/parallel.hpp"
#include "mfdepth/rng.hpp"

namespace mfdepth {

inline constexpr int kReadoutClasses = 10;

enum class BackpropWeights {
  tied,         // backward pass reuses the forward weights
  independent,  // backward pass draws fresh i.i.d. weights
};

enum class ForwardSampling {
  materialized,  // draw every W^l explicitly
  marginal,      // draw W^l Y directly: rows are i.i.d. N(0, sigma_w^2/N Y^T Y)
};

struct NetworkConfig {
  int depth = 10;
  int width = 100;
  HyperParams hp;
  std::string activation = "tanh";
  std::uint64_t seed = 0;
  BackpropWeights backprop_weights = BackpropWeights::tied;
  ForwardSampling sampling = ForwardSampling::materialized;
  int target_class = 0;

  void validate() const {
    if (depth < 1) throw ConfigurationError("depth must be >= 1, got " + std::to_string(depth));
    if (width < 1) throw ConfigurationError("width must be >= 1, got " + std::to_string(width));
    if (target_class < 0 || target_class >= kReadoutClasses) {
      throw ConfigurationError("target class must lie in [0, " + std::to_string(kReadoutClasses) + ")");
    }
    hp.validate();
    (void)builtin(activation);
  }
};

// ---------------------------------------------------------------------------
// Sampling

inline Eigen::MatrixXd sample_gaussian(PhiloxStream stream, Eigen::Index rows, Eigen::Index cols,
                                       double stddev) {
  boost::random::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) p[i] = stddev * normal(stream);
  return m;
}

inline Eigen::MatrixXd sample_weights(const NetworkConfig& cfg, std::uint32_t network, std::uint32_t layer,
                                      StreamRole role = StreamRole::weights) {
  return sample_gaussian(PhiloxStream(cfg.seed, network, layer, role), cfg.width, cfg.width,
                         std::sqrt(cfg.hp.sigma_w_sq / cfg.width));
}

inline Eigen::VectorXd sample_biases(const NetworkConfig& cfg, std::uint32_t network, std::uint32_t layer,
                                     StreamRole role = StreamRole::biases) {
  return sample_gaussian(PhiloxStream(cfg.seed, network, layer, role), cfg.width, 1,
                         std::sqrt(cfg.hp.sigma_b_sq));
}

// Keep-mask in {0, 1}^N; all ones when rho == 1.
inline Eigen::VectorXd sample_mask(const NetworkConfig& cfg, std::uint32_t network, std::uint32_t layer,
                                   StreamRole role) {
  Eigen::VectorXd m = Eigen::VectorXd::Ones(cfg.width);
  if (cfg.hp.rho == 1.0) return m;
  PhiloxStream stream(cfg.seed, network, layer, role);
  boost::random::bernoulli_distribution<double> keep(cfg.hp.rho);
  for (Eigen::Index i = 0; i < m.size(); ++i) m[i] = keep(stream) ? 1.0 : 0.0;
  return m;
}

inline Eigen::MatrixXd sample_readout_weights(const NetworkConfig& cfg, std::uint32_t network,
                                              StreamRole role = StreamRole::readout_weights) {
  return sample_gaussian(PhiloxStream(cfg.seed, network, 0, role), kReadoutClasses, cfg.width,
                         std::sqrt(cfg.hp.sigma_w_sq / cfg.width));
}

inline Eigen::VectorXd sample_readout_biases(const NetworkConfig& cfg, std::uint32_t network) {
  return sample_gaussian(PhiloxStream(cfg.seed, network, 0, StreamRole::readout_biases), kReadoutClasses, 1,
                         std::sqrt(cfg.hp.sigma_b_sq));
}

// One sampled network. masks_a[0] and masks_b[0] are all ones (no input dropout).
struct NetworkRealization {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  std::vector<Eigen::VectorXd> masks_a;
  std::vector<Eigen::VectorXd> masks_b;
  Eigen::MatrixXd readout_weights;
  Eigen::VectorXd readout_biases;
};

inline NetworkRealization sample_realization(const NetworkConfig& cfg, std::uint32_t network) {
  cfg.validate();
  NetworkRealization r;
  for (int l = 0; l < cfg.depth; ++l) {
    r.weights.push_back(sample_weights(cfg, network, l));
    r.biases.push_back(sample_biases(cfg, network, l));
    r.masks_a.push_back(l == 0 ? Eigen::VectorXd::Ones(cfg.width)
                               : sample_mask(cfg, network, l, StreamRole::mask_a));
    r.masks_b.push_back(l == 0 ? Eigen::VectorXd::Ones(cfg.width)
                               : sample_mask(cfg, network, l, StreamRole::mask_b));
  }
  r.readout_weights = sample_readout_weights(cfg, network);
  r.readout_biases = sample_readout_biases(cfg, network);
  return r;
}

// ---------------------------------------------------------------------------
// Inputs

struct InputPair {
  Eigen::VectorXd a;
  Eigen::VectorXd b;
};

// Deterministic inputs whose first-layer pre-activations have variance q0 and
// correlation c0 in expectation over W^0 and b^0:
//   sigma_w^2 |x|^2 / N + sigma_b^2 = q0,  sigma_w^2 x_a.x_b / N + sigma_b^2 = c0 q0.
inline InputPair make_input_pair(const NetworkConfig& cfg, double q0, double c0) {
  cfg.validate();
  const double sw = cfg.hp.sigma_w_sq;
  const double sb = cfg.hp.sigma_b_sq;
  if (!(sw > 0.0)) throw DomainError("input scaling needs sigma_w^2 > 0");
  if (!(q0 >= sb)) throw DomainError("q0 must be >= sigma_b^2 to be reachable at the first layer");
  if (!(std::abs(c0) <= 1.0)) throw DomainError("|c0| must be <= 1");
  const double s_sq = (q0 - sb) / sw;
  const double cov = (c0 * q0 - sb) / sw;
  const double c_in = s_sq > 0.0 ? std::clamp(cov / s_sq, -1.0, 1.0) : 1.0;

  const Eigen::Index n = cfg.width;
  const double root_n = std::sqrt(static_cast<double>(n));
  Eigen::MatrixXd g = sample_gaussian(PhiloxStream(cfg.seed, 0, 0, StreamRole::inputs), n, 2, 1.0);
  Eigen::VectorXd u = g.col(0).normalized();
  Eigen::VectorXd v = g.col(1) - u.dot(g.col(1)) * u;
  if (v.norm() == 0.0 || n < 2) {
    if (std::abs(c_in) < 1.0) throw DomainError("width 1 cannot carry a partially correlated input pair");
    v.setZero();
  } else {
    v.normalize();
  }
  const double s = std::sqrt(s_sq);
  const double orth = std::sqrt(std::max(0.0, (1.0 - c_in) * (1.0 + c_in)));
  InputPair p;
  p.a = s * root_n * u;
  p.b = s * root_n * (c_in * u + orth * v);
  return p;
}

// Little-endian float32 rows of length `width`, no header.
inline std::vector<Eigen::VectorXd> read_input_file(const std::string& path, int width) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigurationError("cannot open input file '" + path + "'");
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t row_bytes = 4 * static_cast<std::size_t>(width);
  if (bytes.empty() || bytes.size() % row_bytes != 0) {
    throw ConfigurationError("input file '" + path + "' is not a whole number of float32 rows of length " +
                             std::to_string(width));
  }
  std::vector<Eigen::VectorXd> rows(bytes.size() / row_bytes, Eigen::VectorXd(width));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int i = 0; i < width; ++i) {
      const unsigned char* b = bytes.data() + r * row_bytes + 4 * static_cast<std::size_t>(i);
      const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                                 (static_cast<std::uint32_t>(b[2]) << 16) |
                                 (static_cast<std::uint32_t>(b[3]) << 24);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      rows[r][i] = f;
    }
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Ensemble statistics

struct MeanStderr {
  double mean = 0.0;
  double standard_error = std::numeric_limits<double>::infinity();
};

inline MeanStderr mean_stderr(const std::vector<double>& v) {
  MeanStderr m;
  if (v.empty()) return {std::numeric_limits<double>::quiet_NaN(), m.standard_error};
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0.0;
    for (double x : v) ss += (x - m.mean) * (x - m.mean);
    m.standard_error = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
  }
  return m;
}

struct EmpiricalTrajectory {
  std::vector<double> q_aa_hat;
  std::vector<double> q_aa_stderr;
  std::vector<double> q_bb_hat;
  std::vector<double> c_ab_hat;
  std::vector<double> c_ab_stderr;
  int n_networks = 0;
  bool truncated = false;  // overflow cut the trajectory short

  int layers() const noexcept { return static_cast<int>(q_aa_hat.size()); }
};

namespace detail {

struct PairRecord {
  std::vector<double> q_a, q_b, c;
};

inline double correlation_of(double dot, double na, double nb) {
  const double denom = std::sqrt(na * nb);
  return denom > 0.0 ? std::clamp(dot / denom, -1.0, 1.0) : 1.0;
}

// W y for a `rows` x N matrix W with i.i.d. N(0, sigma_w^2 / N) entries, drawn
// without forming W: the rows of W y are i.i.d. N(0, sigma_w^2 / N y^T y).
// y has one or two columns.
inline Eigen::MatrixXd marginal_product(const NetworkConfig& cfg, std::uint32_t network, std::uint32_t layer,
                                        const Eigen::MatrixXd& y, StreamRole role = StreamRole::weights,
                                        Eigen::Index rows = -1) {
  if (rows < 0) rows = cfg.width;
  const double n = static_cast<double>(cfg.width);
  const Eigen::MatrixXd gram = cfg.hp.sigma_w_sq / n * (y.transpose() * y);
  const double l11 = std::sqrt(gram(0, 0));
  const Eigen::MatrixXd g = sample_gaussian(PhiloxStream(cfg.seed, network, layer, role), rows, y.cols(), 1.0);
  Eigen::MatrixXd z(rows, y.cols());
  z.col(0) = l11 * g.col(0);
  if (y.cols() > 1) {
    const double l21 = l11 > 0.0 ? gram(0, 1) / l11 : 0.0;
    const double l22 = std::sqrt(std::max(0.0, gram(1, 1) - l21 * l21));
    z.col(1) = l21 * g.col(0) + l22 * g.col(1);
  }
  return z;
}

inline PairRecord forward_pair_one(const NetworkConfig& cfg, const Activation& act, const Eigen::VectorXd& x_a,
                                   const Eigen::VectorXd& x_b, std::uint32_t network, bool shared_masks) {
  const double n = static_cast<double>(cfg.width);
  const double inv_rho = 1.0 / cfg.hp.rho;
  PairRecord rec;
  Eigen::MatrixXd y(cfg.width, 2);
  y.col(0) = x_a;
  y.col(1) = x_b;
  for (int l = 0; l < cfg.depth; ++l) {
    if (l > 0 && cfg.hp.rho < 1.0) {
      const Eigen::VectorXd pa = sample_mask(cfg, network, l, StreamRole::mask_a);
      const Eigen::VectorXd pb =
          shared_masks ? pa : sample_mask(cfg, network, l, StreamRole::mask_b);
      y.col(0) = inv_rho * y.col(0).cwiseProduct(pa);
      y.col(1) = inv_rho * y.col(1).cwiseProduct(pb);
    }
    Eigen::MatrixXd z = cfg.sampling == ForwardSampling::materialized
                            ? Eigen::MatrixXd(sample_weights(cfg, network, l) * y)
                            : marginal_product(cfg, network, l, y);
    z.colwise() += sample_biases(cfg, network, l);
    if (!z.allFinite()) break;
    const double na = z.col(0).squaredNorm();
    const double nb = z.col(1).squaredNorm();
    const double dot = z.col(0).dot(z.col(1));
    if (!std::isfinite(na) || !std::isfinite(nb) || !std::isfinite(dot)) break;
    rec.q_a.push_back(na / n);
    rec.q_b.push_back(nb / n);
    rec.c.push_back(correlation_of(dot, na, nb));
    y = z.unaryExpr([&](double u) { return act.phi(u); });
  }
  return rec;
}

}  // namespace detail

// Propagate a fixed input pair through n_networks independent realizations.
inline EmpiricalTrajectory forward_pair(const NetworkConfig& cfg, const Eigen::VectorXd& x_a,
                                        const Eigen::VectorXd& x_b, int n_networks,
                                        bool shared_masks = false) {
  cfg.validate();
  if (n_networks < 1) throw ConfigurationError("need at least one network");
  if (x_a.size() != cfg.width || x_b.size() != cfg.width) {
    throw DomainError("inputs must have length equal to the width");
  }
  const Activation act = builtin(cfg.activation);
  std::vector<detail::PairRecord> records(n_networks);
  parallel_for(records.size(), [&](std::size_t k) {
    records[k] = detail::forward_pair_one(cfg, act, x_a, x_b, static_cast<std::uint32_t>(k), shared_masks);
  });

  std::size_t layers = cfg.depth;
  for (const auto& r : records) layers = std::min(layers, r.q_a.size());
  EmpiricalTrajectory t;
  t.n_networks = n_networks;
  t.truncated = layers < static_cast<std::size_t>(cfg.depth);
  std::vector<double> qa(n_networks), qb(n_networks), c(n_networks);
  for (std::size_t l = 0; l < layers; ++l) {
    for (int k = 0; k < n_networks; ++k) {
      qa[k] = records[k].q_a[l];
      qb[k] = records[k].q_b[l];
      c[k] = records[k].c[l];
    }
    const MeanStderr mqa = mean_stderr(qa);
    const MeanStderr mc = mean_stderr(c);
    t.q_aa_hat.push_back(mqa.mean);
    t.q_aa_stderr.push_back(mqa.standard_error);
    t.q_bb_hat.push_back(mean_stderr(qb).mean);
    t.c_ab_hat.push_back(mc.mean);
    t.c_ab_stderr.push_back(mc.standard_error);
  }
  return t;
}

// ---------------------------------------------------------------------------
// Backpropagation

namespace detail {

// Per-layer products needed for gradient norms and dot products, for up to two
// inputs sharing one realization. Index l = 0..L-1; entries below `first_valid`
// were lost to overflow.
struct BackwardRecord {
  std::vector<Eigen::Matrix2d> delta_gram;
  std::vector<Eigen::Matrix2d> input_gram;
  int first_valid = 0;
};

inline Eigen::VectorXd softmax_minus_target(const Eigen::VectorXd& logits, int target) {
  const double m = logits.maxCoeff();
  Eigen::VectorXd p = (logits.array() - m).exp().matrix();
  p /= p.sum();
  p[target] -= 1.0;
  return p;
}

inline BackwardRecord backward_one(const NetworkConfig& cfg, const Activation& act, const Eigen::MatrixXd& x,
                                   std::uint32_t network, bool shared_masks) {
  const int depth = cfg.depth;
  const Eigen::Index k = x.cols();
  const double inv_rho = 1.0 / cfg.hp.rho;
  const bool tied = cfg.backprop_weights == BackpropWeights::tied;
  const bool marginal = cfg.sampling == ForwardSampling::marginal;

  BackwardRecord rec;
  rec.delta_gram.assign(depth, Eigen::Matrix2d::Zero());
  rec.input_gram.assign(depth, Eigen::Matrix2d::Zero());
  rec.first_valid = depth;

  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::MatrixXd> masks(depth);  // scaled by 1/rho
  std::vector<Eigen::MatrixXd> z(depth);
  std::vector<Eigen::MatrixXd> inputs(depth);
  if (tied) weights.reserve(depth);

  Eigen::MatrixXd y = x;
  for (int l = 0; l < depth; ++l) {
    if (l > 0) {
      masks[l] = Eigen::MatrixXd::Constant(cfg.width, k, 1.0);
      if (cfg.hp.rho < 1.0) {
        masks[l].col(0) = inv_rho * sample_mask(cfg, network, l, StreamRole::mask_a);
        if (k > 1) {
          masks[l].col(1) = shared_masks ? Eigen::VectorXd(masks[l].col(0))
                                         : Eigen::VectorXd(inv_rho * sample_mask(cfg, network, l, StreamRole::mask_b));
        }
      }
      y = y.cwiseProduct(masks[l]);
    }
    inputs[l] = y;
    if (marginal) {
      z[l] = marginal_product(cfg, network, l, y);
    } else {
      Eigen::MatrixXd w = sample_weights(cfg, network, l);
      z[l] = w * y;
      if (tied) weights.push_back(std::move(w));
    }
    z[l].colwise() += sample_biases(cfg, network, l);
    if (!z[l].allFinite()) return rec;
    y = z[l].unaryExpr([&](double u) { return act.phi(u); });
  }

  const Eigen::MatrixXd readout = marginal ? Eigen::MatrixXd() : sample_readout_weights(cfg, network);
  Eigen::MatrixXd logits =
      marginal ? marginal_product(cfg, network, 0, y, StreamRole::readout_weights, kReadoutClasses) : readout * y;
  logits.colwise() += sample_readout_biases(cfg, network);
  if (!logits.allFinite()) return rec;
  Eigen::MatrixXd g(kReadoutClasses, k);
  for (Eigen::Index j = 0; j < k; ++j) g.col(j) = softmax_minus_target(logits.col(j), cfg.target_class);

  Eigen::MatrixXd upstream;
  if (marginal) {
    upstream = marginal_product(cfg, network, 0, g, StreamRole::backward_readout);
  } else {
    const Eigen::MatrixXd back_readout =
        tied ? readout : sample_readout_weights(cfg, network, StreamRole::backward_readout);
    upstream = back_readout.transpose() * g;
  }
  for (int l = depth - 1; l >= 0; --l) {
    const Eigen::MatrixXd delta =
        upstream.cwiseProduct(z[l].unaryExpr([&](double u) { return act.d_phi(u); }));
    if (!delta.allFinite()) return rec;
    Eigen::Matrix2d dg = Eigen::Matrix2d::Zero();
    Eigen::Matrix2d ig = Eigen::Matrix2d::Zero();
    dg.topLeftCorner(k, k) = delta.transpose() * delta;
    ig.topLeftCorner(k, k) = inputs[l].transpose() * inputs[l];
    if (!dg.allFinite() || !ig.allFinite()) return rec;
    rec.delta_gram[l] = dg;
    rec.input_gram[l] = ig;
    rec.first_valid = l;
    if (l == 0) break;
    if (marginal) {
      upstream = marginal_product(cfg, network, l, delta, StreamRole::backward_weights).cwiseProduct(masks[l]);
    } else {
      const Eigen::MatrixXd w_back =
          tied ? weights[l] : sample_weights(cfg, network, l, StreamRole::backward_weights);
      upstream = (w_back.transpose() * delta).cwiseProduct(masks[l]);
      if (tied) weights[l].resize(0, 0);
    }
  }
  return rec;
}

inline int edge_skip(int depth) { return std::max(2, depth / 20); }

// Tied backward weights must be the forward matrices, which marginal sampling never forms.
inline void check_backward_sampling(const NetworkConfig& cfg) {
  if (cfg.sampling == ForwardSampling::marginal && cfg.backprop_weights == BackpropWeights::tied) {
    throw ConfigurationError("marginal sampling requires independent backward weights");
  }
}

}  // namespace detail

namespace detail {

struct SlopeEstimate {
  double slope = 0.0;
  double stderr_jackknife = std::numeric_limits<double>::infinity();
  std::pair<int, int> window{0, 0};
};

// values[k][d]: network k at distance d from the output. Fits log of the
// ensemble mean against d over the longest positive run inside [lo, hi];
// the standard error is the delete-one jackknife over networks.
inline SlopeEstimate log_mean_slope(const std::vector<std::vector<double>>& values, int lo, int hi) {
  const std::size_t n = values.size();
  const int count = hi - lo + 1;
  auto fit = [&](std::size_t skip, std::pair<int, int>* window) {
    std::vector<double> mean(count, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      if (k == skip) continue;
      for (int i = 0; i < count; ++i) mean[i] += values[k][lo + i];
    }
    const auto [first, last] = fit_window(mean, 0.0, std::numeric_limits<double>::infinity());
    if (last - first + 1 < 3) throw InsufficientDataError("too few positive ensemble means for a slope fit");
    std::vector<double> xs, ys;
    for (int i = first; i <= last; ++i) {
      xs.push_back(lo + i);
      ys.push_back(std::log(mean[i]));
    }
    if (window) *window = {lo + first, lo + last};
    return least_squares(xs, ys).slope;
  };
  SlopeEstimate est;
  est.slope = fit(n, &est.window);
  if (n > 1) {
    std::vector<double> jack;
    for (std::size_t k = 0; k < n; ++k) {
      try {
        jack.push_back(fit(k, nullptr));
      } catch (const InsufficientDataError&) {
      }
    }
    const double m = static_cast<double>(jack.size());
    double mean = 0.0;
    for (double j : jack) mean += j;
    mean /= m;
    double ss = 0.0;
    for (double j : jack) ss += (j - mean) * (j - mean);
    est.stderr_jackknife = std::sqrt((m - 1.0) / m * ss);
  }
  return est;
}

}  // namespace detail

// Squared gradient norms ||dE/dW^l||^2 for one input, as an ensemble.
// Slopes are taken against the distance d = L-1-l from the output, where the
// theory predicts E||grad||^2 ~ chi1^d.
struct GradientSeries {
  int first_layer = 0;  // layers first_layer..L-1 are reported
  std::vector<double> mean_log_grad_sq;  // index l - first_layer
  std::vector<double> log_grad_sq_stderr;
  std::vector<double> log_mean_grad_sq;
  // Slope of log(ensemble mean of ||grad||^2) over the interior window.
  double slope = 0.0;
  double slope_stderr = 0.0;  // delete-one jackknife over networks
  // Per-network slopes of log ||grad||^2, averaged. Biased low by half the
  // per-layer variance of the log-ratio, O(1/N).
  double mean_log_slope = 0.0;
  double mean_log_slope_stderr = 0.0;
  std::pair<int, int> fit_window{0, 0};  // distances from the output
  int n_networks = 0;
  bool truncated = false;

  double xi_grad() const { return slope == 0.0 ? std::numeric_limits<double>::infinity() : -1.0 / slope; }
};

inline GradientSeries backward_gradients(const NetworkConfig& cfg, const Eigen::VectorXd& input,
                                         int n_networks) {
  cfg.validate();
  if (n_networks < 1) throw ConfigurationError("need at least one network");
  if (input.size() != cfg.width) throw DomainError("input must have length equal to the width");
  detail::check_backward_sampling(cfg);
  const Activation act = builtin(cfg.activation);
  std::vector<detail::BackwardRecord> records(n_networks);
  parallel_for(records.size(), [&](std::size_t k) {
    records[k] = detail::backward_one(cfg, act, input, static_cast<std::uint32_t>(k), false);
  });

  GradientSeries s;
  s.n_networks = n_networks;
  for (const auto& r : records) s.first_layer = std::max(s.first_layer, r.first_valid);
  s.truncated = s.first_layer > 0;
  const int count = cfg.depth - s.first_layer;
  const int skip = detail::edge_skip(cfg.depth);
  const int d_lo = skip;
  const int d_hi = count - 1 - skip;
  if (d_hi - d_lo + 1 < 3) throw InsufficientDataError("too few finite layers for a gradient slope fit");

  // by_distance[k][d]
  std::vector<std::vector<double>> by_distance(n_networks, std::vector<double>(count));
  for (int k = 0; k < n_networks; ++k) {
    for (int d = 0; d < count; ++d) {
      const int l = cfg.depth - 1 - d;
      by_distance[k][d] = records[k].delta_gram[l](0, 0) * records[k].input_gram[l](0, 0);
    }
  }
  std::vector<double> logs(n_networks);
  for (int l = s.first_layer; l < cfg.depth; ++l) {
    const int d = cfg.depth - 1 - l;
    double sum = 0.0;
    for (int k = 0; k < n_networks; ++k) {
      logs[k] = std::log(by_distance[k][d]);
      sum += by_distance[k][d];
    }
    const MeanStderr m = mean_stderr(logs);
    s.mean_log_grad_sq.push_back(m.mean);
    s.log_grad_sq_stderr.push_back(m.standard_error);
    s.log_mean_grad_sq.push_back(std::log(sum / n_networks));
  }

  const detail::SlopeEstimate est = detail::log_mean_slope(by_distance, d_lo, d_hi);
  s.slope = est.slope;
  s.slope_stderr = est.stderr_jackknife;
  s.fit_window = est.window;

  std::vector<double> dist, vals, slopes(n_networks);
  for (int d = d_lo; d <= d_hi; ++d) dist.push_back(d);
  for (int k = 0; k < n_networks; ++k) {
    vals.clear();
    for (int d = d_lo; d <= d_hi; ++d) vals.push_back(std::log(by_distance[k][d]));
    slopes[k] = least_squares(dist, vals).slope;
  }
  const MeanStderr ms = mean_stderr(slopes);
  s.mean_log_slope = ms.mean;
  s.mean_log_slope_stderr = ms.standard_error;
  return s;
}

// Ensemble-averaged dot products (dE_a/dW^l).(dE_b/dW^l) for an input pair
// sharing every realization and the target class.
struct GradientCovarianceSeries {
  int first_layer = 0;
  std::vector<double> mean_dot;  // index l - first_layer
  std::vector<double> dot_stderr;
  std::vector<double> mean_grad_sq_a;
  // Slope of log(mean dot) against distance from the output. Theory: -1/xi_c.
  double slope = 0.0;
  double slope_stderr = 0.0;  // delete-one jackknife over networks
  std::pair<int, int> fit_window{0, 0};
  int n_networks = 0;
  bool truncated = false;
};

inline GradientCovarianceSeries backward_covariance(const NetworkConfig& cfg, const Eigen::VectorXd& x_a,
                                                    const Eigen::VectorXd& x_b, int n_networks,
                                                    bool shared_masks = false) {
  cfg.validate();
  if (n_networks < 1) throw ConfigurationError("need at least one network");
  if (x_a.size() != cfg.width || x_b.size() != cfg.width) {
    throw DomainError("inputs must have length equal to the width");
  }
  detail::check_backward_sampling(cfg);
  const Activation act = builtin(cfg.activation);
  Eigen::MatrixXd x(cfg.width, 2);
  x.col(0) = x_a;
  x.col(1) = x_b;
  std::vector<detail::BackwardRecord> records(n_networks);
  parallel_for(records.size(), [&](std::size_t k) {
    records[k] = detail::backward_one(cfg, act, x, static_cast<std::uint32_t>(k), shared_masks);
  });

  GradientCovarianceSeries s;
  s.n_networks = n_networks;
  for (const auto& r : records) s.first_layer = std::max(s.first_layer, r.first_valid);
  s.truncated = s.first_layer > 0;
  const int count = cfg.depth - s.first_layer;

  std::vector<std::vector<double>> by_distance(n_networks, std::vector<double>(count));
  std::vector<double> dots(n_networks), sq(n_networks);
  for (int l = s.first_layer; l < cfg.depth; ++l) {
    const int d = cfg.depth - 1 - l;
    for (int k = 0; k < n_networks; ++k) {
      const auto& r = records[k];
      dots[k] = r.delta_gram[l](0, 1) * r.input_gram[l](0, 1);
      sq[k] = r.delta_gram[l](0, 0) * r.input_gram[l](0, 0);
      by_distance[k][d] = dots[k];
    }
    const MeanStderr m = mean_stderr(dots);
    s.mean_dot.push_back(m.mean);
    s.dot_stderr.push_back(m.standard_error);
    s.mean_grad_sq_a.push_back(mean_stderr(sq).mean);
  }

  const int skip = detail::edge_skip(cfg.depth);
  const detail::SlopeEstimate est = detail::log_mean_slope(by_distance, skip, count - 1 - skip);
  s.slope = est.slope;
  s.slope_stderr = est.stderr_jackknife;
  s.fit_window = est.window;
  return s;
}

}  // namespace mfdepth
