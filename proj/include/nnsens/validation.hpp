#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nnsens/data.hpp"
#include "nnsens/engine.hpp"
#include "nnsens/explain.hpp"
#include "nnsens/models.hpp"
#include "nnsens/sequence.hpp"

namespace nnsens {

// ---------------------------------------------------------------------------
// Ground-truth importance of the synthetic regression function.
//
// The true partial derivatives are (-sin X1, cos X2, 2, 1, 0.01). With
// X ~ N(0,1): E sin^2 X = (1 - e^-2)/2 and E cos^2 X = (1 + e^-2)/2.

struct OracleReport {
  std::array<double, 5> raw{};             // RMS of each derivative
  std::array<double, 5> lambda{};          // normalised to 100
  std::array<double, 5> standard_error{};  // of raw, delta method
  std::size_t n_draws = 0;
};

inline std::array<double, 5> closed_form_oracle_raw() {
  const double e2 = std::exp(-2.0);
  return {std::sqrt((1.0 - e2) / 2.0), std::sqrt((1.0 + e2) / 2.0), 2.0, 1.0, 0.01};
}

inline std::array<double, 5> closed_form_oracle_lambda() {
  const auto raw = closed_form_oracle_raw();
  double c = 0.0;
  for (double r : raw) c += r;
  std::array<double, 5> out{};
  for (std::size_t j = 0; j < 5; ++j) out[j] = 100.0 * (raw[j] / c);
  return out;
}

/// Monte-Carlo estimate of the global importance of the true function.
inline OracleReport true_importance_oracle(std::size_t n_draws, std::uint64_t seed) {
  if (n_draws < 10000) throw ConfigError("oracle needs at least 10^4 draws");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::array<double, 5> sum{}, sum_sq{};
  for (std::size_t i = 0; i < n_draws; ++i) {
    const double x1 = normal(rng);
    const double x2 = normal(rng);
    // X3..X5 enter linearly; their derivatives do not depend on the draw.
    const std::array<double, 5> d{-std::sin(x1), std::cos(x2), 2.0, 1.0, 0.01};
    for (std::size_t j = 0; j < 5; ++j) {
      const double s = d[j] * d[j];
      sum[j] += s;
      sum_sq[j] += s * s;
    }
  }
  OracleReport rep;
  rep.n_draws = n_draws;
  const double n = static_cast<double>(n_draws);
  double c = 0.0;
  for (std::size_t j = 0; j < 5; ++j) {
    const double mean = sum[j] / n;
    const double var = std::max(0.0, sum_sq[j] / n - mean * mean);
    rep.raw[j] = std::sqrt(mean);
    rep.standard_error[j] = std::sqrt(var / n) / (2.0 * rep.raw[j]);
    c += rep.raw[j];
  }
  for (std::size_t j = 0; j < 5; ++j) rep.lambda[j] = 100.0 * rep.raw[j] / c;
  return rep;
}

// ---------------------------------------------------------------------------
// l1-regularised logistic regression baseline

struct LassoConfig {
  double alpha = 0.01;  // penalty on sum |beta_j|, intercept unpenalised
  std::size_t max_iterations = 20000;
  double tolerance = 1e-7;
};

struct LogisticFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  std::size_t iterations = 0;
};

/// Accelerated proximal gradient (FISTA) on mean log-loss + alpha * ||beta||_1.
inline LogisticFit fit_logistic_lasso(const Tensor2& x, std::span<const double> y,
                                      const LassoConfig& cfg = {}) {
  const std::size_t n = x.rows;
  const std::size_t p = x.cols;
  if (n == 0 || y.size() != n) throw ShapeError("logistic fit: rows and labels disagree");
  for (double t : y) {
    if (t != 0.0 && t != 1.0) throw ConfigError("logistic baseline needs binary 0/1 targets");
  }
  // Lipschitz constant of the smooth part: 0.25 * largest eigenvalue of
  // [1 X]^T [1 X] / n, estimated by power iteration.
  std::vector<double> v(p + 1, 1.0 / std::sqrt(static_cast<double>(p + 1)));
  double eig = 1.0;
  for (int it = 0; it < 100; ++it) {
    std::vector<double> xv(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = v[0];
      for (std::size_t j = 0; j < p; ++j) s += x(i, j) * v[j + 1];
      xv[i] = s;
    }
    std::vector<double> w(p + 1, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      w[0] += xv[i];
      for (std::size_t j = 0; j < p; ++j) w[j + 1] += x(i, j) * xv[i];
    }
    double norm = 0.0;
    for (double& wi : w) {
      wi /= static_cast<double>(n);
      norm += wi * wi;
    }
    norm = std::sqrt(norm);
    if (norm == 0.0) break;
    eig = norm;
    for (std::size_t j = 0; j <= p; ++j) v[j] = w[j] / norm;
  }
  const double step = 1.0 / (0.25 * eig * 1.05);

  std::vector<double> beta(p + 1, 0.0), prev(p + 1, 0.0), z(p + 1, 0.0), grad(p + 1);
  double momentum = 1.0;
  for (std::size_t it = 1; it <= cfg.max_iterations; ++it) {
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double s = z[0];
      for (std::size_t j = 0; j < p; ++j) s += x(i, j) * z[j + 1];
      const double r = 1.0 / (1.0 + std::exp(-s)) - y[i];
      grad[0] += r;
      for (std::size_t j = 0; j < p; ++j) grad[j + 1] += r * x(i, j);
    }
    prev = beta;
    double change = 0.0;
    for (std::size_t j = 0; j <= p; ++j) {
      const double u = z[j] - step * grad[j] / static_cast<double>(n);
      if (j == 0) {
        beta[j] = u;
      } else {
        const double shrink = step * cfg.alpha;
        beta[j] = u > shrink ? u - shrink : (u < -shrink ? u + shrink : 0.0);
      }
      change = std::max(change, std::abs(beta[j] - prev[j]));
    }
    if (!std::isfinite(change)) throw NumericError("logistic baseline diverged");
    if (change < cfg.tolerance) {
      return {std::vector<double>(beta.begin() + 1, beta.end()), beta[0], it};
    }
    const double next = (1.0 + std::sqrt(1.0 + 4.0 * momentum * momentum)) / 2.0;
    for (std::size_t j = 0; j <= p; ++j) {
      z[j] = beta[j] + (momentum - 1.0) / next * (beta[j] - prev[j]);
    }
    momentum = next;
  }
  throw NumericError("logistic baseline did not converge in " +
                     std::to_string(cfg.max_iterations) + " iterations (tolerance " +
                     std::to_string(cfg.tolerance) + ")");
}

/// |coefficient| normalised to 100 on the train rows (all rows if unsplit).
inline ImportanceReport logistic_baseline_importance(const Dataset& ds, const LassoConfig& cfg = {}) {
  std::vector<std::size_t> rows;
  if (ds.split.empty()) {
    rows.resize(ds.rows());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
  } else {
    rows = ds.rows_with(SplitRole::train);
  }
  std::vector<double> y;
  for (std::size_t r : rows) y.push_back(ds.targets[r]);
  const LogisticFit fit = fit_logistic_lasso(ds.features.gather_rows(rows), y, cfg);
  std::vector<double> raw;
  for (double b : fit.coefficients) raw.push_back(std::abs(b));
  auto rep = detail::normalize(std::move(raw), ds.feature_names(), ReportScope::global,
                               "logistic_l1");
  rep.sample_count = rows.size();
  rep.selector = "coefficient_magnitude";
  return rep;
}

// ---------------------------------------------------------------------------
// Brute-force reimplementation of every metric: scalar forward passes with
// explicit loops and central finite differences. Shares nothing with the tape.

enum class MetricKind { global_iid, local, many_to_one, many_to_many, lag_global, lag_local };

namespace reference {

inline constexpr double kStep = 1e-5;

inline std::vector<double> activate(std::vector<double> z, Activation act) {
  switch (act) {
    case Activation::linear: break;
    case Activation::relu:
      for (double& v : z) v = std::max(0.0, v);
      break;
    case Activation::tanh:
      for (double& v : z) v = std::tanh(v);
      break;
    case Activation::softmax: {
      double m = z[0];
      for (double v : z) m = std::max(m, v);
      double s = 0.0;
      for (double& v : z) {
        v = std::exp(v - m);
        s += v;
      }
      for (double& v : z) v /= s;
      break;
    }
  }
  return z;
}

inline std::vector<double> dense(const DenseLayer& l, const std::vector<double>& x) {
  std::vector<double> z(l.weight.rows);
  for (std::size_t o = 0; o < l.weight.rows; ++o) {
    double s = l.bias[o];
    for (std::size_t k = 0; k < l.weight.cols; ++k) s += l.weight(o, k) * x[k];
    z[o] = s;
  }
  return activate(std::move(z), l.activation);
}

inline std::vector<double> evaluate(const Network& net, std::vector<double> x) {
  for (const DenseLayer& l : net.layers) x = dense(l, x);
  return x;
}

/// Outputs at every step for one (tau x p) sequence stored row-major.
inline std::vector<std::vector<double>> evaluate(const RecurrentNetwork& rnn,
                                                 const std::vector<double>& seq) {
  const std::size_t hw = rnn.hidden_width();
  const std::size_t p = rnn.input_width();
  std::vector<double> h(hw, 0.0);
  std::vector<std::vector<double>> outs;
  for (std::size_t s = 0; s < rnn.tau; ++s) {
    std::vector<double> z(hw);
    for (std::size_t a = 0; a < hw; ++a) {
      double v = rnn.hidden_bias[a];
      for (std::size_t j = 0; j < p; ++j) v += rnn.input_weight(a, j) * seq[s * p + j];
      for (std::size_t b = 0; b < hw; ++b) v += rnn.recurrent_weight(a, b) * h[b];
      z[a] = v;
    }
    h = activate(std::move(z), rnn.hidden_activation);
    outs.push_back(evaluate(rnn.head, h));
  }
  return outs;
}

inline std::size_t pick(const OutputSelector& sel, const std::vector<double>& out) {
  if (sel.kind == OutputSelector::Kind::output_index) return sel.index;
  return static_cast<std::size_t>(std::max_element(out.begin(), out.end()) - out.begin());
}

/// d f_c / d x_j by central differences, c fixed at the unperturbed point.
inline std::vector<double> gradient(const Network& net, const std::vector<double>& x,
                                    const OutputSelector& sel) {
  const std::size_t c = pick(sel, evaluate(net, x));
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    std::vector<double> up = x, down = x;
    up[j] += kStep;
    down[j] -= kStep;
    g[j] = (evaluate(net, up)[c] - evaluate(net, down)[c]) / (2.0 * kStep);
  }
  return g;
}

/// d y_out / d x_{s, j} for one sequence and one output step.
inline double sequence_derivative(const RecurrentNetwork& rnn, const std::vector<double>& seq,
                                  std::size_t out_step, std::size_t in_step, std::size_t j,
                                  std::size_t c) {
  const std::size_t p = rnn.input_width();
  std::vector<double> up = seq, down = seq;
  up[in_step * p + j] += kStep;
  down[in_step * p + j] -= kStep;
  return (evaluate(rnn, up)[out_step][c] - evaluate(rnn, down)[out_step][c]) / (2.0 * kStep);
}

inline ImportanceReport to_report(const std::vector<double>& raw, ReportScope scope,
                                  const std::string& metric, const std::string& prefix) {
  double c = 0.0;
  for (double r : raw) c += r;
  if (!(c > 0.0)) throw NumericError("brute-force oracle: normalizer is zero");
  ImportanceReport rep;
  rep.scope = scope;
  rep.metric = metric;
  rep.normalizer = c;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    rep.entries.push_back({j, prefix + std::to_string(prefix == "lag " ? j : j + 1),
                           100.0 * (raw[j] / c), raw[j]});
  }
  return rep;
}

inline std::vector<double> sequence_values(const SequenceBatch& b, std::size_t t) {
  return std::vector<double>(b.values.begin() + static_cast<std::ptrdiff_t>(t * b.length * b.features),
                             b.values.begin() + static_cast<std::ptrdiff_t>((t + 1) * b.length * b.features));
}

}  // namespace reference

inline void check_brute_force_size(std::size_t p, std::size_t tau, std::size_t n) {
  if (p > 5 || tau > 3 || n > 100) {
    throw ConfigError("brute-force oracle is limited to p <= 5, tau <= 3, n <= 100");
  }
}

/// Feed-forward metrics: global_iid over every row of `data`, or local at row 0.
inline ImportanceReport brute_force_metric_oracle(const Network& net, const Tensor2& data,
                                                  MetricKind kind,
                                                  const OutputSelector& sel = OutputSelector::output(0)) {
  check_brute_force_size(data.cols, 1, data.rows);
  if (kind == MetricKind::local) {
    const auto g = reference::gradient(net, std::vector<double>(data.row(0).begin(), data.row(0).end()), sel);
    std::vector<double> raw;
    for (double v : g) raw.push_back(v * v);
    return reference::to_report(raw, ReportScope::local, "local", "x");
  }
  if (kind != MetricKind::global_iid) throw ConfigError("metric not defined for feed-forward models");
  std::vector<double> sum(data.cols, 0.0);
  for (std::size_t i = 0; i < data.rows; ++i) {
    const auto g = reference::gradient(net, std::vector<double>(data.row(i).begin(), data.row(i).end()), sel);
    for (std::size_t j = 0; j < data.cols; ++j) sum[j] += g[j] * g[j];
  }
  std::vector<double> raw;
  for (double s : sum) raw.push_back(std::sqrt(s / static_cast<double>(data.rows)));
  return reference::to_report(raw, ReportScope::global, "iid", "x");
}

/// Recurrent metrics over every sequence of `data` (lag_local: sequence 0).
inline ImportanceReport brute_force_metric_oracle(const RecurrentNetwork& rnn,
                                                  const SequenceBatch& data, MetricKind kind,
                                                  const OutputSelector& sel = OutputSelector::output(0)) {
  check_brute_force_size(data.features, data.length, data.count);
  const std::size_t p = data.features;
  const std::size_t tau = rnn.tau;
  const std::size_t last = tau - 1;
  auto class_at = [&](const std::vector<double>& seq, std::size_t step) {
    return reference::pick(sel, reference::evaluate(rnn, seq)[step]);
  };

  switch (kind) {
    case MetricKind::many_to_one:
    case MetricKind::many_to_many: {
      const bool all_steps = kind == MetricKind::many_to_many;
      std::vector<double> raw(p, 0.0);
      for (std::size_t s = all_steps ? 0 : last; s <= last; ++s) {
        for (std::size_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < data.count; ++t) {
            const auto seq = reference::sequence_values(data, t);
            const double d = reference::sequence_derivative(rnn, seq, s, s, j, class_at(seq, s));
            acc += d * d;
          }
          raw[j] += std::sqrt(acc / static_cast<double>(data.count));
        }
      }
      if (all_steps) {
        for (double& r : raw) r /= static_cast<double>(tau);
      }
      return reference::to_report(raw, ReportScope::global,
                                  all_steps ? "many_to_many" : "many_to_one", "x");
    }
    case MetricKind::lag_global:
    case MetricKind::lag_local: {
      const std::size_t count = kind == MetricKind::lag_local ? 1 : data.count;
      std::vector<double> raw(tau, 0.0);
      for (std::size_t k = 0; k < tau; ++k) {
        double per_feature = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
          double acc = 0.0;
          for (std::size_t t = 0; t < count; ++t) {
            const auto seq = reference::sequence_values(data, t);
            const double d =
                reference::sequence_derivative(rnn, seq, last, last - k, j, class_at(seq, last));
            acc += d * d;
          }
          per_feature += std::sqrt(acc / static_cast<double>(count));
        }
        raw[k] = per_feature / static_cast<double>(p);
      }
      return reference::to_report(raw, kind == MetricKind::lag_local ? ReportScope::lag_local
                                                                      : ReportScope::lag_global,
                                  "lag", "lag ");
    }
    case MetricKind::local: {
      const auto seq = reference::sequence_values(data, 0);
      std::vector<double> raw(p, 0.0);
      const bool per_step = rnn.mode == SequenceMode::many_to_many;
      for (std::size_t s = per_step ? 0 : last; s <= last; ++s) {
        for (std::size_t j = 0; j < p; ++j) {
          const double d = reference::sequence_derivative(rnn, seq, s, s, j, class_at(seq, s));
          raw[j] += d * d;
        }
      }
      if (per_step) {
        for (double& r : raw) r /= static_cast<double>(tau);
      }
      return reference::to_report(raw, ReportScope::local, "local", "x");
    }
    case MetricKind::global_iid:
      break;
  }
  throw ConfigError("metric not defined for recurrent models");
}

// ---------------------------------------------------------------------------
// Randomised gradient checks

struct GradcheckResult {
  std::uint64_t seed = 0;
  std::size_t depth = 0;
  std::size_t checked = 0;  // derivative entries compared
  std::size_t skipped = 0;  // entries skipped near a ReLU kink
  double max_input_error = 0.0;
  double max_parameter_error = 0.0;
  bool passed(double tol) const { return max_input_error < tol && max_parameter_error < tol; }
};

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-4) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

namespace detail {

/// Smallest |pre-activation| over every ReLU unit reached by the rows of x.
inline double relu_margin(const Network& net, const Tensor2& x) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < x.rows; ++i) {
    std::vector<double> a(x.row(i).begin(), x.row(i).end());
    for (const DenseLayer& l : net.layers) {
      std::vector<double> z(l.weight.rows);
      for (std::size_t o = 0; o < l.weight.rows; ++o) {
        double s = l.bias[o];
        for (std::size_t k = 0; k < l.weight.cols; ++k) s += l.weight(o, k) * a[k];
        z[o] = s;
        if (l.activation == Activation::relu) margin = std::min(margin, std::abs(s));
      }
      a = reference::activate(std::move(z), l.activation);
    }
  }
  return margin;
}

}  // namespace detail

/// One seeded trial: a random network of depth <= 3 and width <= 16 with
/// tanh/relu/linear layers, random inputs, biases, and MSE targets. Input
/// and parameter gradients are compared with central differences of step
/// `step`. Draws that put a ReLU pre-activation within `kink` of 0 are
/// redrawn, and after 20 attempts the offending entries are skipped.
inline GradcheckResult gradient_check_trial(std::uint64_t seed, double step = 1e-5,
                                            double kink = 1e-3) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> depth_d(1, 3), width_d(1, 16), act_d(0, 2), rows_d(1, 4);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Activation acts[3] = {Activation::tanh, Activation::relu, Activation::linear};
  GradcheckResult res;
  res.seed = seed;
  res.depth = depth_d(rng);
  ModelSpec spec;
  spec.input_width = width_d(rng);
  for (std::size_t l = 0; l < res.depth; ++l) {
    spec.widths.push_back(l + 1 == res.depth ? std::min<std::size_t>(width_d(rng), 3) : width_d(rng));
    spec.activations.push_back(acts[act_d(rng)]);
  }
  spec.seed = rng();
  Network net = build_mlp(spec);
  for (DenseLayer& l : net.layers) {
    for (double& b : l.bias) b = 0.1 * normal(rng);
  }
  const std::size_t n = rows_d(rng);
  Tensor2 x(n, spec.input_width);
  bool clear = false;
  for (int attempt = 0; attempt < 20 && !clear; ++attempt) {
    for (double& v : x.values) v = normal(rng);
    clear = detail::relu_margin(net, x) > kink;
  }
  Tensor2 y(n, net.output_width());
  for (double& v : y.values) v = normal(rng);
  const OutputSelector sel = OutputSelector::output(rng() % net.output_width());

  // Input gradients, one row at a time.
  for (std::size_t i = 0; i < n; ++i) {
    const Tensor2 xi = Tensor2::row_vector(x.row(i));
    if (detail::relu_margin(net, xi) <= kink) {
      res.skipped += x.cols;
      continue;
    }
    const auto g = input_gradient(net, x.row(i), sel);
    const auto fd = finite_difference_gradient(
        [&](std::span<const double> p) { return reference::evaluate(net, {p.begin(), p.end()})[sel.index]; },
        x.row(i), step);
    for (std::size_t j = 0; j < g.size(); ++j) {
      res.max_input_error = std::max(res.max_input_error, relative_error(g[j], fd[j]));
      ++res.checked;
    }
  }

  // Parameter gradients of the batch MSE.
  if (detail::relu_margin(net, x) <= kink) {
    for (const ParameterView& v : parameter_views(net)) res.skipped += v.values.size();
    return res;
  }
  const Targets targets{y, {}};
  const LossGradients lg = parameter_gradients(net, x, targets, LossKind::mse);
  auto batch_loss = [&](const Network& m) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto out = reference::evaluate(m, {x.row(i).begin(), x.row(i).end()});
      for (std::size_t o = 0; o < out.size(); ++o) {
        const double d = out[o] - y(i, o);
        acc += d * d;
      }
    }
    return acc / static_cast<double>(n * net.output_width());
  };
  Network probe = net;
  auto views = parameter_views(probe);
  for (std::size_t k = 0; k < views.size(); ++k) {
    for (std::size_t i = 0; i < views[k].values.size(); ++i) {
      double& w = views[k].values[i];
      const double orig = w;
      w = orig + step;
      const double up = batch_loss(probe);
      w = orig - step;
      const double down = batch_loss(probe);
      w = orig;
      const double fd = (up - down) / (2.0 * step);
      res.max_parameter_error = std::max(res.max_parameter_error, relative_error(lg.gradients[k][i], fd));
      ++res.checked;
    }
  }
  return res;
}

}  // namespace nnsens
