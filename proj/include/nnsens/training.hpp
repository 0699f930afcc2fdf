#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "nnsens/data.hpp"
#include "nnsens/engine.hpp"
#include "nnsens/models.hpp"

namespace nnsens {

/// How the `decay` coefficient modifies optimisation.
///  - inverse_time_epoch: lr_e = lr / (1 + decay * e), e = 0-based epoch.
///  - inverse_time_step:  same with the 0-based update count.
///  - weight_decay:       constant lr, decay * w added to every weight gradient.
enum class DecayMode { inverse_time_epoch, inverse_time_step, weight_decay };

inline std::string to_string(DecayMode m) {
  switch (m) {
    case DecayMode::inverse_time_epoch: return "inverse_time_epoch";
    case DecayMode::inverse_time_step: return "inverse_time_step";
    case DecayMode::weight_decay: return "weight_decay";
  }
  return "unknown";
}

inline DecayMode parse_decay_mode(const std::string& s) {
  if (s == "inverse_time_epoch") return DecayMode::inverse_time_epoch;
  if (s == "inverse_time_step") return DecayMode::inverse_time_step;
  if (s == "weight_decay") return DecayMode::weight_decay;
  throw ConfigError("unknown decay mode '" + s + "'");
}

struct TrainConfig {
  LossKind loss = LossKind::mse;
  double learning_rate = 1e-3;
  double decay = 0.0;
  DecayMode decay_mode = DecayMode::inverse_time_epoch;
  double l1_weight = 0.0;
  std::size_t max_epochs = 100;
  std::size_t batch_size = 128;
  std::size_t patience = 10;
  std::uint64_t seed = 0;
  /// Share of train rows carved out for early stopping when the dataset has
  /// no validation rows of its own. 0 disables early stopping.
  double validation_fraction = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
    if (decay < 0.0) throw ConfigError("decay must be >= 0");
    if (l1_weight < 0.0) throw ConfigError("l1_weight must be >= 0");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw ConfigError("validation_fraction must lie in [0, 1)");
    }
    if (patience < 1) throw ConfigError("patience must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double validation_loss = std::numeric_limits<double>::quiet_NaN();
  double learning_rate = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  std::size_t stopped_epoch = 0;
  std::size_t best_epoch = 0;
  /// "error_rate" for classifiers, "mse" for regressors.
  std::string metric;
  double train_error = std::numeric_limits<double>::quiet_NaN();
  double test_error = std::numeric_limits<double>::quiet_NaN();
  std::size_t train_rows = 0;
  std::size_t validation_rows = 0;
  std::size_t test_rows = 0;
};

// ---------------------------------------------------------------------------
// Adam

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;  // completed updates
};

inline double effective_learning_rate(const TrainConfig& cfg, std::size_t epoch,
                                      std::size_t step) {
  switch (cfg.decay_mode) {
    case DecayMode::inverse_time_epoch:
      return cfg.learning_rate / (1.0 + cfg.decay * static_cast<double>(epoch));
    case DecayMode::inverse_time_step:
      return cfg.learning_rate / (1.0 + cfg.decay * static_cast<double>(step));
    case DecayMode::weight_decay:
      return cfg.learning_rate;
  }
  return cfg.learning_rate;
}

/// One bias-corrected Adam update. `epoch` feeds the inverse-time decay;
/// the update count lives in `state`.
inline void adam_step(std::span<const ParameterView> params,
                      const std::vector<std::vector<double>>& grads, AdamState& state,
                      const TrainConfig& cfg, std::size_t epoch) {
  if (grads.size() != params.size()) throw ShapeError("adam: gradient count mismatch");
  if (state.m.empty()) {
    for (const ParameterView& p : params) {
      state.m.emplace_back(p.values.size(), 0.0);
      state.v.emplace_back(p.values.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam: state shape mismatch");
  const double lr = effective_learning_rate(cfg, epoch, state.t);
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  const bool wd = cfg.decay_mode == DecayMode::weight_decay && cfg.decay > 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::span<double> w = params[k].values;
    const std::vector<double>& g = grads[k];
    if (g.size() != w.size() || state.m[k].size() != w.size()) {
      throw ShapeError("adam: parameter " + std::to_string(k) + " shape mismatch");
    }
    std::vector<double>& m = state.m[k];
    std::vector<double>& v = state.v[k];
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = wd && params[k].is_weight ? g[i] + cfg.decay * w[i] : g[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      w[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses

struct LossValue {
  double value = 0.0;
  Tensor2 gradient;  // d value / d predictions
};

/// Mean batch loss and its gradient w.r.t. the predictions. For
/// cross-entropy, `predictions` are class probabilities.
inline LossValue loss(LossKind kind, const Tensor2& predictions, const Targets& targets) {
  GradientTape tape;
  const auto p = tape.variable(predictions);
  const auto l = detail::record_loss(tape, p, targets, kind);
  tape.backward(l);
  return {tape.value(l).values[0], tape.gradient(p)};
}

/// l1_weight * sum |w| over every weight matrix (biases excluded).
inline double l1_penalty(Network& net, double l1_weight) {
  double acc = 0.0;
  for (const ParameterView& p : parameter_views(net)) {
    if (!p.is_weight) continue;
    for (double w : p.values) acc += std::abs(w);
  }
  return l1_weight * acc;
}

// ---------------------------------------------------------------------------
// Training loop

namespace detail {

template <class Model>
std::vector<std::vector<double>> snapshot(Model& model) {
  std::vector<std::vector<double>> out;
  for (const ParameterView& p : parameter_views(model)) {
    out.emplace_back(p.values.begin(), p.values.end());
  }
  return out;
}

template <class Model>
void restore(Model& model, const std::vector<std::vector<double>>& snap) {
  auto views = parameter_views(model);
  for (std::size_t k = 0; k < views.size(); ++k) {
    std::copy(snap[k].begin(), snap[k].end(), views[k].values.begin());
  }
}

/// Generic mini-batch loop with early stopping.
/// `batch_gradients(model, rows)` returns the penalised loss and gradients;
/// `data_loss(model, rows)` returns the unpenalised mean loss.
template <class Model, class BatchGradients, class DataLoss>
TrainReport fit(Model& model, std::vector<std::size_t> fit_rows,
                const std::vector<std::size_t>& validation_rows, const TrainConfig& cfg,
                BatchGradients&& batch_gradients, DataLoss&& data_loss) {
  cfg.validate();
  if (fit_rows.empty()) throw ConfigError("no rows to train on");
  std::mt19937_64 rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  AdamState state;
  TrainReport report;
  report.train_rows = fit_rows.size();
  report.validation_rows = validation_rows.size();
  const bool early_stopping = !validation_rows.empty();
  double best = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> best_weights;
  std::size_t waited = 0;

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(fit_rows.begin(), fit_rows.end(), rng);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = effective_learning_rate(cfg, epoch - 1, state.t);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < fit_rows.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(fit_rows.size(), start + cfg.batch_size);
      const std::span<const std::size_t> rows(fit_rows.data() + start, stop - start);
      LossGradients lg = batch_gradients(model, rows);
      if (!std::isfinite(lg.loss)) {
        throw NumericError("training loss became " + std::to_string(lg.loss) + " at epoch " +
                           std::to_string(epoch) +
                           "; the learning rate is probably too high");
      }
      auto views = parameter_views(model);
      adam_step(views, lg.gradients, state, cfg, epoch - 1);
      loss_sum += lg.loss;
      ++batches;
    }
    rec.train_loss = loss_sum / static_cast<double>(batches);
    report.stopped_epoch = epoch;
    if (early_stopping) {
      rec.validation_loss = data_loss(model, std::span<const std::size_t>(validation_rows));
      if (!std::isfinite(rec.validation_loss)) {
        throw NumericError("validation loss became non-finite at epoch " + std::to_string(epoch));
      }
      report.epochs.push_back(rec);
      if (rec.validation_loss < best) {
        best = rec.validation_loss;
        report.best_epoch = epoch;
        best_weights = snapshot(model);
        waited = 0;
      } else if (++waited >= cfg.patience) {
        break;
      }
    } else {
      report.epochs.push_back(rec);
      report.best_epoch = epoch;
    }
  }
  if (early_stopping && !best_weights.empty()) restore(model, best_weights);
  return report;
}

/// Train rows split into fitted rows and early-stopping rows.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> carve_validation(
    const Dataset& ds, const TrainConfig& cfg) {
  auto train_rows = ds.rows_with(SplitRole::train);
  auto val_rows = ds.rows_with(SplitRole::validation);
  if (!val_rows.empty() || cfg.validation_fraction == 0.0) return {train_rows, val_rows};
  std::mt19937_64 rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  std::shuffle(train_rows.begin(), train_rows.end(), rng);
  const auto n_val = static_cast<std::size_t>(
      std::llround(cfg.validation_fraction * static_cast<double>(train_rows.size())));
  if (n_val == 0 || n_val >= train_rows.size()) {
    throw ConfigError("validation carve-out of " + std::to_string(n_val) + " rows from " +
                      std::to_string(train_rows.size()) + " train rows is degenerate");
  }
  val_rows.assign(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  train_rows.erase(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(train_rows.begin(), train_rows.end());
  std::sort(val_rows.begin(), val_rows.end());
  return {train_rows, val_rows};
}

inline Targets targets_for(const Dataset& ds, std::span<const std::size_t> rows, LossKind loss) {
  Targets t;
  if (loss == LossKind::mse) {
    t.values = Tensor2(rows.size(), 1);
    for (std::size_t i = 0; i < rows.size(); ++i) t.values(i, 0) = ds.targets[rows[i]];
  } else {
    for (std::size_t r : rows) t.labels.push_back(static_cast<std::size_t>(ds.targets[r]));
  }
  return t;
}

}  // namespace detail

/// Classification error rate (classifiers) or MSE (regressors) on `rows`.
inline double evaluate_error(const Network& net, const Dataset& ds,
                             std::span<const std::size_t> rows) {
  if (rows.empty()) return std::numeric_limits<double>::quiet_NaN();
  const Tensor2 out = forward(net, ds.features.gather_rows(rows));
  double acc = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (net.is_classifier()) {
      const auto r = out.row(i);
      const auto pred = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      acc += pred == static_cast<std::size_t>(ds.targets[rows[i]]) ? 0.0 : 1.0;
    } else {
      const double d = out(i, 0) - ds.targets[rows[i]];
      acc += d * d;
    }
  }
  return acc / static_cast<double>(rows.size());
}

/// Fits `net` on the train split with mini-batch Adam. Early stopping uses
/// the validation split (or a seeded carve-out of the train rows); the
/// weights of the best validation epoch are restored.
inline TrainReport train(Network& net, const Dataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  ds.validate();
  if (ds.width() != net.input_width()) {
    throw ShapeError("dataset width " + std::to_string(ds.width()) +
                     " does not match network input width " + std::to_string(net.input_width()));
  }
  if (cfg.loss == LossKind::cross_entropy) {
    if (!ds.classification) throw ConfigError("cross-entropy needs a classification dataset");
    if (!net.is_classifier()) throw ConfigError("cross-entropy needs a softmax output layer");
    if (ds.class_count() > net.output_width()) {
      throw ShapeError("dataset has " + std::to_string(ds.class_count()) +
                       " classes but the network emits " + std::to_string(net.output_width()));
    }
  } else if (net.output_width() != 1) {
    throw ShapeError("mse training expects a single-output network");
  }
  auto [fit_rows, val_rows] = detail::carve_validation(ds, cfg);
  auto batch_gradients = [&](const Network& m, std::span<const std::size_t> rows) {
    return parameter_gradients(m, ds.features.gather_rows(rows),
                               detail::targets_for(ds, rows, cfg.loss), cfg.loss, cfg.l1_weight);
  };
  auto data_loss = [&](const Network& m, std::span<const std::size_t> rows) {
    const Tensor2 out = forward(m, ds.features.gather_rows(rows));
    return loss(cfg.loss, out, detail::targets_for(ds, rows, cfg.loss)).value;
  };
  TrainReport report = detail::fit(net, fit_rows, val_rows, cfg, batch_gradients, data_loss);
  report.metric = net.is_classifier() ? "error_rate" : "mse";
  report.train_error = evaluate_error(net, ds, fit_rows);
  const auto test_rows = ds.rows_with(SplitRole::test);
  report.test_rows = test_rows.size();
  report.test_error = evaluate_error(net, ds, test_rows);
  return report;
}

/// Recurrent variant; `roles` assigns each sequence to train/validation/test.
inline TrainReport train(RecurrentNetwork& rnn, const SequenceBatch& batch,
                         const std::vector<SplitRole>& roles, const TrainConfig& cfg) {
  cfg.validate();
  if (roles.size() != batch.count) throw ShapeError("one split role per sequence is required");
  Dataset index_view;  // only the split is used for the carve-out
  index_view.features = Tensor2(batch.count, 0);
  index_view.split = roles;
  auto [fit_rows, val_rows] = detail::carve_validation(index_view, cfg);
  auto batch_gradients = [&](const RecurrentNetwork& m, std::span<const std::size_t> rows) {
    return parameter_gradients(m, batch.subset(rows), cfg.loss, cfg.l1_weight);
  };
  auto data_loss = [&](const RecurrentNetwork& m, std::span<const std::size_t> rows) {
    return parameter_gradients(m, batch.subset(rows), cfg.loss, 0.0).loss;
  };
  TrainReport report = detail::fit(rnn, fit_rows, val_rows, cfg, batch_gradients, data_loss);
  report.metric = to_string(cfg.loss);
  report.train_error = data_loss(rnn, fit_rows);
  const auto test_rows = index_view.rows_with(SplitRole::test);
  report.test_rows = test_rows.size();
  if (!test_rows.empty()) report.test_error = data_loss(rnn, test_rows);
  return report;
}

}  // namespace nnsens
