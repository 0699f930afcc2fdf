#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "nnsens/models.hpp"
#include "nnsens/sequence.hpp"
#include "nnsens/tape.hpp"
#include "nnsens/tensor.hpp"

namespace nnsens {

/// Which scalar output a derivative is taken of.
///
/// For regressors this is an output column (usually 0). For softmax
/// classifiers it is the probability of a class: either a fixed one
/// (default: class 1, the positive class of a binary problem) or the class
/// predicted for each sample.
struct OutputSelector {
  enum class Kind { output_index, predicted_class };
  Kind kind = Kind::output_index;
  std::size_t index = 0;

  static OutputSelector output(std::size_t i) { return {Kind::output_index, i}; }
  static OutputSelector positive_class() { return {Kind::output_index, 1}; }
  static OutputSelector predicted_class() { return {Kind::predicted_class, 0}; }

  std::string describe() const {
    return kind == Kind::predicted_class ? std::string("predicted_class")
                                         : "output[" + std::to_string(index) + "]";
  }

  void check(std::size_t output_width) const {
    if (kind == Kind::output_index && index >= output_width) {
      throw ConfigError("output selector index " + std::to_string(index) +
                        " out of range for " + std::to_string(output_width) + " outputs");
    }
  }

  /// Seed matrix picking the selected scalar in each row of `outputs`.
  Tensor2 seed_for(const Tensor2& outputs) const {
    check(outputs.cols);
    Tensor2 seed(outputs.rows, outputs.cols);
    for (std::size_t i = 0; i < outputs.rows; ++i) {
      std::size_t c = index;
      if (kind == Kind::predicted_class) {
        const auto r = outputs.row(i);
        c = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
      }
      seed(i, c) = 1.0;
    }
    return seed;
  }

  friend bool operator==(const OutputSelector&, const OutputSelector&) = default;
};

/// Default selector for a network: positive-class probability for a
/// classifier with at least two outputs, output 0 otherwise.
inline OutputSelector default_selector(bool classifier, std::size_t output_width) {
  return classifier && output_width >= 2 ? OutputSelector::positive_class()
                                         : OutputSelector::output(0);
}

/// entries(i, j) = d(selected output of sample i) / d x_j.
struct InputJacobian {
  Tensor2 entries;

  std::size_t n_samples() const { return entries.rows; }
  std::size_t n_features() const { return entries.cols; }
};

enum class LossKind { mse, cross_entropy };

inline std::string to_string(LossKind k) { return k == LossKind::mse ? "mse" : "cross_entropy"; }

inline LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw ConfigError("unknown loss '" + s + "'");
}

/// Regression targets (rows x outputs) or class labels, depending on the loss.
struct Targets {
  Tensor2 values;
  std::vector<std::size_t> labels;
};

// ---------------------------------------------------------------------------
// Parameter access in a fixed canonical order: per layer, weight then bias.
// Recurrent networks list input weight, recurrent weight, hidden bias, then
// the head's parameters.

struct ParameterView {
  std::span<double> values;
  bool is_weight = false;  // biases are excluded from l1 penalties
};

inline std::vector<ParameterView> parameter_views(Network& net) {
  std::vector<ParameterView> out;
  for (DenseLayer& l : net.layers) {
    out.push_back({l.weight.values, true});
    out.push_back({l.bias, false});
  }
  return out;
}

inline std::vector<ParameterView> parameter_views(RecurrentNetwork& rnn) {
  std::vector<ParameterView> out{{rnn.input_weight.values, true},
                                 {rnn.recurrent_weight.values, true},
                                 {rnn.hidden_bias, false}};
  for (ParameterView& v : parameter_views(rnn.head)) out.push_back(v);
  return out;
}

/// Loss value and gradients aligned with parameter_views().
struct LossGradients {
  double loss = 0.0;
  std::vector<std::vector<double>> gradients;
};

// ---------------------------------------------------------------------------
// Recording models onto a tape.

struct BoundParameters {
  std::vector<GradientTape::NodeId> nodes;  // aligned with parameter_views()
};

namespace detail {

inline GradientTape::NodeId leaf(GradientTape& tape, Tensor2 v, bool trainable) {
  return trainable ? tape.variable(std::move(v)) : tape.constant(std::move(v));
}

inline void bind_dense(GradientTape& tape, const Network& net, bool trainable,
                       BoundParameters& bound) {
  for (const DenseLayer& l : net.layers) {
    bound.nodes.push_back(leaf(tape, l.weight, trainable));
    bound.nodes.push_back(leaf(tape, Tensor2::row_vector(l.bias), trainable));
  }
}

/// Applies dense layers whose parameters start at bound.nodes[offset].
inline GradientTape::NodeId apply_dense(GradientTape& tape, const Network& net,
                                        const BoundParameters& bound, std::size_t offset,
                                        GradientTape::NodeId x) {
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto z = tape.affine(x, bound.nodes[offset + 2 * l], bound.nodes[offset + 2 * l + 1]);
    x = tape.activate(z, net.layers[l].activation);
  }
  return x;
}

inline void require_finite(const Tensor2& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + " produced non-finite values");
}

}  // namespace detail

/// Records net(x) on the tape; `input` must already be a tape node.
inline GradientTape::NodeId record_network(GradientTape& tape, const Network& net,
                                           GradientTape::NodeId input, bool trainable,
                                           BoundParameters* bound_out = nullptr) {
  BoundParameters bound;
  detail::bind_dense(tape, net, trainable, bound);
  const auto out = detail::apply_dense(tape, net, bound, 0, input);
  if (bound_out) *bound_out = std::move(bound);
  return out;
}

/// Nodes of an unrolled recurrent forward pass over a SequenceBatch.
struct RecurrentTrace {
  std::vector<GradientTape::NodeId> step_inputs;   // one (T x p) node per step
  std::vector<GradientTape::NodeId> step_outputs;  // one (T x out) node per step
  BoundParameters parameters;
};

/// Unrolls the recurrence over all tau steps and applies the head at every
/// step. h_0 is the zero vector.
inline RecurrentTrace record_recurrent(GradientTape& tape, const RecurrentNetwork& rnn,
                                       const SequenceBatch& batch, bool trainable_params,
                                       bool differentiate_inputs) {
  rnn.validate();
  batch.validate();
  if (batch.features != rnn.input_width()) {
    throw ShapeError("sequence batch has " + std::to_string(batch.features) +
                     " features but the network expects " + std::to_string(rnn.input_width()));
  }
  if (batch.length != rnn.tau) {
    throw ShapeError("sequence length " + std::to_string(batch.length) +
                     " does not match network tau " + std::to_string(rnn.tau));
  }
  RecurrentTrace trace;
  auto& p = trace.parameters.nodes;
  p.push_back(detail::leaf(tape, rnn.input_weight, trainable_params));
  p.push_back(detail::leaf(tape, rnn.recurrent_weight, trainable_params));
  p.push_back(detail::leaf(tape, Tensor2::row_vector(rnn.hidden_bias), trainable_params));
  detail::bind_dense(tape, rnn.head, trainable_params, trace.parameters);

  auto h = tape.constant(Tensor2(batch.count, rnn.hidden_width()));
  for (std::size_t s = 0; s < batch.length; ++s) {
    const auto x = detail::leaf(tape, batch.step(s), differentiate_inputs);
    trace.step_inputs.push_back(x);
    const auto z_in = tape.affine(x, p[0], p[2]);
    const auto z_rec = tape.affine(h, p[1]);
    h = tape.activate(tape.add(z_in, z_rec), rnn.hidden_activation);
    trace.step_outputs.push_back(detail::apply_dense(tape, rnn.head, trace.parameters, 3, h));
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Feed-forward evaluation and input gradients.

inline void check_batch_width(const Network& net, const Tensor2& batch) {
  net.validate();
  if (batch.cols != net.input_width()) {
    throw ShapeError("batch " + batch.shape() + " has " + std::to_string(batch.cols) +
                     " columns but the network input width is " +
                     std::to_string(net.input_width()));
  }
}

/// One output row per input row.
inline Tensor2 forward(const Network& net, const Tensor2& batch) {
  check_batch_width(net, batch);
  GradientTape tape;
  const auto out = record_network(tape, net, tape.constant(batch), false);
  detail::require_finite(tape.value(out), "forward");
  return tape.value(out);
}

inline InputJacobian input_jacobian_batch(const Network& net, const Tensor2& batch,
                                          const OutputSelector& selector) {
  check_batch_width(net, batch);
  selector.check(net.output_width());
  GradientTape tape;
  const auto x = tape.variable(batch);
  const auto out = record_network(tape, net, x, false);
  tape.backward(out, selector.seed_for(tape.value(out)));
  InputJacobian jac{tape.gradient(x)};
  detail::require_finite(jac.entries, "input gradient");
  return jac;
}

inline std::vector<double> input_gradient(const Network& net, std::span<const double> x,
                                          const OutputSelector& selector) {
  return input_jacobian_batch(net, Tensor2::row_vector(x), selector).entries.values;
}

// ---------------------------------------------------------------------------
// Recurrent evaluation and input gradients.

/// many_to_one: (T x out) from the last step. many_to_many: (T*tau x out),
/// rows ordered [t][step].
inline Tensor2 forward(const RecurrentNetwork& rnn, const SequenceBatch& batch) {
  GradientTape tape;
  const auto trace = record_recurrent(tape, rnn, batch, false, false);
  const std::size_t width = rnn.output_width();
  if (rnn.mode == SequenceMode::many_to_one) {
    Tensor2 out = tape.value(trace.step_outputs.back());
    detail::require_finite(out, "recurrent forward");
    return out;
  }
  Tensor2 out(batch.count * batch.length, width);
  for (std::size_t s = 0; s < batch.length; ++s) {
    const Tensor2& ys = tape.value(trace.step_outputs[s]);
    for (std::size_t t = 0; t < batch.count; ++t) {
      std::copy_n(ys.row(t).begin(), width, out.row(t * batch.length + s).begin());
    }
  }
  detail::require_finite(out, "recurrent forward");
  return out;
}

/// Per-sequence (tau x p) matrices whose row k holds d y_{output_step} / d x_{output_step-k}.
/// Rows with k > output_step refer to steps before the window and are zero.
inline std::vector<Tensor2> rnn_lag_jacobians(const RecurrentNetwork& rnn,
                                              const SequenceBatch& batch,
                                              std::size_t output_step,
                                              const OutputSelector& selector) {
  if (output_step >= rnn.tau) {
    throw ConfigError("output step " + std::to_string(output_step) + " must be < tau = " +
                      std::to_string(rnn.tau));
  }
  selector.check(rnn.output_width());
  GradientTape tape;
  const auto trace = record_recurrent(tape, rnn, batch, false, true);
  const auto root = trace.step_outputs[output_step];
  tape.backward(root, selector.seed_for(tape.value(root)));
  std::vector<Tensor2> out(batch.count, Tensor2(batch.length, batch.features));
  for (std::size_t k = 0; k <= output_step; ++k) {
    const Tensor2 g = tape.gradient(trace.step_inputs[output_step - k]);
    detail::require_finite(g, "recurrent input gradient");
    for (std::size_t t = 0; t < batch.count; ++t) {
      std::copy_n(g.row(t).begin(), batch.features, out[t].row(k).begin());
    }
  }
  return out;
}

/// Single-sequence form of rnn_lag_jacobians; `sequence` is (tau x p).
inline Tensor2 rnn_input_gradients(const RecurrentNetwork& rnn, const Tensor2& sequence,
                                   std::size_t output_step,
                                   const OutputSelector& selector = OutputSelector::output(0)) {
  return rnn_lag_jacobians(rnn, SequenceBatch::from_sequence(sequence), output_step, selector)
      .front();
}

// ---------------------------------------------------------------------------
// Parameter gradients.

namespace detail {

inline GradientTape::NodeId record_loss(GradientTape& tape, GradientTape::NodeId prediction,
                                        const Targets& targets, LossKind loss) {
  if (loss == LossKind::mse) return tape.mse(prediction, targets.values);
  return tape.cross_entropy(prediction, targets.labels);
}

inline GradientTape::NodeId add_l1(GradientTape& tape, GradientTape::NodeId total,
                                   const std::vector<GradientTape::NodeId>& params,
                                   const std::vector<bool>& is_weight, double l1_weight) {
  if (l1_weight == 0.0) return total;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (is_weight[i]) total = tape.add(total, tape.l1_penalty(params[i], l1_weight));
  }
  return total;
}

inline LossGradients collect(const GradientTape& tape, GradientTape::NodeId total,
                             const BoundParameters& bound) {
  LossGradients out;
  out.loss = tape.value(total).values[0];
  for (auto id : bound.nodes) out.gradients.push_back(tape.gradient(id).values);
  return out;
}

inline std::vector<bool> weight_mask(const Network& net) {
  std::vector<bool> m;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    m.push_back(true);
    m.push_back(false);
  }
  return m;
}

}  // namespace detail

/// Mean loss over the batch (plus l1_weight * sum |W| over weight matrices)
/// and its gradient w.r.t. every weight and bias.
inline LossGradients parameter_gradients(const Network& net, const Tensor2& batch,
                                         const Targets& targets, LossKind loss,
                                         double l1_weight = 0.0) {
  check_batch_width(net, batch);
  if (loss == LossKind::mse &&
      (targets.values.rows != batch.rows || targets.values.cols != net.output_width())) {
    throw ShapeError("targets " + targets.values.shape() + " do not match outputs " +
                     shape_string(batch.rows, net.output_width()));
  }
  if (loss == LossKind::cross_entropy && !net.is_classifier()) {
    throw ConfigError("cross-entropy needs a softmax output layer");
  }
  GradientTape tape;
  BoundParameters bound;
  const auto out = record_network(tape, net, tape.constant(batch), true, &bound);
  auto total = detail::record_loss(tape, out, targets, loss);
  total = detail::add_l1(tape, total, bound.nodes, detail::weight_mask(net), l1_weight);
  tape.backward(total);
  return detail::collect(tape, total, bound);
}

/// Recurrent variant. many_to_one compares the last-step output with one
/// target per sequence; many_to_many averages over all T * tau step outputs.
inline LossGradients parameter_gradients(const RecurrentNetwork& rnn, const SequenceBatch& batch,
                                         LossKind loss, double l1_weight = 0.0) {
  GradientTape tape;
  const auto trace = record_recurrent(tape, rnn, batch, true, false);
  const std::size_t width = rnn.output_width();
  const bool per_step = rnn.mode == SequenceMode::many_to_many;
  const std::size_t want = per_step ? batch.count * batch.length : batch.count;
  if (batch.targets.size() != want) {
    throw ShapeError("sequence batch has " + std::to_string(batch.targets.size()) +
                     " targets, expected " + std::to_string(want));
  }
  if (loss == LossKind::mse && width != 1) {
    throw ShapeError("recurrent mse training supports a single output");
  }
  auto target_for = [&](std::size_t s) {
    Targets tg;
    if (loss == LossKind::mse) tg.values = Tensor2(batch.count, 1);
    for (std::size_t t = 0; t < batch.count; ++t) {
      const double v = per_step ? batch.targets[t * batch.length + s] : batch.targets[t];
      if (loss == LossKind::mse) tg.values(t, 0) = v;
      else tg.labels.push_back(static_cast<std::size_t>(v));
    }
    return tg;
  };
  GradientTape::NodeId total = GradientTape::kNone;
  if (!per_step) {
    total = detail::record_loss(tape, trace.step_outputs.back(), target_for(batch.length - 1),
                                loss);
  } else {
    // Mean over steps of per-step means equals the mean over all T * tau outputs.
    for (std::size_t s = 0; s < batch.length; ++s) {
      const auto ls = detail::record_loss(tape, trace.step_outputs[s], target_for(s), loss);
      total = total == GradientTape::kNone ? ls : tape.add(total, ls);
    }
    auto scaled = tape.constant(Tensor2(1, 1, 1.0 / static_cast<double>(batch.length)));
    // Scale by 1/tau through a 1x1 affine map.
    total = tape.affine(total, scaled);
  }
  std::vector<bool> mask{true, true, false};
  for (bool b : detail::weight_mask(rnn.head)) mask.push_back(b);
  total = detail::add_l1(tape, total, trace.parameters.nodes, mask, l1_weight);
  tape.backward(total);
  return detail::collect(tape, total, trace.parameters);
}

// ---------------------------------------------------------------------------

/// Central differences (f(x + h e_j) - f(x - h e_j)) / 2h for every coordinate.
template <class F>
std::vector<double> finite_difference_gradient(F&& f, std::span<const double> x, double step) {
  if (!(step > 0.0)) throw ConfigError("finite-difference step must be > 0");
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double orig = probe[j];
    probe[j] = orig + step;
    const double up = f(std::span<const double>(probe));
    probe[j] = orig - step;
    const double down = f(std::span<const double>(probe));
    probe[j] = orig;
    g[j] = (up - down) / (2.0 * step);
  }
  return g;
}

}  // namespace nnsens
