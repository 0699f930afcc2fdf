#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "nnsens/tensor.hpp"

namespace nnsens {

/// Dense layer computing activation(x W^T + b); W is (out x in).
struct DenseLayer {
  Tensor2 weight;
  std::vector<double> bias;
  Activation activation = Activation::linear;

  std::size_t input_width() const { return weight.cols; }
  std::size_t output_width() const { return weight.rows; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Feed-forward network over vector inputs.
struct Network {
  std::vector<DenseLayer> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().input_width(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().output_width(); }

  /// Throws ShapeError/ConfigError if widths do not chain or softmax is not last.
  void validate() const {
    if (layers.empty()) throw ConfigError("network has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const DenseLayer& layer = layers[l];
      if (layer.weight.rows == 0 || layer.weight.cols == 0) {
        throw ShapeError("layer " + std::to_string(l) + " has empty weight " +
                         layer.weight.shape());
      }
      if (layer.bias.size() != layer.weight.rows) {
        throw ShapeError("layer " + std::to_string(l) + " bias length " +
                         std::to_string(layer.bias.size()) + " != " +
                         std::to_string(layer.weight.rows));
      }
      if (l > 0 && layers[l - 1].output_width() != layer.input_width()) {
        throw ShapeError("layer " + std::to_string(l) + " expects width " +
                         std::to_string(layer.input_width()) + " but previous layer emits " +
                         std::to_string(layers[l - 1].output_width()));
      }
      if (layer.activation == Activation::softmax && l + 1 != layers.size()) {
        throw ConfigError("softmax may only be the final activation");
      }
    }
  }

  bool is_classifier() const {
    return !layers.empty() && layers.back().activation == Activation::softmax;
  }

  friend bool operator==(const Network&, const Network&) = default;
};

enum class SequenceMode { many_to_one, many_to_many };

inline std::string to_string(SequenceMode m) {
  return m == SequenceMode::many_to_one ? "many_to_one" : "many_to_many";
}

inline SequenceMode parse_sequence_mode(const std::string& s) {
  if (s == "many_to_one") return SequenceMode::many_to_one;
  if (s == "many_to_many") return SequenceMode::many_to_many;
  throw ConfigError("unknown sequence mode '" + s + "'");
}

/// Single-layer Elman recurrence with an output head:
///   h_s = act(W_in x_s + W_rec h_{s-1} + b),  h_0 = 0,  y_s = head(h_s).
/// many_to_one models predict from h at the last step; many_to_many at every step.
struct RecurrentNetwork {
  Tensor2 input_weight;      // hidden x p
  Tensor2 recurrent_weight;  // hidden x hidden
  std::vector<double> hidden_bias;
  Activation hidden_activation = Activation::tanh;
  Network head;
  SequenceMode mode = SequenceMode::many_to_one;
  std::size_t tau = 1;

  std::size_t input_width() const { return input_weight.cols; }
  std::size_t hidden_width() const { return input_weight.rows; }
  std::size_t output_width() const { return head.output_width(); }

  void validate() const {
    if (tau == 0) throw ConfigError("recurrent network needs tau >= 1");
    const std::size_t h = input_weight.rows;
    if (h == 0 || input_weight.cols == 0) {
      throw ShapeError("recurrent input weight is empty " + input_weight.shape());
    }
    if (recurrent_weight.rows != h || recurrent_weight.cols != h) {
      throw ShapeError("recurrent weight " + recurrent_weight.shape() + " must be " +
                       shape_string(h, h));
    }
    if (hidden_bias.size() != h) throw ShapeError("hidden bias length mismatch");
    if (hidden_activation == Activation::softmax) {
      throw ConfigError("softmax is not a valid hidden activation");
    }
    head.validate();
    if (head.input_width() != h) {
      throw ShapeError("output head expects width " + std::to_string(head.input_width()) +
                       " but hidden width is " + std::to_string(h));
    }
  }

  friend bool operator==(const RecurrentNetwork&, const RecurrentNetwork&) = default;
};

enum class Architecture { mlp, rnn };

/// Everything needed to rebuild an untrained model.
struct ModelSpec {
  Architecture architecture = Architecture::mlp;
  std::size_t input_width = 0;
  /// Output widths of the dense layers (for rnn: the head layers).
  std::vector<std::size_t> widths;
  std::vector<Activation> activations;
  std::size_t hidden_width = 0;  // rnn only
  Activation hidden_activation = Activation::tanh;
  SequenceMode mode = SequenceMode::many_to_one;
  std::size_t tau = 1;
  std::uint64_t seed = 0;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;
};

namespace detail {

inline void glorot_fill(Tensor2& w, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(w.rows + w.cols));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : w.values) v = dist(rng);
}

inline Network build_dense_stack(std::size_t input_width, const std::vector<std::size_t>& widths,
                                 const std::vector<Activation>& activations,
                                 std::mt19937_64& rng) {
  if (input_width == 0) throw ConfigError("input width must be >= 1");
  if (widths.empty()) throw ConfigError("at least one layer width is required");
  if (widths.size() != activations.size()) {
    throw ConfigError("got " + std::to_string(widths.size()) + " widths but " +
                      std::to_string(activations.size()) + " activations");
  }
  Network net;
  std::size_t fan_in = input_width;
  for (std::size_t l = 0; l < widths.size(); ++l) {
    if (widths[l] == 0) throw ConfigError("layer widths must be >= 1");
    DenseLayer layer{Tensor2(widths[l], fan_in), std::vector<double>(widths[l], 0.0),
                     activations[l]};
    glorot_fill(layer.weight, rng);
    net.layers.push_back(std::move(layer));
    fan_in = widths[l];
  }
  net.validate();
  return net;
}

}  // namespace detail

/// Seeded Glorot-uniform initialisation; biases start at zero.
inline Network build_mlp(const ModelSpec& spec) {
  if (spec.architecture != Architecture::mlp) throw ConfigError("build_mlp needs an mlp spec");
  std::mt19937_64 rng(spec.seed);
  return detail::build_dense_stack(spec.input_width, spec.widths, spec.activations, rng);
}

inline RecurrentNetwork build_rnn(const ModelSpec& spec) {
  if (spec.architecture != Architecture::rnn) throw ConfigError("build_rnn needs an rnn spec");
  if (spec.tau == 0) throw ConfigError("sequence length tau must be >= 1");
  if (spec.hidden_width == 0) throw ConfigError("hidden width must be >= 1");
  if (spec.input_width == 0) throw ConfigError("input width must be >= 1");
  if (spec.hidden_activation == Activation::softmax) {
    throw ConfigError("softmax is not a valid hidden activation");
  }
  std::mt19937_64 rng(spec.seed);
  RecurrentNetwork rnn;
  rnn.input_weight = Tensor2(spec.hidden_width, spec.input_width);
  rnn.recurrent_weight = Tensor2(spec.hidden_width, spec.hidden_width);
  rnn.hidden_bias.assign(spec.hidden_width, 0.0);
  rnn.hidden_activation = spec.hidden_activation;
  rnn.mode = spec.mode;
  rnn.tau = spec.tau;
  detail::glorot_fill(rnn.input_weight, rng);
  detail::glorot_fill(rnn.recurrent_weight, rng);
  rnn.head = detail::build_dense_stack(spec.hidden_width, spec.widths, spec.activations, rng);
  rnn.validate();
  return rnn;
}

}  // namespace nnsens
