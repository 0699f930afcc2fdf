#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "nnsens/nnsens.hpp"

namespace testutil {

inline nnsens::Network linear_unit(std::vector<double> w, double b = 0.0) {
  nnsens::Network net;
  const std::size_t p = w.size();
  net.layers.push_back({nnsens::Tensor2(1, p, std::move(w)), {b}, nnsens::Activation::linear});
  return net;
}

inline nnsens::Network random_net(std::uint64_t seed, std::size_t p, std::vector<std::size_t> widths,
                                  std::vector<nnsens::Activation> acts) {
  nnsens::ModelSpec spec;
  spec.input_width = p;
  spec.widths = std::move(widths);
  spec.activations = std::move(acts);
  spec.seed = seed;
  nnsens::Network net = nnsens::build_mlp(spec);
  std::mt19937_64 rng(seed + 77);
  std::normal_distribution<double> n(0.0, 0.2);
  for (auto& l : net.layers) {
    for (double& b : l.bias) b = n(rng);
  }
  return net;
}

inline nnsens::Tensor2 random_matrix(std::uint64_t seed, std::size_t rows, std::size_t cols) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  nnsens::Tensor2 t(rows, cols);
  for (double& v : t.values) v = n(rng);
  return t;
}

/// Scalar Elman cell h_s = a h_{s-1} + w x_s, y = h (identity head).
inline nnsens::RecurrentNetwork linear_recurrence(double a, double w, std::size_t tau,
                                                  nnsens::SequenceMode mode = nnsens::SequenceMode::many_to_one) {
  nnsens::RecurrentNetwork r;
  r.input_weight = nnsens::Tensor2(1, 1, w);
  r.recurrent_weight = nnsens::Tensor2(1, 1, a);
  r.hidden_bias = {0.0};
  r.hidden_activation = nnsens::Activation::linear;
  r.head = linear_unit({1.0});
  r.mode = mode;
  r.tau = tau;
  return r;
}

inline nnsens::RecurrentNetwork random_rnn(std::uint64_t seed, std::size_t p, std::size_t hidden,
                                           std::size_t tau, nnsens::SequenceMode mode,
                                           std::size_t outputs = 1) {
  nnsens::ModelSpec spec;
  spec.architecture = nnsens::Architecture::rnn;
  spec.input_width = p;
  spec.hidden_width = hidden;
  spec.hidden_activation = nnsens::Activation::tanh;
  spec.widths = {outputs};
  spec.activations = {outputs > 1 ? nnsens::Activation::softmax : nnsens::Activation::linear};
  spec.mode = mode;
  spec.tau = tau;
  spec.seed = seed;
  return nnsens::build_rnn(spec);
}

inline nnsens::SequenceBatch random_sequences(std::uint64_t seed, std::size_t count, std::size_t tau,
                                              std::size_t p) {
  nnsens::SequenceBatch b(count, tau, p);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  for (double& v : b.values) v = n(rng);
  return b;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12});
}

}  // namespace testutil
