#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "nnsens/models.hpp"
#include "nnsens/tensor.hpp"

namespace nnsens {

/// T sequences of tau steps with p features each, stored [t][step][feature].
/// Step 0 is the oldest observation of a window, step tau-1 the newest.
struct SequenceBatch {
  std::size_t count = 0;     // T
  std::size_t length = 0;    // tau
  std::size_t features = 0;  // p
  std::vector<double> values;
  /// T entries (many_to_one) or T * tau entries laid out [t][step] (many_to_many).
  std::vector<double> targets;
  SequenceMode target_mode = SequenceMode::many_to_one;

  SequenceBatch() = default;
  SequenceBatch(std::size_t t, std::size_t tau, std::size_t p)
      : count(t), length(tau), features(p), values(t * tau * p, 0.0) {}

  double& at(std::size_t t, std::size_t step, std::size_t j) {
    return values[(t * length + step) * features + j];
  }
  double at(std::size_t t, std::size_t step, std::size_t j) const {
    return values[(t * length + step) * features + j];
  }

  void validate() const {
    if (values.size() != count * length * features) {
      throw ShapeError("sequence batch holds " + std::to_string(values.size()) +
                       " values, expected " + std::to_string(count * length * features));
    }
    const std::size_t want = target_mode == SequenceMode::many_to_one ? count : count * length;
    if (!targets.empty() && targets.size() != want) {
      throw ShapeError("sequence batch holds " + std::to_string(targets.size()) +
                       " targets, expected " + std::to_string(want));
    }
  }

  /// (T x p) slice of one time step across all sequences.
  Tensor2 step(std::size_t s) const {
    Tensor2 out(count, features);
    for (std::size_t t = 0; t < count; ++t) {
      for (std::size_t j = 0; j < features; ++j) out(t, j) = at(t, s, j);
    }
    return out;
  }

  /// (tau x p) view of one sequence.
  Tensor2 sequence(std::size_t t) const {
    Tensor2 out(length, features);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(t * length * features),
                length * features, out.values.begin());
    return out;
  }

  SequenceBatch subset(std::span<const std::size_t> indices) const {
    SequenceBatch out(indices.size(), length, features);
    out.target_mode = target_mode;
    const std::size_t block = length * features;
    const std::size_t tblock = target_mode == SequenceMode::many_to_one ? 1 : length;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(indices[i] * block), block,
                  out.values.begin() + static_cast<std::ptrdiff_t>(i * block));
      if (!targets.empty()) {
        for (std::size_t k = 0; k < tblock; ++k) {
          out.targets.push_back(targets[indices[i] * tblock + k]);
        }
      }
    }
    return out;
  }

  static SequenceBatch from_sequence(const Tensor2& seq) {
    SequenceBatch out(1, seq.rows, seq.cols);
    out.values = seq.values;
    return out;
  }
};

}  // namespace nnsens
