#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "nnsens/tensor.hpp"

namespace nnsens {

/// Floor applied to probabilities inside the cross-entropy loss.
inline constexpr double kProbabilityFloor = 1e-12;

/// Records matrix-level primitive operations during a forward pass and
/// replays them in reverse to accumulate gradients.
///
/// Every node holds its forward value; nodes created with `variable()` (and
/// anything computed from them) also receive a gradient on `backward()`.
/// A tape may be replayed several times from different roots or seeds; each
/// call starts from cleared gradients.
class GradientTape {
 public:
  using NodeId = std::size_t;
  static constexpr NodeId kNone = std::numeric_limits<NodeId>::max();

  NodeId constant(Tensor2 value) { return push_node(std::move(value), false); }
  NodeId variable(Tensor2 value) { return push_node(std::move(value), true); }

  /// x W^T + b, with x (n x in), W (out x in), b (1 x out) or kNone.
  NodeId affine(NodeId x, NodeId w, NodeId b = kNone) {
    const Tensor2& xv = nodes_[x].value;
    const Tensor2& wv = nodes_[w].value;
    if (xv.cols != wv.cols) {
      throw ShapeError("affine: input " + xv.shape() + " incompatible with weight " +
                       wv.shape());
    }
    Tensor2 out(xv.rows, wv.rows);
    for (std::size_t i = 0; i < xv.rows; ++i) {
      const double* xr = xv.values.data() + i * xv.cols;
      for (std::size_t o = 0; o < wv.rows; ++o) {
        const double* wr = wv.values.data() + o * wv.cols;
        double acc = 0.0;
        for (std::size_t k = 0; k < xv.cols; ++k) acc += xr[k] * wr[k];
        out(i, o) = acc;
      }
    }
    if (b != kNone) {
      const Tensor2& bv = nodes_[b].value;
      if (bv.rows != 1 || bv.cols != wv.rows) {
        throw ShapeError("affine: bias " + bv.shape() + " does not match " +
                         std::to_string(wv.rows) + " outputs");
      }
      for (std::size_t i = 0; i < out.rows; ++i) {
        for (std::size_t o = 0; o < out.cols; ++o) out(i, o) += bv.values[o];
      }
    }
    Op op;
    op.kind = OpKind::affine;
    op.a = x;
    op.b = w;
    op.c = b;
    return push_op(std::move(op), std::move(out));
  }

  NodeId add(NodeId a, NodeId b) {
    const Tensor2& av = nodes_[a].value;
    const Tensor2& bv = nodes_[b].value;
    if (av.rows != bv.rows || av.cols != bv.cols) {
      throw ShapeError("add: " + av.shape() + " vs " + bv.shape());
    }
    Tensor2 out = av;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += bv.values[i];
    Op op;
    op.kind = OpKind::add;
    op.a = a;
    op.b = b;
    return push_op(std::move(op), std::move(out));
  }

  /// Elementwise activation; softmax acts row by row.
  NodeId activate(NodeId x, Activation act) {
    Tensor2 out = nodes_[x].value;
    switch (act) {
      case Activation::linear:
        break;
      case Activation::relu:
        for (double& v : out.values) v = v > 0.0 ? v : 0.0;
        break;
      case Activation::tanh:
        for (double& v : out.values) v = std::tanh(v);
        break;
      case Activation::softmax:
        for (std::size_t i = 0; i < out.rows; ++i) {
          auto r = out.row(i);
          const double m = *std::max_element(r.begin(), r.end());
          double z = 0.0;
          for (double& v : r) {
            v = std::exp(v - m);
            z += v;
          }
          for (double& v : r) v /= z;
        }
        break;
    }
    Op op;
    op.kind = OpKind::activate;
    op.a = x;
    op.activation = act;
    return push_op(std::move(op), std::move(out));
  }

  /// Mean of squared differences over all entries; returns a 1 x 1 node.
  NodeId mse(NodeId prediction, Tensor2 target) {
    const Tensor2& pv = nodes_[prediction].value;
    if (pv.rows != target.rows || pv.cols != target.cols) {
      throw ShapeError("mse: prediction " + pv.shape() + " vs target " + target.shape());
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.values.size(); ++i) {
      const double d = pv.values[i] - target.values[i];
      acc += d * d;
    }
    Op op;
    op.kind = OpKind::mse;
    op.a = prediction;
    op.target = std::move(target);
    return push_op(std::move(op), Tensor2(1, 1, acc / static_cast<double>(pv.values.size())));
  }

  /// Mean negative log-probability of the labelled class; probabilities are
  /// floored at kProbabilityFloor. Returns a 1 x 1 node.
  NodeId cross_entropy(NodeId probabilities, std::vector<std::size_t> labels) {
    const Tensor2& pv = nodes_[probabilities].value;
    if (labels.size() != pv.rows) {
      throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                       std::to_string(pv.rows) + " rows");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < pv.rows; ++i) {
      if (labels[i] >= pv.cols) {
        throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) +
                         " out of range for " + std::to_string(pv.cols) + " classes");
      }
      acc -= std::log(std::max(pv(i, labels[i]), kProbabilityFloor));
    }
    Op op;
    op.kind = OpKind::cross_entropy;
    op.a = probabilities;
    op.labels = std::move(labels);
    return push_op(std::move(op), Tensor2(1, 1, acc / static_cast<double>(pv.rows)));
  }

  /// weight * sum |w|; the subgradient at 0 is 0. Returns a 1 x 1 node.
  NodeId l1_penalty(NodeId w, double weight) {
    double acc = 0.0;
    for (double v : nodes_[w].value.values) acc += std::abs(v);
    Op op;
    op.kind = OpKind::l1;
    op.a = w;
    op.scalar = weight;
    return push_op(std::move(op), Tensor2(1, 1, weight * acc));
  }

  const Tensor2& value(NodeId id) const { return nodes_.at(id).value; }

  /// Gradient of the last backward root w.r.t. `id`; zeros if the node did
  /// not receive any.
  Tensor2 gradient(NodeId id) const {
    const Node& n = nodes_.at(id);
    if (n.grad.empty()) return Tensor2(n.value.rows, n.value.cols);
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t op_count() const { return ops_.size(); }

  /// Op indices visited by the most recent backward(), in visiting order.
  const std::vector<std::size_t>& backward_trace() const { return trace_; }

  /// Seeds d(root) with `seed` (same shape as the root value) and propagates
  /// through every recorded op in reverse order of recording.
  void backward(NodeId root, const Tensor2& seed) {
    const Tensor2& rv = nodes_.at(root).value;
    if (seed.rows != rv.rows || seed.cols != rv.cols) {
      throw ShapeError("backward: seed " + seed.shape() + " vs root " + rv.shape());
    }
    for (Node& n : nodes_) n.grad = Tensor2();
    trace_.clear();
    nodes_[root].grad = seed;
    for (std::size_t k = ops_.size(); k-- > 0;) {
      trace_.push_back(k);
      const Op& op = ops_[k];
      const Tensor2& g = nodes_[op.out].grad;
      if (g.empty()) continue;
      propagate(op, g);
    }
  }

  /// backward() with a scalar root and seed 1.
  void backward(NodeId root) { backward(root, Tensor2(1, 1, 1.0)); }

 private:
  enum class OpKind { affine, add, activate, mse, cross_entropy, l1 };

  struct Node {
    Tensor2 value;
    Tensor2 grad;
    bool requires_grad = false;
  };

  struct Op {
    OpKind kind = OpKind::affine;
    NodeId a = kNone;
    NodeId b = kNone;
    NodeId c = kNone;
    NodeId out = kNone;
    Activation activation = Activation::linear;
    double scalar = 0.0;
    Tensor2 target;
    std::vector<std::size_t> labels;
  };

  NodeId push_node(Tensor2 value, bool requires_grad) {
    nodes_.push_back(Node{std::move(value), Tensor2(), requires_grad});
    return nodes_.size() - 1;
  }

  NodeId push_op(Op op, Tensor2 out) {
    const bool rg = wants(op.a) || wants(op.b) || wants(op.c);
    op.out = push_node(std::move(out), rg);
    ops_.push_back(std::move(op));
    return ops_.back().out;
  }

  bool wants(NodeId id) const { return id != kNone && nodes_[id].requires_grad; }

  Tensor2& grad_slot(NodeId id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor2(n.value.rows, n.value.cols);
    return n.grad;
  }

  void propagate(const Op& op, const Tensor2& g) {
    switch (op.kind) {
      case OpKind::affine: {
        const Tensor2& xv = nodes_[op.a].value;
        const Tensor2& wv = nodes_[op.b].value;
        if (wants(op.a)) {
          Tensor2& dx = grad_slot(op.a);
          for (std::size_t i = 0; i < g.rows; ++i) {
            double* dxr = dx.values.data() + i * dx.cols;
            for (std::size_t o = 0; o < g.cols; ++o) {
              const double go = g(i, o);
              if (go == 0.0) continue;
              const double* wr = wv.values.data() + o * wv.cols;
              for (std::size_t k = 0; k < wv.cols; ++k) dxr[k] += go * wr[k];
            }
          }
        }
        if (wants(op.b)) {
          Tensor2& dw = grad_slot(op.b);
          for (std::size_t i = 0; i < g.rows; ++i) {
            const double* xr = xv.values.data() + i * xv.cols;
            for (std::size_t o = 0; o < g.cols; ++o) {
              const double go = g(i, o);
              if (go == 0.0) continue;
              double* dwr = dw.values.data() + o * dw.cols;
              for (std::size_t k = 0; k < xv.cols; ++k) dwr[k] += go * xr[k];
            }
          }
        }
        if (op.c != kNone && wants(op.c)) {
          Tensor2& db = grad_slot(op.c);
          for (std::size_t i = 0; i < g.rows; ++i) {
            for (std::size_t o = 0; o < g.cols; ++o) db.values[o] += g(i, o);
          }
        }
        break;
      }
      case OpKind::add: {
        for (NodeId id : {op.a, op.b}) {
          if (!wants(id)) continue;
          Tensor2& d = grad_slot(id);
          for (std::size_t i = 0; i < g.values.size(); ++i) d.values[i] += g.values[i];
        }
        break;
      }
      case OpKind::activate: {
        if (!wants(op.a)) break;
        const Tensor2& pre = nodes_[op.a].value;
        const Tensor2& post = nodes_[op.out].value;
        Tensor2& d = grad_slot(op.a);
        switch (op.activation) {
          case Activation::linear:
            for (std::size_t i = 0; i < g.values.size(); ++i) d.values[i] += g.values[i];
            break;
          case Activation::relu:
            // Subgradient at exactly zero is zero.
            for (std::size_t i = 0; i < g.values.size(); ++i) {
              if (pre.values[i] > 0.0) d.values[i] += g.values[i];
            }
            break;
          case Activation::tanh:
            for (std::size_t i = 0; i < g.values.size(); ++i) {
              const double y = post.values[i];
              d.values[i] += g.values[i] * (1.0 - y * y);
            }
            break;
          case Activation::softmax:
            for (std::size_t i = 0; i < post.rows; ++i) {
              const auto y = post.row(i);
              const auto gy = g.row(i);
              double dot = 0.0;
              for (std::size_t c = 0; c < y.size(); ++c) dot += gy[c] * y[c];
              auto dr = d.row(i);
              for (std::size_t c = 0; c < y.size(); ++c) dr[c] += y[c] * (gy[c] - dot);
            }
            break;
        }
        break;
      }
      case OpKind::mse: {
        if (!wants(op.a)) break;
        const Tensor2& pv = nodes_[op.a].value;
        Tensor2& d = grad_slot(op.a);
        const double scale = 2.0 * g.values[0] / static_cast<double>(pv.values.size());
        for (std::size_t i = 0; i < pv.values.size(); ++i) {
          d.values[i] += scale * (pv.values[i] - op.target.values[i]);
        }
        break;
      }
      case OpKind::cross_entropy: {
        if (!wants(op.a)) break;
        const Tensor2& pv = nodes_[op.a].value;
        Tensor2& d = grad_slot(op.a);
        const double scale = g.values[0] / static_cast<double>(pv.rows);
        for (std::size_t i = 0; i < pv.rows; ++i) {
          const double p = pv(i, op.labels[i]);
          if (p > kProbabilityFloor) d(i, op.labels[i]) -= scale / p;
        }
        break;
      }
      case OpKind::l1: {
        if (!wants(op.a)) break;
        const Tensor2& wv = nodes_[op.a].value;
        Tensor2& d = grad_slot(op.a);
        const double scale = g.values[0] * op.scalar;
        for (std::size_t i = 0; i < wv.values.size(); ++i) {
          const double w = wv.values[i];
          if (w > 0.0) d.values[i] += scale;
          else if (w < 0.0) d.values[i] -= scale;
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Op> ops_;
  std::vector<std::size_t> trace_;
};

}  // namespace nnsens
