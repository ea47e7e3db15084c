#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "zsvqa/common.hpp"
#include "zsvqa/features.hpp"

namespace zsvqa {

/// View of one optimizer tensor (weight matrix, bias, or embedding table)
/// living inside the model. Column-major, contiguous.
struct ParamSlot {
  std::string name;
  double* data = nullptr;
  Eigen::Index rows = 0, cols = 0;
  double relative_lr = 1.0;

  Eigen::Index size() const { return rows * cols; }
  Eigen::Map<const Mat> view() const { return {data, rows, cols}; }
  Eigen::Map<Mat> mutable_view() { return {data, rows, cols}; }
};

enum class Op {
  input,
  embed,
  matvec,
  add_bias,
  relu,
  sigmoid,
  hadamard,
  concat,
  abs_val,
  relu_of_diff,
  square,
  mean,
  bce
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::embed: return "embed";
    case Op::matvec: return "matvec";
    case Op::add_bias: return "add_bias";
    case Op::relu: return "relu";
    case Op::sigmoid: return "sigmoid";
    case Op::hadamard: return "hadamard";
    case Op::concat: return "concat";
    case Op::abs_val: return "abs";
    case Op::relu_of_diff: return "relu_of_diff";
    case Op::square: return "square";
    case Op::mean: return "mean";
    case Op::bce: return "bce";
  }
  return "?";
}

inline constexpr double kBceClampLo = 1e-12;
inline constexpr double kBceClampHi = 1.0 - 1e-12;

/// Reverse-mode tape over dense vectors. Nodes are appended in topological
/// order; forward() recomputes every cached value from the current slot
/// contents, so parameters can be perturbed in place between passes.
class Graph {
 public:
  struct Node {
    Op op;
    int a = -1, b = -1;
    std::vector<int> parents;      // concat / mean
    int slot = -1;                 // embed / matvec / add_bias
    std::vector<EmbedTerm> terms;  // embed
    double target = 0.0;           // bce label
    Eigen::Index dim = 0;
    Vec value;
    Vec grad;
  };

  int add_slot(ParamSlot slot) {
    slots_.push_back(std::move(slot));
    slot_grads_.emplace_back(Mat::Zero(slots_.back().rows,
                                       slots_.back().cols));
    return static_cast<int>(slots_.size()) - 1;
  }

  const std::vector<ParamSlot>& slots() const { return slots_; }

  int input(Vec v) {
    if (v.size() == 0) throw ConfigError("input node must be non-empty");
    Node n{Op::input};
    n.dim = v.size();
    n.value = std::move(v);
    return push(std::move(n));
  }

  /// Linear combination of slot columns: sum of coeff * column.
  int embed(int slot, std::vector<EmbedTerm> terms) {
    check_slot(slot);
    Node n{Op::embed};
    n.slot = slot;
    n.dim = slots_[slot].rows;
    for (const auto& [col, coeff] : terms) {
      (void)coeff;
      if (col < 0 || col >= slots_[slot].cols)
        throw NumericError("embed column out of range for slot " +
                           slots_[slot].name);
    }
    n.terms = std::move(terms);
    return push(std::move(n));
  }

  int matvec(int slot, int x) {
    check_slot(slot);
    check_node(x);
    if (slots_[slot].cols != nodes_[x].dim)
      throw NumericError(shape_msg(Op::matvec, slots_[slot].name + " has " +
                                                    std::to_string(
                                                        slots_[slot].cols) +
                                                    " columns, input has dim " +
                                                    std::to_string(
                                                        nodes_[x].dim)));
    Node n{Op::matvec};
    n.slot = slot;
    n.a = x;
    n.dim = slots_[slot].rows;
    return push(std::move(n));
  }

  int add_bias(int x, int slot) {
    check_slot(slot);
    check_node(x);
    if (slots_[slot].cols != 1 || slots_[slot].rows != nodes_[x].dim)
      throw NumericError(shape_msg(Op::add_bias,
                                   "bias " + slots_[slot].name +
                                       " does not match input dim " +
                                       std::to_string(nodes_[x].dim)));
    Node n{Op::add_bias};
    n.slot = slot;
    n.a = x;
    n.dim = nodes_[x].dim;
    return push(std::move(n));
  }

  int relu(int x) { return unary(Op::relu, x); }
  int sigmoid(int x) { return unary(Op::sigmoid, x); }
  int abs(int x) { return unary(Op::abs_val, x); }
  int square(int x) { return unary(Op::square, x); }

  int hadamard(int x, int y) { return binary(Op::hadamard, x, y); }
  /// max(0, x - y), elementwise.
  int relu_of_diff(int x, int y) { return binary(Op::relu_of_diff, x, y); }

  int concat(const std::vector<int>& parts) {
    if (parts.empty()) throw ConfigError("concat of nothing");
    if (parts.size() == 1) return parts[0];
    Node n{Op::concat};
    n.parents = parts;
    for (int p : parts) {
      check_node(p);
      n.dim += nodes_[p].dim;
    }
    return push(std::move(n));
  }

  /// Scalar binary cross-entropy of a length-1 score node against label y.
  int bce(int s, double y) {
    check_node(s);
    if (nodes_[s].dim != 1)
      throw NumericError(shape_msg(Op::bce, "score node must have dim 1"));
    Node n{Op::bce};
    n.a = s;
    n.target = y;
    n.dim = 1;
    return push(std::move(n));
  }

  /// Scalar mean of scalar nodes.
  int mean(const std::vector<int>& parts) {
    if (parts.empty()) throw ConfigError("mean of nothing");
    Node n{Op::mean};
    n.parents = parts;
    for (int p : parts) {
      check_node(p);
      if (nodes_[p].dim != 1)
        throw NumericError(shape_msg(Op::mean, "operands must have dim 1"));
    }
    n.dim = 1;
    return push(std::move(n));
  }

  /// Recomputes every cached value in order; returns the last node's first
  /// entry (the loss for training graphs).
  double forward() {
    if (nodes_.empty()) throw StateError("forward on empty graph");
    for (Node& n : nodes_) {
      switch (n.op) {
        case Op::input:
          break;
        case Op::embed: {
          n.value.setZero();
          auto W = slots_[n.slot].view();
          for (const auto& [col, coeff] : n.terms)
            n.value += coeff * W.col(col);
          break;
        }
        case Op::matvec:
          n.value.noalias() = slots_[n.slot].view() * nodes_[n.a].value;
          break;
        case Op::add_bias:
          n.value = nodes_[n.a].value + slots_[n.slot].view().col(0);
          break;
        case Op::relu:
          n.value = nodes_[n.a].value.cwiseMax(0.0);
          break;
        case Op::sigmoid:
          n.value = (1.0 + (-nodes_[n.a].value.array()).exp()).inverse();
          break;
        case Op::hadamard:
          n.value = nodes_[n.a].value.cwiseProduct(nodes_[n.b].value);
          break;
        case Op::concat: {
          Eigen::Index at = 0;
          for (int p : n.parents) {
            n.value.segment(at, nodes_[p].dim) = nodes_[p].value;
            at += nodes_[p].dim;
          }
          break;
        }
        case Op::abs_val:
          n.value = nodes_[n.a].value.cwiseAbs();
          break;
        case Op::relu_of_diff:
          n.value = (nodes_[n.a].value - nodes_[n.b].value).cwiseMax(0.0);
          break;
        case Op::square:
          n.value = nodes_[n.a].value.cwiseProduct(nodes_[n.a].value);
          break;
        case Op::mean: {
          double sum = 0.0;
          for (int p : n.parents) sum += nodes_[p].value[0];
          n.value[0] = sum / static_cast<double>(n.parents.size());
          break;
        }
        case Op::bce: {
          double s = clamp_score(nodes_[n.a].value[0]);
          n.value[0] =
              -(n.target * std::log(s) + (1.0 - n.target) * std::log1p(-s));
          break;
        }
      }
      if (!n.value.allFinite())
        throw NumericError("non-finite value at node " + describe(n));
    }
    forward_done_ = true;
    return nodes_.back().value[0];
  }

  void backward(double seed = 1.0) {
    if (!forward_done_)
      throw StateError("backward called before forward");
    for (Node& n : nodes_) n.grad.setZero();
    for (Mat& g : slot_grads_) g.setZero();
    nodes_.back().grad.setConstant(seed);

    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node& n = *it;
      switch (n.op) {
        case Op::input:
          break;
        case Op::embed: {
          Mat& G = slot_grads_[n.slot];
          for (const auto& [col, coeff] : n.terms)
            G.col(col) += coeff * n.grad;
          break;
        }
        case Op::matvec:
          slot_grads_[n.slot].noalias() +=
              n.grad * nodes_[n.a].value.transpose();
          nodes_[n.a].grad.noalias() +=
              slots_[n.slot].view().transpose() * n.grad;
          break;
        case Op::add_bias:
          nodes_[n.a].grad += n.grad;
          slot_grads_[n.slot].col(0) += n.grad;
          break;
        case Op::relu:
          nodes_[n.a].grad.array() +=
              (nodes_[n.a].value.array() > 0.0).cast<double>() *
              n.grad.array();
          break;
        case Op::sigmoid:
          nodes_[n.a].grad.array() +=
              n.grad.array() * n.value.array() * (1.0 - n.value.array());
          break;
        case Op::hadamard:
          nodes_[n.a].grad.array() +=
              n.grad.array() * nodes_[n.b].value.array();
          nodes_[n.b].grad.array() +=
              n.grad.array() * nodes_[n.a].value.array();
          break;
        case Op::concat: {
          Eigen::Index at = 0;
          for (int p : n.parents) {
            nodes_[p].grad += n.grad.segment(at, nodes_[p].dim);
            at += nodes_[p].dim;
          }
          break;
        }
        case Op::abs_val:
          nodes_[n.a].grad.array() +=
              n.grad.array() * nodes_[n.a].value.array().sign();
          break;
        case Op::relu_of_diff: {
          Eigen::ArrayXd mask =
              ((nodes_[n.a].value - nodes_[n.b].value).array() > 0.0)
                  .cast<double>();
          nodes_[n.a].grad.array() += mask * n.grad.array();
          nodes_[n.b].grad.array() -= mask * n.grad.array();
          break;
        }
        case Op::square:
          nodes_[n.a].grad.array() +=
              2.0 * nodes_[n.a].value.array() * n.grad.array();
          break;
        case Op::mean: {
          double share =
              n.grad[0] / static_cast<double>(n.parents.size());
          for (int p : n.parents) nodes_[p].grad[0] += share;
          break;
        }
        case Op::bce: {
          double raw = nodes_[n.a].value[0];
          if (raw > kBceClampLo && raw < kBceClampHi) {
            double s = raw;
            nodes_[n.a].grad[0] +=
                n.grad[0] * (s - n.target) / (s * (1.0 - s));
          }
          break;
        }
      }
      if (!n.grad.allFinite())
        throw NumericError("non-finite gradient at node " + describe(n));
    }
  }

  double value(int node) const { return nodes_.at(node).value[0]; }
  const Vec& node_value(int node) const { return nodes_.at(node).value; }
  const Vec& node_grad(int node) const { return nodes_.at(node).grad; }
  const Mat& slot_grad(int slot) const { return slot_grads_.at(slot); }
  std::size_t size() const { return nodes_.size(); }

  /// Smallest distance of any relu / abs / relu-of-diff pre-activation from
  /// its kink; used by gradient checks to reject non-differentiable points.
  /// Exact zeros at abs / relu-of-diff inputs are skipped: they arise from
  /// upstream relu clipping, where the composite is locally flat and central
  /// differences agree with the subgradient.
  double min_kink_distance() const {
    if (!forward_done_) throw StateError("forward required first");
    double dist = std::numeric_limits<double>::infinity();
    auto nonzero_min = [&dist](const Vec& v) {
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        double a = std::abs(v[i]);
        if (a != 0.0) dist = std::min(dist, a);
      }
    };
    for (const Node& n : nodes_) {
      if (n.op == Op::relu) {
        dist = std::min(dist, nodes_[n.a].value.cwiseAbs().minCoeff());
      } else if (n.op == Op::abs_val) {
        nonzero_min(nodes_[n.a].value);
      } else if (n.op == Op::relu_of_diff) {
        nonzero_min(nodes_[n.a].value - nodes_[n.b].value);
      }
    }
    return dist;
  }

 private:
  static double clamp_score(double s) {
    return std::min(kBceClampHi, std::max(kBceClampLo, s));
  }

  int unary(Op op, int x) {
    check_node(x);
    Node n{op};
    n.a = x;
    n.dim = nodes_[x].dim;
    return push(std::move(n));
  }

  int binary(Op op, int x, int y) {
    check_node(x);
    check_node(y);
    if (nodes_[x].dim != nodes_[y].dim)
      throw NumericError(shape_msg(op, "operand dims " +
                                           std::to_string(nodes_[x].dim) +
                                           " vs " +
                                           std::to_string(nodes_[y].dim)));
    Node n{op};
    n.a = x;
    n.b = y;
    n.dim = nodes_[x].dim;
    return push(std::move(n));
  }

  int push(Node n) {
    if (n.op != Op::input) n.value = Vec::Zero(n.dim);
    n.grad = Vec::Zero(n.dim);
    nodes_.push_back(std::move(n));
    forward_done_ = false;
    return static_cast<int>(nodes_.size()) - 1;
  }

  void check_node(int x) const {
    if (x < 0 || x >= static_cast<int>(nodes_.size()))
      throw StateError("node index out of range");
  }
  void check_slot(int s) const {
    if (s < 0 || s >= static_cast<int>(slots_.size()))
      throw StateError("slot index out of range");
  }
  std::string describe(const Node& n) const {
    return std::to_string(&n - nodes_.data()) + " (" + op_name(n.op) + ")";
  }
  std::string shape_msg(Op op, const std::string& detail) const {
    return std::string("shape mismatch at node ") +
           std::to_string(nodes_.size()) + " (" + op_name(op) + "): " + detail;
  }

  std::vector<Node> nodes_;
  std::vector<ParamSlot> slots_;
  std::vector<Mat> slot_grads_;
  bool forward_done_ = false;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // slot name + entry of the worst entry
};

/// Central-difference verification of every slot entry. The graph's
/// parameters are perturbed in place and restored.
inline GradCheckResult grad_check(Graph& graph, double eps = 1e-5) {
  graph.forward();
  graph.backward(1.0);
  std::vector<Mat> analytic;
  analytic.reserve(graph.slots().size());
  for (std::size_t i = 0; i < graph.slots().size(); ++i)
    analytic.push_back(graph.slot_grad(static_cast<int>(i)));

  GradCheckResult result;
  for (std::size_t si = 0; si < graph.slots().size(); ++si) {
    const ParamSlot& slot = graph.slots()[si];
    for (Eigen::Index i = 0; i < slot.size(); ++i) {
      double saved = slot.data[i];
      slot.data[i] = saved + eps;
      double up = graph.forward();
      slot.data[i] = saved - eps;
      double down = graph.forward();
      slot.data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("non-finite value while perturbing " + slot.name);
      double numeric = (up - down) / (2.0 * eps);
      double a = analytic[si].data()[i];
      double rel =
          std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst = slot.name + "[" + std::to_string(i) + "]";
      }
    }
  }
  graph.forward();  // leave cached values consistent with restored params
  return result;
}

}  // namespace zsvqa
