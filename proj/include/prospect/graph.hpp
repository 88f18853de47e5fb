#pragma once

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "prospect/tensor.hpp"

namespace prospect {

template <typename Scalar>
class Graph;

// Lightweight handle to a node in a Graph.
template <typename Scalar>
struct Value {
  Graph<Scalar>* graph = nullptr;
  int id = -1;

  bool valid() const { return graph != nullptr && id >= 0; }
  const Tensor<Scalar>& tensor() const;
  const std::vector<int>& shape() const;
  Scalar scalar() const;
};

// Recorded computation tape. Nodes are appended in execution order, so the
// list is topologically sorted by construction. Each non-leaf node carries a
// recompute closure (re-runs the forward from its inputs; used by the finite
// difference checker) and a backprop closure (accumulates into input grads).
template <typename Scalar>
class Graph {
 public:
  using RecomputeFn = std::function<void(Graph&, int)>;
  using BackpropFn = std::function<void(Graph&, int)>;

  struct Node {
    std::string op;
    std::string name;
    std::vector<int> inputs;
    Tensor<Scalar> value;
    RecomputeFn recompute;
    BackpropFn backprop;
    bool trainable = false;
    // True when the node depends on a trainable leaf; backprop skips inputs
    // that never need a gradient.
    bool requires_grad = false;
  };

  Value<Scalar> leaf(Tensor<Scalar> v, std::string name = "", bool trainable = false) {
    Node n;
    n.op = "leaf";
    n.name = std::move(name);
    n.value = std::move(v);
    n.trainable = trainable;
    n.requires_grad = trainable;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Value<Scalar> record(std::string op, std::vector<int> inputs, Tensor<Scalar> value,
                       RecomputeFn recompute, BackpropFn backprop) {
    Node n;
    n.op = std::move(op);
    n.inputs = std::move(inputs);
    n.value = std::move(value);
    n.recompute = std::move(recompute);
    n.backprop = std::move(backprop);
    for (int in : n.inputs)
      n.requires_grad = n.requires_grad || nodes_[static_cast<std::size_t>(in)].requires_grad;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  int size() const { return static_cast<int>(nodes_.size()); }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  const Tensor<Scalar>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  Tensor<Scalar>& mutable_value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }

  bool wants_grad(int id) const {
    return nodes_[static_cast<std::size_t>(id)].requires_grad;
  }

  bool has_grad(int id) const {
    return id < static_cast<int>(grads_.size()) && !grads_[static_cast<std::size_t>(id)].data.empty();
  }

  // Gradient buffer for a node, allocated as zeros on first touch.
  Tensor<Scalar>& grad(int id) {
    if (static_cast<int>(grads_.size()) < size()) grads_.resize(static_cast<std::size_t>(size()));
    auto& g = grads_[static_cast<std::size_t>(id)];
    if (g.data.empty()) {
      g.shape = nodes_[static_cast<std::size_t>(id)].value.shape;
      g.data.assign(nodes_[static_cast<std::size_t>(id)].value.data.size(), Scalar(0));
    }
    return g;
  }

  // Reverse pass from a scalar loss. Gradients accumulate by summation over
  // uses; every node is visited at most once, in reverse recording order.
  void backward(Value<Scalar> loss) {
    if (loss.graph != this) throw ShapeError("backward: loss belongs to a different graph");
    if (value(loss.id).numel() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + shape_str(value(loss.id).shape));
    grads_.clear();
    grads_.resize(static_cast<std::size_t>(size()));
    grad(loss.id).data[0] = Scalar(1);
    for (int id = loss.id; id >= 0; --id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!has_grad(id) || !n.backprop || !n.requires_grad) continue;
      n.backprop(*this, id);
    }
  }

  // Gradients of the most recent backward pass for every trainable leaf,
  // keyed by leaf name.
  std::map<std::string, Tensor<Scalar>> parameter_gradients() {
    std::map<std::string, Tensor<Scalar>> out;
    for (int id = 0; id < size(); ++id) {
      const auto& n = nodes_[static_cast<std::size_t>(id)];
      if (!n.trainable) continue;
      out[n.name] = has_grad(id) ? grads_[static_cast<std::size_t>(id)]
                                 : Tensor<Scalar>(n.value.shape, Scalar(0));
    }
    return out;
  }

  // Re-runs every non-leaf forward in order. Leaf values may be edited in
  // place beforehand; downstream nodes then reflect the change.
  void recompute_all() {
    for (int id = 0; id < size(); ++id) {
      auto& n = nodes_[static_cast<std::size_t>(id)];
      if (n.recompute) n.recompute(*this, id);
    }
  }

  std::vector<int> trainable_ids() const {
    std::vector<int> ids;
    for (int id = 0; id < size(); ++id)
      if (nodes_[static_cast<std::size_t>(id)].trainable) ids.push_back(id);
    return ids;
  }

 private:
  // Deques so references handed out by node()/value()/grad() stay valid
  // while further nodes are recorded.
  std::deque<Node> nodes_;
  std::deque<Tensor<Scalar>> grads_;
};

template <typename Scalar>
const Tensor<Scalar>& Value<Scalar>::tensor() const {
  return graph->value(id);
}

template <typename Scalar>
const std::vector<int>& Value<Scalar>::shape() const {
  return graph->value(id).shape;
}

template <typename Scalar>
Scalar Value<Scalar>::scalar() const {
  const auto& t = graph->value(id);
  if (t.numel() != 1) throw ShapeError("scalar() on tensor of shape " + shape_str(t.shape));
  return t.data[0];
}

struct GradCheckEntry {
  std::string param;
  double max_rel_err = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;  // elements where the objective is not locally smooth
  bool pass = false;
};

struct GradCheckReport {
  double tolerance = 0.0;
  bool pass = true;
  std::vector<GradCheckEntry> entries;
};

// Central-difference check of backward() on a recorded double-precision
// graph. Relative error is |a-b| / max(|a|,|b|,1e-8).
//
// With filter_kinks set, elements whose central differences at step and
// step/2 disagree are excluded: there the objective has a kink (relu, |.|,
// min) inside the probed interval and finite differences are not a valid
// derivative oracle. At least 90% of each parameter must remain checked.
inline GradCheckReport grad_check(Graph<double>& g, Value<double> loss, double tolerance,
                                  double step = 1e-4, bool filter_kinks = false) {
  g.backward(loss);
  std::map<int, Tensor<double>> analytic;
  for (int id : g.trainable_ids())
    analytic[id] = g.has_grad(id) ? g.grad(id) : Tensor<double>(g.value(id).shape, 0.0);

  GradCheckReport report;
  report.tolerance = tolerance;
  for (int id : g.trainable_ids()) {
    GradCheckEntry entry;
    entry.param = g.node(id).name.empty() ? ("param#" + std::to_string(id)) : g.node(id).name;
    auto& theta = g.mutable_value(id);
    const auto& exact = analytic[id];
    auto probe = [&](std::size_t i, double h) {
      const double saved = theta.data[i];
      theta.data[i] = saved + h;
      g.recompute_all();
      const double up = g.value(loss.id).data[0];
      theta.data[i] = saved - h;
      g.recompute_all();
      const double down = g.value(loss.id).data[0];
      theta.data[i] = saved;
      return (up - down) / (2.0 * h);
    };
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double fd = probe(i, step);
      if (filter_kinks) {
        const double fd_half = probe(i, step / 2.0);
        if (std::fabs(fd - fd_half) > 1e-3 * std::max(std::fabs(fd), std::fabs(fd_half)) + 1e-12) {
          ++entry.skipped;
          continue;
        }
      }
      ++entry.checked;
      const double an = exact.data[i];
      const double denom = std::max({std::fabs(fd), std::fabs(an), 1e-8});
      entry.max_rel_err = std::max(entry.max_rel_err, std::fabs(fd - an) / denom);
    }
    g.recompute_all();
    entry.pass = entry.max_rel_err < tolerance &&
                 entry.checked >= 9 * static_cast<std::int64_t>(theta.data.size()) / 10;
    report.pass = report.pass && entry.pass;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace prospect
