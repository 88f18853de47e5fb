#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "prospect/graph.hpp"
#include "prospect/ops.hpp"
#include "prospect/types.hpp"

namespace prospect {

constexpr double kProbFloor = 1e-12;

// ---------------------------------------------------------------------------
// Plain (host-side) costs. These are the reference forms; the graph builders
// below compute the same quantities differentiably.

// Mean absolute error over all scalars.
template <typename S>
double view_cost(const Tensor<S>& predicted, const Tensor<S>& target) {
  if (!predicted.same_shape(target))
    throw ShapeError("view_cost: shape mismatch " + shape_str(predicted.shape) + " vs " +
                     shape_str(target.shape));
  double acc = 0.0;
  for (std::int64_t i = 0; i < predicted.numel(); ++i)
    acc += std::fabs(static_cast<double>(predicted[i]) - static_cast<double>(target[i]));
  return acc / static_cast<double>(predicted.numel());
}

inline double view_cost(const std::vector<float>& predicted, const std::vector<float>& target) {
  return view_cost(Tensor<float>::from({static_cast<int>(predicted.size())}, predicted),
                   Tensor<float>::from({static_cast<int>(target.size())}, target));
}

// Cross entropy of a distribution against a hard target, probability floored.
inline double action_cost(const std::vector<double>& dist, int target) {
  if (target < 0 || target >= static_cast<int>(dist.size()))
    throw ShapeError("action_cost: target " + std::to_string(target) + " out of range");
  double sum = 0.0;
  for (double p : dist) {
    if (p < -1e-9) throw ShapeError("action_cost: negative probability");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-4) throw ShapeError("action_cost: distribution does not sum to 1");
  return -std::log(std::max(dist[static_cast<std::size_t>(target)], kProbFloor));
}

struct HypothesisCostBreakdown {
  std::map<std::string, double> per_view;  // image, state, gripper
  double action_ce = 0.0;
  double total = 0.0;
};

// Weighted sum of per-view MAE costs plus the action cross entropy.
inline HypothesisCostBreakdown hypothesis_cost(const Hypothesis& hyp, const Observation& target,
                                               int target_action, const ModelConfig& config) {
  HypothesisCostBreakdown out;
  out.per_view["image"] = view_cost(hyp.predicted.image, target.image);
  out.per_view["state"] = view_cost(hyp.predicted.state, target.state);
  out.per_view["gripper"] = std::fabs(static_cast<double>(hyp.predicted.gripper) -
                                      static_cast<double>(target.gripper));
  std::vector<double> dist(hyp.action_dist.begin(), hyp.action_dist.end());
  out.action_ce = action_cost(dist, target_action);
  out.total = config.w_action * out.action_ce + config.w_image * out.per_view["image"] +
              config.w_state * out.per_view["state"] + config.w_gripper * out.per_view["gripper"];
  return out;
}

// (1 - lambda) * min_i c_i + (lambda / N) * sum_i c_i.
inline double mhp_combine(const std::vector<double>& costs, double lambda) {
  if (costs.empty()) throw ShapeError("mhp_combine: empty cost list");
  double mn = costs[0], sum = 0.0;
  for (double c : costs) {
    mn = std::min(mn, c);
    sum += c;
  }
  return (1.0 - lambda) * mn + (lambda / static_cast<double>(costs.size())) * sum;
}

// Binary cross entropy against a 0/1 outcome label.
inline double value_loss(double pred, int label) {
  const double p = std::max(label == 1 ? pred : 1.0 - pred, kProbFloor);
  return -std::log(p);
}

// Cross entropy of the action prior against the expert's action. The caller
// guarantees the sample comes from a success episode.
inline double prior_loss(const std::vector<double>& prior, int expert_action) {
  return action_cost(prior, expert_action);
}

// ---------------------------------------------------------------------------
// Graph builders (batched; leading axis is the sample row).

// Per-row mean absolute error: pred and target (B, ...) -> (B,). Fused so the
// image costs do not materialise intermediate image-sized tensors.
template <typename S>
Value<S> mae_rows(Value<S> pred, Value<S> target) {
  Graph<S>& g = *pred.graph;
  const auto& pv = g.value(pred.id);
  const auto& tv = g.value(target.id);
  if (!pv.same_shape(tv))
    throw ShapeError("mae_rows: shape mismatch " + shape_str(pv.shape) + " vs " +
                     shape_str(tv.shape));
  if (pv.rank() < 2) throw ShapeError("mae_rows: expects rank >= 2, got " + shape_str(pv.shape));
  const int rows = pv.shape[0];
  const std::int64_t inner = pv.numel() / rows;
  auto run = [rows, inner](const Tensor<S>& p, const Tensor<S>& t, Tensor<S>& o) {
    for (int r = 0; r < rows; ++r) {
      const S* pp = p.ptr() + r * inner;
      const S* tp = t.ptr() + r * inner;
      S acc = S(0);
      for (std::int64_t i = 0; i < inner; ++i) acc += std::fabs(pp[i] - tp[i]);
      o[r] = acc / static_cast<S>(inner);
    }
  };
  Tensor<S> out({rows});
  run(pv, tv, out);
  auto recompute = [run](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    run(gr.value(in[0]), gr.value(in[1]), gr.mutable_value(id));
  };
  auto backprop = [rows, inner](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    const auto& go = gr.grad(id);
    const auto& p = gr.value(in[0]);
    const auto& t = gr.value(in[1]);
    const S inv = S(1) / static_cast<S>(inner);
    if (gr.wants_grad(in[0])) {
      auto& gp = gr.grad(in[0]);
      for (int r = 0; r < rows; ++r) {
        const S gr_row = go[r] * inv;
        for (std::int64_t i = 0; i < inner; ++i) {
          const S d = p[r * inner + i] - t[r * inner + i];
          if (d > S(0)) gp[r * inner + i] += gr_row;
          else if (d < S(0)) gp[r * inner + i] -= gr_row;
        }
      }
    }
    if (gr.wants_grad(in[1])) {
      auto& gt = gr.grad(in[1]);
      for (int r = 0; r < rows; ++r) {
        const S gr_row = go[r] * inv;
        for (std::int64_t i = 0; i < inner; ++i) {
          const S d = p[r * inner + i] - t[r * inner + i];
          if (d > S(0)) gt[r * inner + i] -= gr_row;
          else if (d < S(0)) gt[r * inner + i] += gr_row;
        }
      }
    }
  };
  return g.record("mae-rows", {pred.id, target.id}, std::move(out), recompute, backprop);
}

// Per-row cross entropy of a distribution (B,V) against one-hot targets
// (B,V), probability floored at 1e-12.
template <typename S>
Value<S> ce_rows(Value<S> dist, Value<S> target_onehot) {
  auto picked = sum_reduce(multiply(dist, target_onehot), 1);
  return negate(log(clamp_min(picked, static_cast<S>(kProbFloor))));
}

// Per-row binary cross entropy of predictions (B,) in (0,1) against 0/1
// labels (B,).
template <typename S>
Value<S> bce_rows(Value<S> pred, Value<S> labels) {
  Graph<S>& g = *pred.graph;
  const int rows = g.value(pred.id).shape[0];
  Tensor<S> ones_t({rows}, S(1));
  auto ones = g.leaf(ones_t);
  auto pos = multiply(labels, log(clamp_min(pred, static_cast<S>(kProbFloor))));
  auto neg_labels = subtract(ones, labels);
  auto neg = multiply(neg_labels,
                      log(clamp_min(subtract(ones, pred), static_cast<S>(kProbFloor))));
  return negate(add(pos, neg));
}

// Row-wise MHP combination of per-hypothesis costs (B, N_H) -> (B,).
// The min term routes gradient to exactly one argmin hypothesis (lowest index
// on ties); the average term routes to all of them.
template <typename S>
Value<S> mhp_combine_rows(Value<S> costs, double lambda) {
  const auto& shape = costs.tensor().shape;
  if (shape.size() != 2 || shape[1] < 1)
    throw ShapeError("mhp_combine_rows: expects (B, N_H), got " + shape_str(shape));
  const int n = shape[1];
  auto min_term = scale(min_reduce(costs, 1), static_cast<S>(1.0 - lambda));
  auto avg_term = scale(sum_reduce(costs, 1), static_cast<S>(lambda / n));
  return add(min_term, avg_term);
}

}  // namespace prospect
