#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "prospect/model.hpp"
#include "prospect/netblocks.hpp"
#include "prospect/ops.hpp"
#include "prospect/rng.hpp"

namespace prospect {

namespace gradcheck_detail {

template <typename S>
Tensor<S> rnd(std::vector<int> shape, Rng& rng, double lo = -1.5, double hi = 1.5) {
  Tensor<S> t(shape);
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(lo, hi));
  return t;
}

inline Value<double> mix(Graph<double>& g, Value<double> v, Rng& rng) {
  return sum_reduce(multiply(v, g.leaf(rnd<double>(v.tensor().shape, rng, 0.2, 1.2))));
}

}  // namespace gradcheck_detail

// Finite-difference verification of every primitive and net block plus the
// full tiny-width pipeline. Returns true when every check passes; one report
// line per check is written to `out`.
inline bool run_grad_check_suite(double tolerance, std::ostream& out) {
  using gradcheck_detail::mix;
  using gradcheck_detail::rnd;
  bool all_pass = true;

  auto run = [&](const std::string& label,
                 const std::function<Value<double>(Graph<double>&, Rng&)>& build,
                 double tol, double step = 1e-4, bool filter = false) {
    Rng rng(fnv1a(label) ^ 0xC0FFEE);
    Graph<double> g;
    auto loss = build(g, rng);
    auto report = grad_check(g, loss, tol, step, filter);
    double worst = 0.0;
    for (const auto& e : report.entries) worst = std::max(worst, e.max_rel_err);
    out << (report.pass ? "pass" : "FAIL") << "  " << label << "  max_rel_err=" << worst
        << " (tol " << tol << ")\n";
    all_pass = all_pass && report.pass;
  };

  const std::vector<std::string> unary = {"negate", "relu", "tanh", "sigmoid"};
  for (const auto& op : unary)
    run("primitive " + op, [op](Graph<double>& g, Rng& rng) {
      auto x = g.leaf(rnd<double>({3, 4}, rng), "x", true);
      return mix(g, apply_primitive<double>(op, {x}), rng);
    }, tolerance);
  run("primitive exp", [](Graph<double>& g, Rng& rng) {
    auto x = g.leaf(rnd<double>({3, 4}, rng, -1, 1), "x", true);
    return mix(g, prospect::exp(x), rng);
  }, tolerance);
  run("primitive log", [](Graph<double>& g, Rng& rng) {
    auto x = g.leaf(rnd<double>({3, 4}, rng, 0.4, 2.5), "x", true);
    return mix(g, prospect::log(x), rng);
  }, tolerance);
  for (const auto& op : {std::string("add"), std::string("subtract"), std::string("multiply")})
    run("primitive " + op, [op](Graph<double>& g, Rng& rng) {
      auto a = g.leaf(rnd<double>({3, 4}, rng), "a", true);
      auto b = g.leaf(rnd<double>({3, 4}, rng), "b", true);
      return mix(g, apply_primitive<double>(op, {a, b}), rng);
    }, tolerance);
  run("primitive matmul", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({3, 4}, rng), "a", true);
    auto b = g.leaf(rnd<double>({4, 5}, rng), "b", true);
    return mix(g, matmul(a, b), rng);
  }, tolerance);
  for (const auto& op : {std::string("sum-reduce"), std::string("mean-reduce"), std::string("max-reduce")})
    run("primitive " + op, [op](Graph<double>& g, Rng& rng) {
      auto a = g.leaf(rnd<double>({3, 4}, rng), "a", true);
      PrimitiveAttrs attrs;
      attrs.axis = 1;
      return mix(g, apply_primitive<double>(op, {a}, attrs), rng);
    }, tolerance);
  run("primitive concat", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({2, 3}, rng), "a", true);
    auto b = g.leaf(rnd<double>({2, 2}, rng), "b", true);
    return mix(g, concat<double>({a, b}, 1), rng);
  }, tolerance);
  run("primitive slice", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({3, 5}, rng), "a", true);
    return mix(g, slice(a, 1, 1, 3), rng);
  }, tolerance);
  run("primitive reshape", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({2, 6}, rng), "a", true);
    return mix(g, reshape(a, {4, 3}), rng);
  }, tolerance);
  run("primitive broadcast", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({1, 4}, rng), "a", true);
    return mix(g, broadcast_to(a, {3, 4}), rng);
  }, tolerance);
  run("primitive softmax", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(rnd<double>({3, 4}, rng), "a", true);
    return mix(g, softmax(a, 1), rng);
  }, tolerance);

  for (int stride : {1, 2})
    run("block conv5x5 stride " + std::to_string(stride), [stride](Graph<double>& g, Rng& rng) {
      auto x = g.leaf(rnd<double>({1, 6, 6, 2}, rng), "x", true);
      auto w = g.leaf(rnd<double>({5, 5, 2, 3}, rng, -0.5, 0.5), "w", true);
      auto b = g.leaf(rnd<double>({3}, rng, -0.2, 0.2), "b", true);
      return mix(g, conv2d(x, w, b, stride, Activation::kRelu), rng);
    }, tolerance);
  run("block dense", [](Graph<double>& g, Rng& rng) {
    auto x = g.leaf(rnd<double>({2, 4}, rng), "x", true);
    auto w = g.leaf(rnd<double>({4, 3}, rng), "w", true);
    auto b = g.leaf(rnd<double>({3}, rng), "b", true);
    return mix(g, dense(x, w, b, Activation::kTanh), rng);
  }, tolerance);
  run("block spatial_soft_argmax", [](Graph<double>& g, Rng& rng) {
    auto f = g.leaf(rnd<double>({2, 4, 5, 3}, rng), "f", true);
    return mix(g, spatial_soft_argmax(f), rng);
  }, tolerance);
  run("block upsample2x", [](Graph<double>& g, Rng& rng) {
    auto x = g.leaf(rnd<double>({1, 3, 3, 2}, rng), "x", true);
    return mix(g, upsample2x(x), rng);
  }, tolerance);
  run("block tile_state + dropout", [](Graph<double>& g, Rng& rng) {
    auto f = g.leaf(rnd<double>({1, 3, 3, 2}, rng), "f", true);
    auto s = g.leaf(rnd<double>({1, 2}, rng), "s", true);
    return mix(g, dropout(tile_state(f, s), 0.3, Mode::kTrain, 99), rng);
  }, tolerance);

  run("pipeline end-to-end (tiny widths)", [](Graph<double>& g, Rng& rng) {
    ModelConfig cfg;
    cfg.domain = "stack";
    cfg.vocab_size = 3;
    cfg.state_dim = 3;
    cfg.k = 4;
    cfg.n_h = 2;
    cfg.noise_dim = 4;
    cfg.enc_base = 2;
    cfg.dec_base = 2;
    cfg.transform_width = 8;
    cfg.image_hw = 16;
    cfg.dropout = 0.1;
    ProspectModel<double> model(cfg, 79);
    for (auto& e : model.params.entries())
      if (e.name.ends_with(".b"))
        for (auto& v : e.tensor.data) v = rng.uniform(-0.15, 0.15);
    const int b = 2;
    TrainingBatch<double> batch;
    batch.images = rnd<double>({b, 16, 16, 3}, rng, 0, 1);
    batch.stategrip = rnd<double>({b, 4}, rng, -1, 1);
    batch.action_onehot = Tensor<double>({b, 3});
    batch.target_action_onehot = Tensor<double>({b, 3});
    for (int i = 0; i < b; ++i) {
      batch.action_onehot.at({i, static_cast<int>(rng.uniform_int(3))}) = 1;
      batch.target_action_onehot.at({i, static_cast<int>(rng.uniform_int(3))}) = 1;
    }
    batch.target_image = rnd<double>({b, 16, 16, 3}, rng, 0, 1);
    batch.target_state = rnd<double>({b, 3}, rng, -1, 1);
    batch.target_gripper = rnd<double>({b, 1}, rng, 0.1, 0.9);
    batch.reward = Tensor<double>({b});
    batch.success_mask = Tensor<double>({b});
    batch.reward[0] = 1;
    batch.success_mask[0] = 1;
    auto p = model.stage(g);
    auto loss = build_training_graph(model, g, p, batch, Mode::kTrain, 0.05, 97);
    return scale(loss.total, 1e-3);
  }, std::max(tolerance, 1e-4), 1e-4, true);

  return all_pass;
}

}  // namespace prospect
