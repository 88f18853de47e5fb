#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <string>
#include <vector>

#include "prospect/graph.hpp"
#include "prospect/ops.hpp"
#include "test_support.hpp"

using namespace prospect;

namespace {

// Wraps an op output into a scalar loss with fixed random mixing weights so
// every output element contributes a distinct gradient.
Value<double> mixed_scalar(Graph<double>& g, Value<double> v, Rng& rng) {
  auto w = g.leaf(test::random_tensor<double>(v.shape(), rng, 0.1, 1.5));
  return sum_reduce(multiply(v, w));
}

using Builder = std::function<Value<double>(Graph<double>&, Rng&)>;

void check_op(const std::string& label, const Builder& build, int trials = 10,
              double tol = 1e-5) {
  for (int t = 0; t < trials; ++t) {
    Rng rng(0x5eedULL + 31 * static_cast<std::uint64_t>(t) + fnv1a(label));
    Graph<double> g;
    auto loss = build(g, rng);
    auto report = grad_check(g, loss, tol);
    INFO(label << " trial " << t);
    for (const auto& e : report.entries) {
      INFO(e.param << " max_rel_err=" << e.max_rel_err);
      CHECK(e.pass);
    }
    CHECK(report.pass);
  }
}

std::vector<int> random_vec_shape(Rng& rng) {
  return {2 + static_cast<int>(rng.uniform_int(5))};
}

}  // namespace

TEST_CASE("grad check: every primitive against central differences") {
  check_op("add", [](Graph<double>& g, Rng& rng) {
    auto shape = random_vec_shape(rng);
    auto a = g.leaf(test::random_tensor<double>(shape, rng), "a", true);
    auto b = g.leaf(test::random_tensor<double>(shape, rng), "b", true);
    return mixed_scalar(g, add(a, b), rng);
  });
  check_op("subtract", [](Graph<double>& g, Rng& rng) {
    auto shape = random_vec_shape(rng);
    auto a = g.leaf(test::random_tensor<double>(shape, rng), "a", true);
    auto b = g.leaf(test::random_tensor<double>(shape, rng), "b", true);
    return mixed_scalar(g, subtract(a, b), rng);
  });
  check_op("multiply", [](Graph<double>& g, Rng& rng) {
    auto shape = random_vec_shape(rng);
    auto a = g.leaf(test::random_tensor<double>(shape, rng), "a", true);
    auto b = g.leaf(test::random_tensor<double>(shape, rng), "b", true);
    return mixed_scalar(g, multiply(a, b), rng);
  });
  check_op("negate", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng), "a", true);
    return mixed_scalar(g, negate(a), rng);
  });
  check_op("matmul", [](Graph<double>& g, Rng& rng) {
    int m = 2 + static_cast<int>(rng.uniform_int(3));
    int k = 2 + static_cast<int>(rng.uniform_int(3));
    int n = 2 + static_cast<int>(rng.uniform_int(3));
    auto a = g.leaf(test::random_tensor<double>({m, k}, rng), "a", true);
    auto b = g.leaf(test::random_tensor<double>({k, n}, rng), "b", true);
    return mixed_scalar(g, matmul(a, b), rng);
  });
  check_op("relu", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng), "a", true);
    return mixed_scalar(g, relu(a), rng);
  });
  check_op("tanh", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng), "a", true);
    return mixed_scalar(g, tanh(a), rng);
  });
  check_op("sigmoid", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng), "a", true);
    return mixed_scalar(g, sigmoid(a), rng);
  });
  check_op("exp", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng, -1.0, 1.0), "a", true);
    return mixed_scalar(g, prospect::exp(a), rng);
  });
  check_op("log", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>(random_vec_shape(rng), rng, 0.5, 3.0), "a", true);
    return mixed_scalar(g, prospect::log(a), rng);
  });
  check_op("sum-reduce", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({3, 4}, rng), "a", true);
    return mixed_scalar(g, sum_reduce(a, static_cast<int>(rng.uniform_int(2))), rng);
  });
  check_op("mean-reduce", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({3, 4}, rng), "a", true);
    return mixed_scalar(g, mean_reduce(a, static_cast<int>(rng.uniform_int(2))), rng);
  });
  check_op("max-reduce", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({3, 4}, rng), "a", true);
    return mixed_scalar(g, max_reduce(a, static_cast<int>(rng.uniform_int(2))), rng);
  });
  check_op("concat", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({2, 3}, rng), "a", true);
    auto b = g.leaf(test::random_tensor<double>({2, 2}, rng), "b", true);
    return mixed_scalar(g, concat<double>({a, b}, 1), rng);
  });
  check_op("slice", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({3, 5}, rng), "a", true);
    return mixed_scalar(g, slice(a, 1, 1, 3), rng);
  });
  check_op("reshape", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({2, 6}, rng), "a", true);
    return mixed_scalar(g, reshape(a, {3, 4}), rng);
  });
  check_op("broadcast", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({1, 4}, rng), "a", true);
    return mixed_scalar(g, broadcast_to(a, {3, 4}), rng);
  });
  check_op("softmax", [](Graph<double>& g, Rng& rng) {
    auto a = g.leaf(test::random_tensor<double>({3, 4}, rng), "a", true);
    return mixed_scalar(g, softmax(a, static_cast<int>(rng.uniform_int(2))), rng);
  });
}

TEST_CASE("grad check: random two-layer composition") {
  check_op("two-layer", [](Graph<double>& g, Rng& rng) {
    auto x = g.leaf(test::random_tensor<double>({1, 5}, rng), "x");
    auto w1 = g.leaf(test::random_tensor<double>({5, 7}, rng, -0.8, 0.8), "w1", true);
    auto b1 = g.leaf(test::random_tensor<double>({1, 7}, rng, -0.5, 0.5), "b1", true);
    auto w2 = g.leaf(test::random_tensor<double>({7, 3}, rng, -0.8, 0.8), "w2", true);
    auto h = tanh(add(matmul(x, w1), b1));
    return mixed_scalar(g, sigmoid(matmul(h, w2)), rng);
  });
}

TEST_CASE("grad check: linear layer report passes at 1e-5") {
  Rng rng(424242);
  Graph<double> g;
  auto x = g.leaf(test::random_tensor<double>({2, 4}, rng), "x");
  auto w = g.leaf(test::random_tensor<double>({4, 3}, rng), "w", true);
  auto b = g.leaf(test::random_tensor<double>({1, 3}, rng), "b", true);
  auto y = add(matmul(x, w), broadcast_to(b, {2, 3}));
  auto loss = mean_reduce(multiply(y, y));
  auto report = grad_check(g, loss, 1e-5);
  REQUIRE(report.entries.size() == 2);
  CHECK(report.pass);
}

TEST_CASE("grad check: corrupted gradient rule fails") {
  Rng rng(555);
  Graph<double> g;
  auto x = g.leaf(test::random_tensor<double>({4}, rng), "x", true);
  // Same forward as scale-by-3 but a backward that claims the factor is 2.
  const auto& xv = g.value(x.id);
  Tensor<double> out(xv.shape);
  for (std::int64_t i = 0; i < xv.numel(); ++i) out[i] = 3.0 * xv[i];
  auto bad = g.record(
      "bad-scale", {x.id}, std::move(out),
      [](Graph<double>& gr, int id) {
        const auto& in = gr.value(gr.node(id).inputs[0]);
        auto& o = gr.mutable_value(id);
        for (std::int64_t i = 0; i < in.numel(); ++i) o[i] = 3.0 * in[i];
      },
      [](Graph<double>& gr, int id) {
        const auto& go = gr.grad(id);
        auto& gx = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) gx[i] += 2.0 * go[i];
      });
  auto report = grad_check(g, sum_reduce(bad), 1e-5);
  CHECK_FALSE(report.pass);
}
