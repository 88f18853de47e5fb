#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "prospect/graph.hpp"
#include "prospect/ops.hpp"
#include "test_support.hpp"

using namespace prospect;

TEST_CASE("elementwise add and subtract") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2}, {1, 2}));
  auto b = g.leaf(Tensor<double>::from({2}, {3, 4}));
  auto c = add(a, b);
  CHECK(c.tensor().data == std::vector<double>{4, 6});
  auto d = subtract(b, a);
  CHECK(d.tensor().data == std::vector<double>{2, 2});
}

TEST_CASE("shape mismatch is rejected with shapes named") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>({2, 3}));
  auto b = g.leaf(Tensor<double>({3, 2}));
  CHECK_THROWS_WITH(add(a, b), Catch::Matchers::ContainsSubstring("[2,3]") &&
                                   Catch::Matchers::ContainsSubstring("[3,2]"));
  CHECK_THROWS_AS(matmul(a, a), ShapeError);
}

TEST_CASE("matmul identity") {
  Graph<double> g;
  Rng rng(7);
  auto a = g.leaf(test::random_tensor<double>({3, 3}, rng));
  Tensor<double> eye({3, 3});
  for (int i = 0; i < 3; ++i) eye.at({i, i}) = 1.0;
  auto id = g.leaf(eye);
  auto out = matmul(id, a);
  for (int i = 0; i < 9; ++i) CHECK(out.tensor()[i] == Catch::Approx(a.tensor()[i]).margin(1e-14));
}

TEST_CASE("softmax of constant vector is uniform") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({3}, {0, 0, 0}));
  auto s = softmax(a, 0);
  for (int i = 0; i < 3; ++i) CHECK(s.tensor()[i] == Catch::Approx(1.0 / 3).margin(1e-15));
}

TEST_CASE("softmax sums to one over its axis") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    Graph<double> g;
    auto a = g.leaf(test::random_tensor<double>({4, 7}, rng, -30.0, 30.0));
    auto s = softmax(a, 1);
    for (int r = 0; r < 4; ++r) {
      double sum = 0;
      for (int c = 0; c < 7; ++c) sum += s.tensor().at({r, c});
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("backward of x squared") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::scalar(3.0), "x", true);
  auto y = multiply(x, x);
  g.backward(y);
  CHECK(g.parameter_gradients()["x"].data[0] == Catch::Approx(6.0));
}

TEST_CASE("backward of sum(relu(x))") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::from({2}, {-1, 2}), "x", true);
  auto y = sum_reduce(relu(x));
  g.backward(y);
  auto grad = g.parameter_gradients()["x"];
  CHECK(grad.data == std::vector<double>{0, 1});
}

TEST_CASE("backward rejects non-scalar loss") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>({3}), "x", true);
  auto y = relu(x);
  CHECK_THROWS_AS(g.backward(y), ShapeError);
}

TEST_CASE("gradient accumulates over fanout") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::scalar(2.0), "x", true);
  auto y = add(multiply(x, x), x);  // x^2 + x -> dy/dx = 2x + 1 = 5
  g.backward(y);
  CHECK(g.parameter_gradients()["x"].data[0] == Catch::Approx(5.0));
}

TEST_CASE("max-reduce ties route gradient to lowest index") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::from({3}, {5, 5, 1}), "x", true);
  auto y = max_reduce(x);
  g.backward(y);
  CHECK(g.parameter_gradients()["x"].data == std::vector<double>{1, 0, 0});
}

TEST_CASE("concat slice reshape broadcast round out the set") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2, 2}, {1, 2, 3, 4}));
  auto b = g.leaf(Tensor<double>::from({2, 1}, {9, 9}));
  auto cat = concat<double>({a, b}, 1);
  CHECK(cat.shape() == std::vector<int>{2, 3});
  CHECK(cat.tensor().data == std::vector<double>{1, 2, 9, 3, 4, 9});

  auto sl = slice(cat, 1, 2, 1);
  CHECK(sl.tensor().data == std::vector<double>{9, 9});
  CHECK_THROWS_AS(slice(cat, 1, 2, 2), ShapeError);

  auto rs = reshape(a, {4});
  CHECK(rs.tensor().data == std::vector<double>{1, 2, 3, 4});
  CHECK_THROWS_AS(reshape(a, {5}), ShapeError);

  auto br = broadcast_to(b, {2, 2, 2});
  CHECK(br.tensor().data == std::vector<double>{9, 9, 9, 9, 9, 9, 9, 9});
  CHECK_THROWS_AS(broadcast_to(a, std::vector<int>{3, 3}), ShapeError);
}

TEST_CASE("forward evaluation is bitwise deterministic") {
  auto build = [](Graph<float>& g) {
    Rng rng(99);
    auto a = g.leaf(test::random_tensor<float>({8, 8}, rng));
    auto b = g.leaf(test::random_tensor<float>({8, 8}, rng));
    return sigmoid(matmul(a, softmax(b, 1)));
  };
  Graph<float> g1, g2;
  auto o1 = build(g1);
  auto o2 = build(g2);
  REQUIRE(o1.tensor().data.size() == o2.tensor().data.size());
  for (std::size_t i = 0; i < o1.tensor().data.size(); ++i)
    CHECK(o1.tensor().data[i] == o2.tensor().data[i]);
}

TEST_CASE("apply_primitive dispatches by name") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2}, {1, 2}));
  auto b = g.leaf(Tensor<double>::from({2}, {3, 4}));
  auto c = apply_primitive<double>("add", {a, b});
  CHECK(c.tensor().data == std::vector<double>{4, 6});
  PrimitiveAttrs attrs;
  attrs.axis = 0;
  auto s = apply_primitive<double>("sum-reduce", {c}, attrs);
  CHECK(s.scalar() == Catch::Approx(10.0));
  CHECK_THROWS_AS(apply_primitive<double>("conv9000", {a}), ShapeError);
}

TEST_CASE("mean and min reductions") {
  Graph<double> g;
  auto a = g.leaf(Tensor<double>::from({2, 2}, {1, 2, 3, 4}));
  CHECK(mean_reduce(a).scalar() == Catch::Approx(2.5));
  auto m = min_reduce(a, 1);
  CHECK(m.tensor().data == std::vector<double>{1, 3});
}
