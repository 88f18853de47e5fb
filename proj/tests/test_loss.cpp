#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "prospect/loss.hpp"
#include "test_support.hpp"

using namespace prospect;

TEST_CASE("view_cost") {
  auto a = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  CHECK(view_cost(a, a) == 0.0);

  auto p = Tensor<double>::from({2}, {0, 0});
  auto t = Tensor<double>::from({2}, {1, 3});
  CHECK(view_cost(p, t) == Catch::Approx(2.0));

  Rng rng(71);
  auto x = test::random_tensor<double>({3, 5}, rng);
  auto y = test::random_tensor<double>({3, 5}, rng);
  double want = 0;
  for (int i = 0; i < 15; ++i) want += std::fabs(x[i] - y[i]);
  want /= 15.0;
  CHECK(view_cost(x, y) == Catch::Approx(want).margin(1e-9));

  CHECK_THROWS_AS(view_cost(x, test::random_tensor<double>({5, 3}, rng)), ShapeError);
}

TEST_CASE("action_cost") {
  CHECK(action_cost({1, 0, 0, 0}, 0) == Catch::Approx(0.0).margin(1e-9));
  CHECK(action_cost({0.25, 0.25, 0.25, 0.25}, 2) == Catch::Approx(std::log(4.0)).margin(1e-9));
  CHECK(action_cost({0.5, 0.5}, 1) == Catch::Approx(std::log(2.0)).margin(1e-9));
  CHECK_THROWS_AS(action_cost({0.5, 0.2}, 0), ShapeError);       // not normalised
  CHECK_THROWS_AS(action_cost({0.5, 0.5}, 2), ShapeError);       // target out of range
  CHECK_THROWS_AS(action_cost({1.2, -0.2}, 0), ShapeError);      // negative entry
  // Floored, not infinite, for a zero-probability target.
  CHECK(action_cost({1, 0}, 1) == Catch::Approx(-std::log(1e-12)));
}

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.vocab_size = 2;
  c.state_dim = 3;
  c.k = 4;
  return c;
}

Observation const_obs(float img, std::vector<float> state, float grip) {
  Observation o;
  o.image = Tensor<float>({4, 4, 3}, img);
  o.state = std::move(state);
  o.gripper = grip;
  return o;
}

}  // namespace

TEST_CASE("hypothesis_cost") {
  ModelConfig cfg = small_config();

  SECTION("perfect prediction with a certain correct action is free") {
    Hypothesis h;
    h.predicted = const_obs(0.5f, {0.1f, 0.2f, 0.3f}, 0.5f);
    h.action_dist = {1.0f, 0.0f};
    auto b = hypothesis_cost(h, h.predicted, 0, cfg);
    CHECK(b.total == Catch::Approx(0.0).margin(1e-6));
  }
  SECTION("zero weights zero the total") {
    ModelConfig zero = cfg;
    zero.w_image = zero.w_state = zero.w_gripper = zero.w_action = 0.0;
    Hypothesis h;
    h.predicted = const_obs(0.9f, {0.5f, 0.5f, 0.5f}, 0.8f);
    h.action_dist = {0.5f, 0.5f};
    auto b = hypothesis_cost(h, const_obs(0.1f, {0, 0, 0}, 0.2f), 1, zero);
    CHECK(b.total == 0.0);
  }
  SECTION("weighted sum matches the direct formula") {
    Hypothesis h;
    h.predicted = const_obs(0.1f, {0.2f, 0.2f, 0.2f}, 0.5f);
    h.action_dist = {0.5f, 0.5f};
    auto target = const_obs(0.0f, {0.0f, 0.0f, 0.0f}, 0.5f);
    auto b = hypothesis_cost(h, target, 1, cfg);
    CHECK(b.per_view["image"] == Catch::Approx(0.1).margin(1e-6));
    CHECK(b.per_view["state"] == Catch::Approx(0.2).margin(1e-6));
    CHECK(b.per_view["gripper"] == Catch::Approx(0.0).margin(1e-9));
    CHECK(b.action_ce == Catch::Approx(std::log(2.0)).margin(1e-6));
    CHECK(b.total == Catch::Approx(0.9931).margin(1e-4));
    // Breakdown invariant.
    const double recon = cfg.w_action * b.action_ce + cfg.w_image * b.per_view["image"] +
                         cfg.w_state * b.per_view["state"] +
                         cfg.w_gripper * b.per_view["gripper"];
    CHECK(std::fabs(b.total - recon) < 1e-9);
  }
}

TEST_CASE("mhp_combine basics") {
  CHECK(mhp_combine({3, 1, 2}, 0.0) == 1.0);
  CHECK(mhp_combine({1, 2, 3}, 1.0) == Catch::Approx(2.0).margin(1e-15));
  const double expected = (1.0 - 0.05) * 0.2 + (0.05 / 4.0) * (0.2 + 0.5 + 0.9 + 0.7);
  CHECK(mhp_combine({0.2, 0.5, 0.9, 0.7}, 0.05) == expected);
  CHECK(mhp_combine({0.2, 0.5, 0.9, 0.7}, 0.05) == Catch::Approx(0.21875).margin(1e-12));
  CHECK_THROWS_AS(mhp_combine({}, 0.5), ShapeError);
}

TEST_CASE("mhp_combine reduces to min and mean on 1000 random vectors") {
  Rng rng(73);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 1 + static_cast<int>(rng.uniform_int(6));
    std::vector<double> costs;
    for (int i = 0; i < n; ++i) costs.push_back(rng.uniform(0.0, 10.0));
    const double mn = *std::min_element(costs.begin(), costs.end());
    const double sum = std::accumulate(costs.begin(), costs.end(), 0.0);
    CHECK(std::fabs(mhp_combine(costs, 0.0) - mn) < 1e-12);
    CHECK(std::fabs(mhp_combine(costs, 1.0) - sum / n) < 1e-12);
  }
}

TEST_CASE("mhp_combine is monotone and bounded by min and mean") {
  Rng rng(79);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform_int(5));
    std::vector<double> costs;
    for (int i = 0; i < n; ++i) costs.push_back(rng.uniform(0.0, 5.0));
    const double lambda = rng.uniform();
    const double base = mhp_combine(costs, lambda);
    const double mn = *std::min_element(costs.begin(), costs.end());
    const double mean = std::accumulate(costs.begin(), costs.end(), 0.0) / n;
    CHECK(base >= mn - 1e-12);
    CHECK(base <= mean + 1e-12);
    // Increasing any single cost never decreases the result.
    auto bumped = costs;
    bumped[rng.uniform_int(static_cast<std::uint64_t>(n))] += rng.uniform(0.0, 3.0);
    CHECK(mhp_combine(bumped, lambda) >= base - 1e-12);
    // Permuting the order leaves the value unchanged.
    auto perm = costs;
    std::rotate(perm.begin(), perm.begin() + 1, perm.end());
    CHECK(std::fabs(mhp_combine(perm, lambda) - base) < 1e-12);
  }
}

TEST_CASE("value_loss") {
  CHECK(value_loss(0.5, 0) == Catch::Approx(std::log(2.0)));
  CHECK(value_loss(0.5, 1) == Catch::Approx(std::log(2.0)));
  CHECK(value_loss(1.0 - 1e-13, 1) == Catch::Approx(0.0).margin(1e-9));
  CHECK(value_loss(1e-13, 0) == Catch::Approx(0.0).margin(1e-9));
  CHECK(value_loss(0.9, 0) == Catch::Approx(-std::log(0.1)).margin(1e-9));
}

TEST_CASE("prior_loss mirrors action_cost") {
  CHECK(prior_loss({1, 0, 0, 0}, 0) == Catch::Approx(0.0).margin(1e-9));
  CHECK(prior_loss({0.25, 0.25, 0.25, 0.25}, 3) == Catch::Approx(std::log(4.0)));
  CHECK(prior_loss({0.5, 0.5}, 1) == Catch::Approx(std::log(2.0)));
}

TEST_CASE("graph cost builders match the plain forms") {
  Rng rng(83);
  Graph<double> g;
  // mae_rows
  auto p = g.leaf(test::random_tensor<double>({3, 7}, rng));
  auto t = g.leaf(test::random_tensor<double>({3, 7}, rng));
  auto mae = mae_rows(p, t);
  for (int r = 0; r < 3; ++r) {
    double want = 0;
    for (int i = 0; i < 7; ++i) want += std::fabs(p.tensor().at({r, i}) - t.tensor().at({r, i}));
    CHECK(mae.tensor()[r] == Catch::Approx(want / 7).margin(1e-12));
  }
  // ce_rows
  auto logits = g.leaf(test::random_tensor<double>({3, 4}, rng));
  auto dist = softmax(logits, 1);
  Tensor<double> oh({3, 4});
  oh.at({0, 2}) = 1;
  oh.at({1, 0}) = 1;
  oh.at({2, 3}) = 1;
  auto ce = ce_rows(dist, g.leaf(oh));
  CHECK(ce.tensor()[0] == Catch::Approx(-std::log(dist.tensor().at({0, 2}))).margin(1e-12));
  // bce_rows
  auto pred = g.leaf(Tensor<double>::from({2}, {0.9, 0.2}));
  auto labels = g.leaf(Tensor<double>::from({2}, {0.0, 1.0}));
  auto bce = bce_rows(pred, labels);
  CHECK(bce.tensor()[0] == Catch::Approx(value_loss(0.9, 0)).margin(1e-12));
  CHECK(bce.tensor()[1] == Catch::Approx(value_loss(0.2, 1)).margin(1e-12));
  // mhp_combine_rows
  auto costs = g.leaf(Tensor<double>::from({1, 4}, {0.2, 0.5, 0.9, 0.7}));
  auto mhp = mhp_combine_rows(costs, 0.05);
  CHECK(mhp.tensor()[0] == Catch::Approx(0.21875).margin(1e-12));
}

TEST_CASE("grad check: loss builders") {
  Rng rng(89);
  Graph<double> g;
  auto p = g.leaf(test::random_tensor<double>({2, 5}, rng), "p", true);
  auto t = g.leaf(test::random_tensor<double>({2, 5}, rng), "t");
  auto logits = g.leaf(test::random_tensor<double>({2, 3}, rng), "logits", true);
  Tensor<double> oh({2, 3});
  oh.at({0, 1}) = 1;
  oh.at({1, 2}) = 1;
  auto vraw = g.leaf(test::random_tensor<double>({2}, rng, -1.0, 1.0), "vraw", true);
  auto labels = g.leaf(Tensor<double>::from({2}, {1.0, 0.0}));
  auto costs = g.leaf(test::random_tensor<double>({2, 4}, rng, 0.1, 3.0), "costs", true);

  auto total = sum_reduce(mae_rows(p, t));
  total = add(total, sum_reduce(ce_rows(softmax(logits, 1), g.leaf(oh))));
  total = add(total, sum_reduce(bce_rows(sigmoid(vraw), labels)));
  total = add(total, sum_reduce(mhp_combine_rows(costs, 0.05)));
  auto report = grad_check(g, total, 1e-5);
  for (const auto& e : report.entries) {
    INFO(e.param << " err " << e.max_rel_err);
    CHECK(e.pass);
  }
}

TEST_CASE("mhp gradient routing on a two-head toy") {
  auto run = [](double lambda, double c0, double c1) {
    Graph<double> g;
    auto p0 = g.leaf(Tensor<double>::scalar(c0), "p0", true);
    auto p1 = g.leaf(Tensor<double>::scalar(c1), "p1", true);
    auto costs = concat<double>({reshape(p0, {1, 1}), reshape(p1, {1, 1})}, 1);
    g.backward(sum_reduce(mhp_combine_rows(costs, lambda)));
    auto grads = g.parameter_gradients();
    return std::make_pair(grads["p0"].data[0], grads["p1"].data[0]);
  };

  SECTION("pure min routes to the argmin head only") {
    auto [g0, g1] = run(0.0, 0.3, 0.8);
    CHECK(g0 == 1.0);
    CHECK(g1 == 0.0);
  }
  SECTION("relaxed loss routes to every head") {
    auto [g0, g1] = run(0.05, 0.3, 0.8);
    CHECK(g0 == Catch::Approx(0.95 + 0.025));
    CHECK(g1 == Catch::Approx(0.025));
    CHECK(g1 > 0.0);
  }
  SECTION("exact ties break to the lowest index") {
    auto [g0, g1] = run(0.0, 0.5, 0.5);
    CHECK(g0 == 1.0);
    CHECK(g1 == 0.0);
  }
}
