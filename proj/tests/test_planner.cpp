#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "prospect/planner.hpp"

using namespace prospect;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.domain = "stack";
  c.vocab_size = 10;
  c.state_dim = 3;
  c.k = 4;
  c.n_h = 4;
  c.noise_dim = 4;
  c.enc_base = 2;
  c.dec_base = 2;
  c.transform_width = 16;
  c.dropout = 0.0;
  return c;
}

KeypointSet random_kp(int k, std::uint64_t seed) {
  Rng rng(seed);
  KeypointSet kp;
  kp.channels = k;
  for (int i = 0; i < 2 * k; ++i) kp.coords.push_back(static_cast<float>(rng.uniform(-1, 1)));
  return kp;
}

// Hand-built two-block arena: blocks 0 and 1 live, 2 and 3 parked far away.
WorldConfig two_block_world(Vec2 b0, Vec2 b1, Vec2 obstacle, Vec2 start) {
  WorldConfig w;
  w.domain = Domain::kStack;
  w.objects[0] = b0;
  w.objects[1] = b1;
  w.objects[2] = {-0.85f, -0.85f};
  w.objects[3] = {0.85f, -0.85f};
  w.obstacle = obstacle;
  w.start = {start.x, start.y, 0.0f};
  return w;
}

}  // namespace

TEST_CASE("expand returns top_k times N_H children, deterministically") {
  auto cfg = tiny_config();
  ProspectModel<float> model(cfg, 31);
  LearnedTransitions transitions(model);
  PlanNode<KeypointSet> node;
  node.state = random_kp(cfg.k, 5);
  node.value = transitions.value(node.state);

  auto children = expand(node, transitions, 2, 77);
  REQUIRE(children.size() == 8);
  auto again = expand(node, transitions, 2, 77);
  for (std::size_t i = 0; i < children.size(); ++i) {
    CHECK(children[i].state.coords == again[i].state.coords);
    CHECK(children[i].incoming_action == again[i].incoming_action);
    CHECK(children[i].value == again[i].value);
    CHECK(children[i].depth == 1);
  }

  SECTION("selected actions are the top prior actions") {
    auto prior = transitions.action_prior(node.state);
    std::vector<int> order(prior.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return prior[a] > prior[b]; });
    std::set<int> expanded;
    for (const auto& c : children) expanded.insert(c.incoming_action);
    CHECK(expanded == std::set<int>{order[0], order[1]});
  }
}

TEST_CASE("search base and reduction cases") {
  auto cfg = tiny_config();
  ProspectModel<float> model(cfg, 37);
  LearnedTransitions transitions(model);
  auto root = random_kp(cfg.k, 9);

  SECTION("depth zero returns the root value and no actions") {
    auto plan = search(root, transitions, 0, 4, 2, 11);
    CHECK(plan.actions.empty());
    CHECK(plan.score == Catch::Approx(transitions.value(root)));
  }
  SECTION("beam one equals greedy descent") {
    const int depth = 3;
    auto plan = search(root, transitions, depth, 1, 2, 13);
    // Greedy: repeatedly take the best child of the single frontier node.
    PlanNode<KeypointSet> node;
    node.state = root;
    node.value = transitions.value(root);
    std::vector<int> greedy;
    int id = 0;
    for (int level = 1; level <= depth; ++level) {
      auto children = expand(node, transitions, 2,
                             hash_combine(13, 0xBEA * static_cast<std::uint64_t>(level) +
                                                  static_cast<std::uint64_t>(id)));
      std::size_t best = 0;
      for (std::size_t i = 1; i < children.size(); ++i)
        if (children[i].score > children[best].score) best = i;
      greedy.push_back(children[best].incoming_action);
      node = children[best];
      id += static_cast<int>(best) + 1;  // arena position of the kept child
    }
    CHECK(plan.actions == greedy);
  }
  SECTION("search is deterministic in its seed") {
    auto a = search(root, transitions, 2, 3, 2, 21);
    auto b = search(root, transitions, 2, 3, 2, 21);
    CHECK(a.actions == b.actions);
    CHECK(a.score == b.score);
  }
}

TEST_CASE("oracle planning solves feasible two-block worlds") {
  int successes = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto w = sample_world(Domain::kStack, 300 + seed);
    OracleTransitions oracle(w, 3);
    auto plan = search(oracle.root(), oracle, 3, 1000, 9, 1);
    CHECK(plan.score == Catch::Approx(1.0));
    // Execute the plan through the oracle's macro layer.
    SimState s = init_state(w);
    for (int a : plan.actions) s = oracle.apply(s, a);
    successes += oracle.success(s) ? 1 : 0;
  }
  CHECK(successes == 10);
}

TEST_CASE("oracle plan avoids a grasp blocked by the obstacle path") {
  // Block 0 sits straight behind the obstacle; block 1 is in the open.
  auto w = two_block_world({0.0f, 0.5f}, {0.5f, -0.3f}, {0.0f, 0.1f}, {0.0f, -0.4f});
  OracleTransitions oracle(w, 3);
  // Grasping block 0 from the start is fatal, and the oracle knows it.
  auto dead = oracle.apply(init_state(w), 0);
  CHECK(dead.collided);
  CHECK(oracle.value({dead, 2}) == 0.0);
  auto plan = search(oracle.root(), oracle, 3, 1000, 9, 1);
  REQUIRE_FALSE(plan.actions.empty());
  CHECK(plan.actions[0] != 0);
  CHECK(plan.score == Catch::Approx(1.0));
}

TEST_CASE("infeasible worlds score zero") {
  // Every grasp approach crosses the obstacle: blocks behind it, start below.
  auto w = two_block_world({-0.08f, 0.5f}, {0.08f, 0.55f}, {0.0f, 0.1f}, {0.0f, -0.35f});
  w.objects[2] = {-0.12f, 0.58f};
  w.objects[3] = {0.12f, 0.62f};
  OracleTransitions oracle(w, 3);
  CHECK(oracle.value(oracle.root()) == 0.0);
  auto plan = search(oracle.root(), oracle, 3, 1000, 9, 1);
  CHECK(plan.score == Catch::Approx(0.0));
}

TEST_CASE("exhaustive beam matches brute-force enumeration") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    auto w = sample_world(Domain::kStack, 400 + seed);
    OracleTransitions oracle(w, 3);
    auto beam_plan = search(oracle.root(), oracle, 3, 9 * 9 * 9, 9, 1);
    auto brute = brute_force_plan(oracle.root(), oracle, 3, 1);
    INFO("seed " << seed);
    CHECK(beam_plan.score == Catch::Approx(brute.score).margin(1e-12));
    SimState sa = init_state(w), sb = init_state(w);
    for (int a : beam_plan.actions) sa = oracle.apply(sa, a);
    for (int a : brute.actions) sb = oracle.apply(sb, a);
    CHECK(oracle.success(sa) == oracle.success(sb));
  }
}

TEST_CASE("plan score degrades monotonically as the beam shrinks") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto w = sample_world(Domain::kStack, 500 + seed);
    OracleTransitions oracle(w, 3);
    double prev = -1.0;
    for (int beam : {1, 2, 4, 16, 9 * 9 * 9}) {
      const double score = search(oracle.root(), oracle, 3, beam, 9, 2).score;
      INFO("seed " << seed << " beam " << beam);
      CHECK(score >= prev - 1e-12);
      prev = score;
    }
  }
}

TEST_CASE("plan_from_observation decodes one frame per action") {
  auto cfg = tiny_config();
  cfg.image_hw = 64;
  ProspectModel<float> model(cfg, 41);
  auto w = sample_world(Domain::kStack, 600);
  auto obs = observe(init_state(w));
  auto plan = plan_from_observation(model, obs, 2, 3, 2, 7);
  REQUIRE(plan.actions.size() == 2);
  REQUIRE(plan.predicted_frames.size() == 2);
  REQUIRE(plan.values.size() == 2);
  for (const auto& f : plan.predicted_frames) {
    CHECK(f.image.shape == std::vector<int>{64, 64, 3});
    for (float v : f.image.data) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
}
