#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "prospect/model.hpp"
#include "prospect/rng.hpp"
#include "prospect/worlds.hpp"

namespace prospect {

// Search works against any transition model exposing:
//   using State = ...;
//   int action_count() const;                      // plannable actions
//   int hypothesis_count() const;                  // branches per action
//   std::vector<double> action_prior(const State&) const;
//   State transform(const State&, int action, int head, std::uint64_t noise_seed) const;
//   double value(const State&) const;

template <typename State>
struct PlanNode {
  State state;
  int depth = 0;
  int incoming_action = -1;
  int hypothesis_index = -1;
  double value = 0.0;
  double score = 0.0;      // mean of values along the path below the root
  double value_sum = 0.0;  // running sum backing the mean
  int parent = -1;         // index into the search arena
};

template <typename State>
struct SearchResult {
  std::vector<int> actions;
  std::vector<State> states;  // one per action
  double score = 0.0;
};

// Children of one node: the top_k prior-ranked actions times every
// hypothesis head. Ties in the prior break toward the lower action id.
template <typename M>
std::vector<PlanNode<typename M::State>> expand(const PlanNode<typename M::State>& node,
                                                const M& model, int top_k,
                                                std::uint64_t noise_seed) {
  if (top_k < 1) throw ShapeError("expand: top_k_actions must be >= 1");
  const auto prior = model.action_prior(node.state);
  const int n_actions = std::min(model.action_count(), static_cast<int>(prior.size()));
  std::vector<int> order(static_cast<std::size_t>(n_actions));
  for (int i = 0; i < n_actions; ++i) order[static_cast<std::size_t>(i)] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return prior[static_cast<std::size_t>(a)] > prior[static_cast<std::size_t>(b)]; });
  const int keep = std::min(top_k, n_actions);

  std::vector<PlanNode<typename M::State>> children;
  children.reserve(static_cast<std::size_t>(keep * model.hypothesis_count()));
  for (int rank = 0; rank < keep; ++rank) {
    const int action = order[static_cast<std::size_t>(rank)];
    for (int head = 0; head < model.hypothesis_count(); ++head) {
      PlanNode<typename M::State> child;
      const std::uint64_t child_seed =
          hash_combine(noise_seed, hash_combine(static_cast<std::uint64_t>(action) * 131 + 7,
                                                static_cast<std::uint64_t>(head)));
      child.state = model.transform(node.state, action, head, child_seed);
      child.depth = node.depth + 1;
      child.incoming_action = action;
      child.hypothesis_index = head;
      child.value = model.value(child.state);
      child.value_sum = node.value_sum + child.value;
      child.score = child.value_sum / child.depth;
      children.push_back(std::move(child));
    }
  }
  return children;
}

// Beam search over predicted futures. Level by level the `beam` best-scoring
// nodes survive; the result is the best final-depth node's action path.
// Depth 0 yields an empty plan scored with the root's value.
template <typename M>
SearchResult<typename M::State> search(const typename M::State& root_state, const M& model,
                                       int depth, int beam, int top_k_actions,
                                       std::uint64_t seed) {
  if (depth < 0) throw ShapeError("search: depth must be >= 0");
  if (beam < 1) throw ShapeError("search: beam must be >= 1");
  using Node = PlanNode<typename M::State>;
  std::vector<Node> arena;
  Node root;
  root.state = root_state;
  root.value = model.value(root_state);
  root.score = root.value;
  arena.push_back(root);

  SearchResult<typename M::State> result;
  if (depth == 0) {
    result.score = root.value;
    return result;
  }

  std::vector<int> frontier = {0};
  for (int level = 1; level <= depth; ++level) {
    std::vector<int> next;
    for (int id : frontier) {
      auto children = expand(arena[static_cast<std::size_t>(id)], model, top_k_actions,
                             hash_combine(seed, 0xBEA * static_cast<std::uint64_t>(level) +
                                                    static_cast<std::uint64_t>(id)));
      for (auto& c : children) {
        c.parent = id;
        arena.push_back(std::move(c));
        next.push_back(static_cast<int>(arena.size()) - 1);
      }
    }
    // Keep the beam best; stable on ties so earlier expansion order wins.
    std::stable_sort(next.begin(), next.end(), [&](int a, int b) {
      return arena[static_cast<std::size_t>(a)].score > arena[static_cast<std::size_t>(b)].score;
    });
    if (static_cast<int>(next.size()) > beam) next.resize(static_cast<std::size_t>(beam));
    frontier = std::move(next);
  }

  int best = frontier[0];
  for (int id : frontier)
    if (arena[static_cast<std::size_t>(id)].score > arena[static_cast<std::size_t>(best)].score) best = id;
  result.score = arena[static_cast<std::size_t>(best)].score;
  for (int id = best; id > 0; id = arena[static_cast<std::size_t>(id)].parent) {
    result.actions.push_back(arena[static_cast<std::size_t>(id)].incoming_action);
    result.states.push_back(arena[static_cast<std::size_t>(id)].state);
  }
  std::reverse(result.actions.begin(), result.actions.end());
  std::reverse(result.states.begin(), result.states.end());
  return result;
}

// ---------------------------------------------------------------------------
// Learned-model adapter: plans over keypoint states.

class LearnedTransitions {
 public:
  using State = KeypointSet;

  explicit LearnedTransitions(const ProspectModel<float>& model)
      : model_(model), vocab_(ActionVocab::for_domain(parse_domain(model.config.domain))) {}

  int action_count() const { return vocab_.executable_count(); }
  int hypothesis_count() const { return model_.config.n_h; }

  std::vector<double> action_prior(const State& s) const {
    auto p = model_.prior_of(s);
    p.resize(static_cast<std::size_t>(action_count()));  // drop the done sentinel
    return p;
  }

  State transform(const State& s, int action, int head, std::uint64_t noise_seed) const {
    return model_.transform_keypoints(s, action, model_.prior_of(s),
                                      model_.uniform_noise(noise_seed), head);
  }

  double value(const State& s) const { return model_.value_of(s); }

 private:
  const ProspectModel<float>& model_;
  ActionVocab vocab_;
};

// A plan with the decoded observation per step, for rendering.
struct Plan {
  std::vector<int> actions;
  std::vector<Observation> predicted_frames;
  std::vector<double> values;
  double score = 0.0;
};

// Runs the search from an observation and decodes one frame per planned
// action against the root frame's skip maps (interpretability rendering).
inline Plan plan_from_observation(const ProspectModel<float>& model, const Observation& root_obs,
                                  int depth, int beam, int top_k_actions, std::uint64_t seed) {
  LearnedTransitions transitions(model);
  auto root_kp = model.encode_observation(root_obs);
  auto result = search(root_kp, transitions, depth, beam, top_k_actions, seed);

  Plan plan;
  plan.actions = result.actions;
  plan.score = result.score;

  Graph<float> g;
  auto p = model.stage(g);
  auto enc = model.encode(g, p, g.leaf(model.pack_image(root_obs)),
                          g.leaf(model.pack_stategrip(root_obs)), Mode::kInfer, 0);
  for (const auto& state : result.states) {
    auto kp = model.stage_keypoints(g, state);
    auto dec = model.decode(g, p, kp, enc.skips);
    Observation obs;
    obs.image = Tensor<float>({model.config.image_hw, model.config.image_hw, 3});
    for (std::int64_t i = 0; i < obs.image.numel(); ++i)
      obs.image[i] = dec.image.tensor()[i];
    for (int i = 0; i < model.config.state_dim; ++i) obs.state.push_back(dec.state.tensor()[i]);
    obs.gripper = dec.gripper.tensor()[0];
    plan.predicted_frames.push_back(std::move(obs));
    plan.values.push_back(model.value_of(state));
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Ground-truth oracle adapter: wraps the simulator as a drop-in transition
// model. High-level actions execute as a naive straight-line controller
// (routing is what the lift action is for); the value is 1 exactly when
// success is still reachable within the actions the plan has left, found by
// exhaustive search. Bounding reachability by the remaining plan depth makes
// dawdling plans score below plans that actually finish.

struct OracleState {
  SimState sim;
  int actions_left = 0;
};

class OracleTransitions {
 public:
  using State = OracleState;

  OracleTransitions(const WorldConfig& world, int plan_depth = 4)
      : world_(world), vocab_(ActionVocab::for_domain(Domain::kStack)), depth_(plan_depth) {
    if (world.domain != Domain::kStack)
      throw ShapeError("oracle adapter: stack worlds only");
  }

  State root() const {
    State s;
    s.sim = init_state(world_);
    s.actions_left = depth_;
    return s;
  }

  int action_count() const { return vocab_.executable_count(); }
  int hypothesis_count() const { return 1; }

  std::vector<double> action_prior(const State&) const {
    return std::vector<double>(static_cast<std::size_t>(action_count()),
                               1.0 / action_count());
  }

  State transform(const State& s, int action, int, std::uint64_t) const {
    State next;
    next.sim = apply(s.sim, action);
    next.actions_left = std::max(0, s.actions_left - 1);
    return next;
  }

  double value(const State& s) const {
    return success(s.sim) || reachable(s.sim, s.actions_left) ? 1.0 : 0.0;
  }

  bool success(const SimState& s) const {
    if (s.collided || s.steps > kStepBudget) return false;
    for (int i = 0; i < 4; ++i)
      if (s.stacked_on[static_cast<std::size_t>(i)] >= 0) return true;
    return false;
  }

  // Deterministic macro outcome of one high-level action.
  SimState apply(const SimState& state, int action) const {
    if (state.collided) return state;  // absorbing failure
    SimState s = state;
    if (action >= 0 && action < 4) {  // grasp(c)
      const int c = action;
      if (s.carried < 0 && s.stacked_on[static_cast<std::size_t>(c)] < 0) {
        move_ground(s, s.blocks[static_cast<std::size_t>(c)]);
        if (!s.collided) {
          s.carried = c;
          s.gripper = 0.2f;
        }
      }
    } else if (action >= 4 && action < 8) {  // place_on(c)
      const int c = action - 4;
      if (s.carried >= 0 && c != s.carried && s.stacked_on[static_cast<std::size_t>(c)] < 0) {
        const Vec2 target = s.blocks[static_cast<std::size_t>(c)];
        if (s.lifted) {
          travel(s, target);
        } else {
          move_ground(s, target);
        }
        if (!s.collided) {
          s.blocks[static_cast<std::size_t>(s.carried)] = target;
          s.stacked_on[static_cast<std::size_t>(s.carried)] = c;
          s.carried = -1;
          s.lifted = false;
          s.gripper = 0.8f;
        }
      }
    } else if (action == 8) {  // lift
      if (s.carried >= 0) s.lifted = true;
    }
    return s;
  }

 private:
  void travel(SimState& s, Vec2 target) const {
    const float d = dist({s.effector.x, s.effector.y}, target);
    s.steps += static_cast<int>(std::ceil(d / kMaxStep));
    s.effector.x = target.x;
    s.effector.y = target.y;
    if (s.carried >= 0) s.blocks[static_cast<std::size_t>(s.carried)] = target;
  }

  void move_ground(SimState& s, Vec2 target) const {
    if (route_detail::segment_hits_box({s.effector.x, s.effector.y}, target, s.world.obstacle,
                                       kContactRange))
      s.collided = true;
    travel(s, target);
  }

  bool reachable(const SimState& s, int budget) const {
    if (success(s)) return true;
    if (budget == 0 || s.collided || s.steps > kStepBudget) return false;
    for (int a = 0; a < action_count(); ++a) {
      SimState next = apply(s, a);
      if (next.collided) continue;
      // Skip no-ops to keep the enumeration shallow.
      if (next.carried == s.carried && next.lifted == s.lifted &&
          next.stacked_on == s.stacked_on && next.effector.x == s.effector.x &&
          next.effector.y == s.effector.y)
        continue;
      if (reachable(next, budget - 1)) return true;
    }
    return false;
  }

  WorldConfig world_;
  ActionVocab vocab_;
  int depth_;
};

// Exhaustive enumeration over all action sequences to a fixed depth, scoring
// paths exactly like the beam search. The independent reference for the
// planner equivalence checks.
template <typename M>
SearchResult<typename M::State> brute_force_plan(const typename M::State& root, const M& model,
                                                 int depth, std::uint64_t seed) {
  SearchResult<typename M::State> best;
  best.score = -1.0;
  std::vector<int> actions(static_cast<std::size_t>(depth), 0);
  std::vector<int> heads(static_cast<std::size_t>(depth), 0);

  const int n_a = model.action_count();
  const int n_h = model.hypothesis_count();
  std::vector<typename M::State> states(static_cast<std::size_t>(depth));

  std::function<void(int, double, const typename M::State&)> recurse =
      [&](int level, double value_sum, const typename M::State& state) {
        if (level == depth) {
          const double score = depth ? value_sum / depth : model.value(state);
          if (score > best.score) {
            best.score = score;
            best.actions = actions;
            best.states = states;
          }
          return;
        }
        for (int a = 0; a < n_a; ++a) {
          for (int h = 0; h < n_h; ++h) {
            const std::uint64_t child_seed = hash_combine(
                seed, hash_combine(static_cast<std::uint64_t>(a) * 131 + 7,
                                   static_cast<std::uint64_t>(h)));
            auto next = model.transform(state, a, h, child_seed);
            actions[static_cast<std::size_t>(level)] = a;
            heads[static_cast<std::size_t>(level)] = h;
            states[static_cast<std::size_t>(level)] = next;
            recurse(level + 1, value_sum + model.value(next), next);
          }
        }
      };
  recurse(0, 0.0, root);
  return best;
}

}  // namespace prospect
