#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "prospect/rng.hpp"
#include "prospect/tensor.hpp"
#include "prospect/types.hpp"

namespace prospect {

enum class Domain { kNav, kStack };

inline std::string domain_name(Domain d) { return d == Domain::kNav ? "nav" : "stack"; }
inline Domain parse_domain(const std::string& s) {
  if (s == "nav") return Domain::kNav;
  if (s == "stack") return Domain::kStack;
  throw ShapeError("unknown domain '" + s + "'");
}

struct Vec2 {
  float x = 0.0f;
  float y = 0.0f;
  bool operator==(const Vec2&) const = default;
};

inline float dist(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Pose {
  float x = 0.0f;
  float y = 0.0f;
  float theta = 0.0f;  // radians scaled to [-1,1]
};

// World geometry. 64 pixels span [-1,1], so one pixel is 1/32 world units.
constexpr int kImageSize = 64;
constexpr float kPixel = 2.0f / kImageSize;
constexpr float kBlockHalf = 4.0f * kPixel / 2.0f * 2.0f / 2.0f;  // 4 px
constexpr float kEffectorHalf = 3.0f * kPixel / 2.0f * 2.0f / 2.0f;
constexpr float kObstacleHalf = 5.0f * kPixel / 2.0f * 2.0f / 2.0f;
constexpr float kContactRange = 0.25f;  // effector + obstacle half extents
constexpr float kMaxStep = 0.05f;
constexpr float kMaxTurn = 0.1f;
constexpr float kGraspRange = 0.08f;
constexpr float kArriveTol = 0.03f;
constexpr int kStepBudget = 120;
constexpr float kSampleBound = 0.55f;
constexpr float kMinSeparation = 0.25f;
constexpr float kObstacleClearance = 0.4f;
constexpr float kRouteInflation = 0.31f;

// Render palette.
constexpr float kBackground[3] = {0.9f, 0.9f, 0.9f};
constexpr float kObstacleColor[3] = {0.3f, 0.3f, 0.3f};
constexpr float kMarkerBorder[3] = {1.0f, 1.0f, 1.0f};
constexpr float kMarkerInner[3] = {0.05f, 0.05f, 0.05f};
inline const float* object_color(int id) {
  static const float colors[4][3] = {{0.9f, 0.1f, 0.1f},   // red
                                     {0.1f, 0.8f, 0.1f},   // green
                                     {0.1f, 0.1f, 0.9f},   // blue
                                     {0.9f, 0.9f, 0.1f}};  // yellow
  return colors[id];
}
inline std::string object_color_name(int id) {
  static const char* names[4] = {"red", "green", "blue", "yellow"};
  return names[id];
}

struct WorldConfig {
  Domain domain = Domain::kStack;
  std::uint64_t seed = 0;
  std::array<Vec2, 4> objects;  // blocks (stack) or landmarks (nav)
  Vec2 obstacle;                // stack only
  Pose start;
};

// Dense action ids per domain. The trailing "done" id doubles as the
// terminal-keyframe sentinel and is excluded from planner expansion.
struct ActionVocab {
  Domain domain = Domain::kStack;

  static ActionVocab for_domain(Domain d) { return ActionVocab{d}; }

  int size() const { return domain == Domain::kNav ? 5 : 10; }
  int executable_count() const { return domain == Domain::kNav ? 4 : 9; }
  int done_id() const { return size() - 1; }

  int grasp_id(int color) const { return color; }          // stack 0..3
  int place_id(int color) const { return 4 + color; }      // stack 4..7
  int lift_id() const { return 8; }                        // stack
  int investigate_id(int k) const { return k; }            // nav 0..3

  std::string name(int id) const {
    if (id < 0 || id >= size()) throw ShapeError("action id " + std::to_string(id) + " out of range");
    if (domain == Domain::kNav) {
      static const char* targets[4] = {"barrel", "barricade", "pylon", "block"};
      if (id < 4) return std::string("investigate_") + targets[id];
      return "done";
    }
    if (id < 4) return "grasp_" + object_color_name(id);
    if (id < 8) return "place_on_" + object_color_name(id - 4);
    if (id == 8) return "lift";
    return "done";
  }

  int id_by_name(const std::string& n) const {
    for (int i = 0; i < size(); ++i)
      if (name(i) == n) return i;
    throw ShapeError("unknown action name '" + n + "'");
  }
};

struct Keyframe {
  Observation obs;
  int action = 0;  // action executed next; done at the terminal keyframe
  int reward_to_go = 0;
};

struct Episode {
  std::vector<Keyframe> keyframes;
  bool success = false;
  Domain domain = Domain::kStack;
  WorldConfig world;
  std::string failure_reason = "none";  // none | collision | timeout
};

// ---------------------------------------------------------------------------
// Simulator state and kinematics.

struct SimState {
  WorldConfig world;
  Pose effector;
  float gripper = 0.8f;  // 0.8 open, 0.2 closed (stack); fixed 0.5 in nav
  std::array<Vec2, 4> blocks{};
  std::array<int, 4> stacked_on{-1, -1, -1, -1};
  int carried = -1;
  bool lifted = false;
  bool collided = false;
  int steps = 0;
};

struct Command {
  enum Kind { kMove, kGrasp, kPlace, kLift, kNoop };
  Kind kind = kNoop;
  Vec2 target;
  float target_theta = 0.0f;
  int arg = -1;  // block color for grasp/place
};

inline SimState init_state(const WorldConfig& world) {
  SimState s;
  s.world = world;
  s.effector = world.start;
  s.gripper = world.domain == Domain::kNav ? 0.5f : 0.8f;
  s.blocks = world.objects;
  return s;
}

inline bool obstacle_contact(const WorldConfig& world, Vec2 p) {
  if (world.domain != Domain::kStack) return false;
  return std::fabs(p.x - world.obstacle.x) < kContactRange &&
         std::fabs(p.y - world.obstacle.y) < kContactRange;
}

// Kinematic update: translation clamped to kMaxStep toward the target,
// rotation clamped to kMaxTurn, grasp snaps the commanded block within
// kGraspRange, place releases the carried block onto the commanded one.
// Ground-level motion through the obstacle marks a collision; lifted motion
// is immune. Collisions are recorded, not rejected.
inline SimState step(const SimState& state, const Command& cmd) {
  SimState s = state;
  s.steps += 1;
  switch (cmd.kind) {
    case Command::kMove: {
      const float dx = cmd.target.x - s.effector.x;
      const float dy = cmd.target.y - s.effector.y;
      const float d = std::hypot(dx, dy);
      if (d > 1e-9f) {
        const float move = std::min(d, kMaxStep);
        s.effector.x += dx / d * move;
        s.effector.y += dy / d * move;
      }
      float dtheta = cmd.target_theta - s.effector.theta;
      dtheta = std::max(-kMaxTurn, std::min(kMaxTurn, dtheta));
      s.effector.theta += dtheta;
      if (s.carried >= 0) s.blocks[static_cast<std::size_t>(s.carried)] = {s.effector.x, s.effector.y};
      if (!s.lifted && obstacle_contact(s.world, {s.effector.x, s.effector.y})) s.collided = true;
      break;
    }
    case Command::kGrasp: {
      if (s.carried < 0 && cmd.arg >= 0 && cmd.arg < 4) {
        const auto& b = s.blocks[static_cast<std::size_t>(cmd.arg)];
        if (dist(b, {s.effector.x, s.effector.y}) <= kGraspRange &&
            s.stacked_on[static_cast<std::size_t>(cmd.arg)] < 0) {
          s.carried = cmd.arg;
          s.blocks[static_cast<std::size_t>(cmd.arg)] = {s.effector.x, s.effector.y};
          s.gripper = 0.2f;
        }
      }
      break;
    }
    case Command::kLift: {
      if (s.carried >= 0) s.lifted = true;
      break;
    }
    case Command::kPlace: {
      if (s.carried >= 0 && cmd.arg >= 0 && cmd.arg < 4 && cmd.arg != s.carried) {
        const auto& target = s.blocks[static_cast<std::size_t>(cmd.arg)];
        if (dist(target, {s.effector.x, s.effector.y}) <= kGraspRange) {
          s.blocks[static_cast<std::size_t>(s.carried)] = target;
          s.stacked_on[static_cast<std::size_t>(s.carried)] = cmd.arg;
        }
        // Out of range: the block is dropped where it is, unstacked.
        s.carried = -1;
        s.lifted = false;
        s.gripper = 0.8f;
      }
      break;
    }
    case Command::kNoop: break;
  }
  return s;
}

// ---------------------------------------------------------------------------
// Rendering: deterministic rasterisation to 64x64 RGB in [0,1].

namespace render_detail {

inline void fill_square(Tensor<float>& img, Vec2 center, int side_px, const float* color) {
  const float cx = (center.x + 1.0f) / 2.0f * kImageSize;
  const float cy = (center.y + 1.0f) / 2.0f * kImageSize;
  const int left = static_cast<int>(std::lround(cx)) - side_px / 2;
  const int top = static_cast<int>(std::lround(cy)) - side_px / 2;
  for (int r = top; r < top + side_px; ++r) {
    if (r < 0 || r >= kImageSize) continue;
    for (int c = left; c < left + side_px; ++c) {
      if (c < 0 || c >= kImageSize) continue;
      for (int ch = 0; ch < 3; ++ch) img.at({r, c, ch}) = color[ch];
    }
  }
}

inline void fill_marker(Tensor<float>& img, const Pose& pose) {
  const float cx = (pose.x + 1.0f) / 2.0f * kImageSize;
  const float cy = (pose.y + 1.0f) / 2.0f * kImageSize;
  const float rad = pose.theta * 3.14159265358979323846f;
  const float cs = std::cos(-rad), sn = std::sin(-rad);
  const int r0 = static_cast<int>(std::floor(cy - 5)), r1 = static_cast<int>(std::ceil(cy + 5));
  const int c0 = static_cast<int>(std::floor(cx - 5)), c1 = static_cast<int>(std::ceil(cx + 5));
  for (int r = r0; r <= r1; ++r) {
    if (r < 0 || r >= kImageSize) continue;
    for (int c = c0; c <= c1; ++c) {
      if (c < 0 || c >= kImageSize) continue;
      const float dx = (c + 0.5f) - cx;
      const float dy = (r + 0.5f) - cy;
      const float u = cs * dx - sn * dy;
      const float v = sn * dx + cs * dy;
      const float m = std::max(std::fabs(u), std::fabs(v));
      if (m > 3.0f) continue;
      const float* color = m >= 2.0f ? kMarkerBorder : kMarkerInner;
      for (int ch = 0; ch < 3; ++ch) img.at({r, c, ch}) = color[ch];
    }
  }
}

}  // namespace render_detail

inline Tensor<float> render(const SimState& s) {
  Tensor<float> img({kImageSize, kImageSize, 3});
  for (int r = 0; r < kImageSize; ++r)
    for (int c = 0; c < kImageSize; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at({r, c, ch}) = kBackground[ch];

  if (s.world.domain == Domain::kStack)
    render_detail::fill_square(img, s.world.obstacle, 10, kObstacleColor);

  // Free blocks and stack bases first, stacked tops nested, carried last.
  for (int i = 0; i < 4; ++i)
    if (i != s.carried && s.stacked_on[static_cast<std::size_t>(i)] < 0)
      render_detail::fill_square(img, s.blocks[static_cast<std::size_t>(i)], 8, object_color(i));
  for (int i = 0; i < 4; ++i)
    if (s.stacked_on[static_cast<std::size_t>(i)] >= 0)
      render_detail::fill_square(img, s.blocks[static_cast<std::size_t>(i)], 4, object_color(i));

  if (s.carried >= 0 && !s.lifted)
    render_detail::fill_square(img, s.blocks[static_cast<std::size_t>(s.carried)], 8,
                               object_color(s.carried));
  render_detail::fill_marker(img, s.effector);
  if (s.carried >= 0 && s.lifted)
    render_detail::fill_square(img, s.blocks[static_cast<std::size_t>(s.carried)], 4,
                               object_color(s.carried));
  return img;
}

inline Observation observe(const SimState& s) {
  Observation obs;
  obs.image = render(s);
  obs.state = {s.effector.x, s.effector.y, s.effector.theta};
  obs.gripper = s.world.domain == Domain::kNav ? 0.5f : s.gripper;
  return obs;
}

// ---------------------------------------------------------------------------
// World sampling.

inline WorldConfig sample_world(Domain domain, std::uint64_t seed) {
  Rng rng(hash_combine(0x5EEDF00DULL, seed));
  for (int attempt = 0; attempt < 1000; ++attempt) {
    WorldConfig w;
    w.domain = domain;
    w.seed = seed;
    auto draw = [&] {
      return Vec2{static_cast<float>(rng.uniform(-kSampleBound, kSampleBound)),
                  static_cast<float>(rng.uniform(-kSampleBound, kSampleBound))};
    };
    for (auto& o : w.objects) o = draw();
    if (domain == Domain::kStack) w.obstacle = draw();
    const Vec2 start = draw();
    w.start = {start.x, start.y, 0.0f};

    bool ok = true;
    for (int i = 0; i < 4 && ok; ++i) {
      for (int j = i + 1; j < 4; ++j)
        if (dist(w.objects[static_cast<std::size_t>(i)], w.objects[static_cast<std::size_t>(j)]) < kMinSeparation) ok = false;
      if (domain == Domain::kStack &&
          dist(w.objects[static_cast<std::size_t>(i)], w.obstacle) < kObstacleClearance)
        ok = false;
      if (dist(w.objects[static_cast<std::size_t>(i)], start) < kMinSeparation) ok = false;
    }
    if (domain == Domain::kStack && dist(start, w.obstacle) < kObstacleClearance) ok = false;
    if (ok) return w;
  }
  throw ShapeError("sample_world: rejection sampling exceeded 1000 tries for seed " +
                   std::to_string(seed));
}

// ---------------------------------------------------------------------------
// Route planning around the single obstacle (ground-level motion only).

namespace route_detail {

// Segment vs axis-aligned box (center +- half) intersection, slab method.
inline bool segment_hits_box(Vec2 a, Vec2 b, Vec2 center, float half) {
  float t0 = 0.0f, t1 = 1.0f;
  const float d[2] = {b.x - a.x, b.y - a.y};
  const float p[2] = {a.x - center.x, a.y - center.y};
  for (int axis = 0; axis < 2; ++axis) {
    if (std::fabs(d[axis]) < 1e-9f) {
      if (std::fabs(p[axis]) > half) return false;
      continue;
    }
    float lo = (-half - p[axis]) / d[axis];
    float hi = (half - p[axis]) / d[axis];
    if (lo > hi) std::swap(lo, hi);
    t0 = std::max(t0, lo);
    t1 = std::min(t1, hi);
    if (t0 > t1) return false;
  }
  return true;
}

}  // namespace route_detail

// Waypoints from `from` to `to` avoiding the obstacle box (stack domain,
// ground level). With one axis-aligned obstacle a one- or two-corner detour
// around the inflated box always exists inside the arena.
inline std::vector<Vec2> route_ground(const WorldConfig& world, Vec2 from, Vec2 to) {
  if (world.domain != Domain::kStack ||
      !route_detail::segment_hits_box(from, to, world.obstacle, kRouteInflation))
    return {to};
  const float off = kRouteInflation + 0.03f;
  std::array<Vec2, 4> corners = {
      Vec2{world.obstacle.x - off, world.obstacle.y - off},
      Vec2{world.obstacle.x + off, world.obstacle.y - off},
      Vec2{world.obstacle.x + off, world.obstacle.y + off},
      Vec2{world.obstacle.x - off, world.obstacle.y + off}};
  auto clear = [&](Vec2 a, Vec2 b) {
    return !route_detail::segment_hits_box(a, b, world.obstacle, kRouteInflation - 0.02f);
  };
  std::vector<Vec2> best;
  float best_len = 1e9f;
  for (const auto& c : corners) {
    if (clear(from, c) && clear(c, to)) {
      const float len = dist(from, c) + dist(c, to);
      if (len < best_len) {
        best_len = len;
        best = {c, to};
      }
    }
  }
  if (!best.empty()) return best;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& c1 = corners[i];
    const auto& c2 = corners[(i + 1) % 4];
    if (clear(from, c1) && clear(c1, c2) && clear(c2, to)) {
      const float len = dist(from, c1) + dist(c1, c2) + dist(c2, to);
      if (len < best_len) {
        best_len = len;
        best = {c1, c2, to};
      }
    }
  }
  if (best.empty()) best = {to};  // degenerate geometry; let the collision show
  return best;
}

// ---------------------------------------------------------------------------
// Outcome labelling.

struct Outcome {
  bool success = false;
  std::string failure_reason = "none";  // none | collision | timeout
};

// Success: stack — some block rests on another at the end and the obstacle
// was never touched; nav — the robot ends within 0.1 of the commanded
// landmark. Everything else fails with collision taking precedence.
inline Outcome label_outcome(const std::vector<SimState>& trajectory, int nav_target = -1) {
  if (trajectory.empty()) throw ShapeError("label_outcome: empty trajectory");
  const SimState& last = trajectory.back();
  bool collided = false;
  for (const auto& s : trajectory) collided = collided || s.collided;
  Outcome out;
  if (last.world.domain == Domain::kStack) {
    bool stacked = false;
    for (int i = 0; i < 4; ++i) stacked = stacked || last.stacked_on[static_cast<std::size_t>(i)] >= 0;
    out.success = stacked && !collided && last.steps <= kStepBudget;
  } else {
    const Vec2 target = last.world.objects[static_cast<std::size_t>(nav_target)];
    out.success = dist({last.effector.x, last.effector.y}, target) <= 0.1f &&
                  last.steps <= kStepBudget;
  }
  if (!out.success) out.failure_reason = collided ? "collision" : "timeout";
  return out;
}

// ---------------------------------------------------------------------------
// Scripted behaviours.

enum class Behavior { kExpert, kNoisy, kAdversarial };

inline Behavior parse_behavior(const std::string& s) {
  if (s == "expert") return Behavior::kExpert;
  if (s == "noisy") return Behavior::kNoisy;
  if (s == "adversarial") return Behavior::kAdversarial;
  throw ShapeError("unknown behavior '" + s + "'");
}

constexpr double kDefaultNoise = 0.5;

namespace script_detail {

struct Executor {
  SimState state;
  std::vector<SimState> trajectory;

  explicit Executor(const WorldConfig& w) : state(init_state(w)) { trajectory.push_back(state); }

  bool budget_left() const { return state.steps < kStepBudget; }

  void run(const Command& cmd) {
    state = step(state, cmd);
    trajectory.push_back(state);
  }

  // Drives toward a point until arrival or the budget runs out.
  void move_to(Vec2 target, float theta) {
    while (budget_left() &&
           dist({state.effector.x, state.effector.y}, target) > kArriveTol) {
      Command c;
      c.kind = Command::kMove;
      c.target = target;
      c.target_theta = theta;
      run(c);
      if (state.collided) break;
    }
  }

  void follow(const std::vector<Vec2>& waypoints, float theta) {
    for (const auto& w : waypoints) {
      move_to(w, theta);
      if (state.collided || !budget_left()) break;
    }
  }

  void idle_out() {
    while (budget_left()) run(Command{});
  }
};

// Per-call magnitude draw so a slice of noisy episodes stays accurate enough
// to succeed while most miss.
inline Vec2 jitter(Vec2 p, Rng& rng, double scale) {
  const double s = scale * rng.uniform();
  Vec2 out{p.x + static_cast<float>(rng.uniform(-s, s)),
           p.y + static_cast<float>(rng.uniform(-s, s))};
  out.x = std::max(-0.9f, std::min(0.9f, out.x));
  out.y = std::max(-0.9f, std::min(0.9f, out.y));
  return out;
}

}  // namespace script_detail

// Runs one scripted episode: the high-level plan is fixed per domain, the
// execution quality depends on the behaviour. Keyframes are recorded at every
// high-level action boundary; reward_to_go on every keyframe equals the final
// outcome.
inline Episode scripted_episode(const WorldConfig& world, Behavior behavior, std::uint64_t seed,
                                double p_err = kDefaultNoise) {
  Rng rng(hash_combine(0xEC0ULL, seed));
  const ActionVocab vocab = ActionVocab::for_domain(world.domain);
  Episode ep;
  ep.domain = world.domain;
  ep.world = world;
  script_detail::Executor ex(world);
  int nav_target = -1;

  auto record = [&](int action) {
    Keyframe k;
    k.obs = observe(ex.state);
    k.action = action;
    ep.keyframes.push_back(std::move(k));
  };

  if (world.domain == Domain::kNav) {
    nav_target = static_cast<int>(rng.uniform_int(4));
    record(vocab.investigate_id(nav_target));
    Vec2 goal = world.objects[static_cast<std::size_t>(nav_target)];
    if (behavior == Behavior::kNoisy) goal = script_detail::jitter(goal, rng, p_err);
    if (behavior == Behavior::kAdversarial) {
      // Parks far away from the commanded landmark, then times out.
      Vec2 away{-goal.x, -goal.y};
      if (dist(away, goal) < 0.4f) away = {goal.x > 0 ? -0.8f : 0.8f, goal.y > 0 ? -0.8f : 0.8f};
      goal = away;
    }
    const float heading = static_cast<float>(std::atan2(goal.y - ex.state.effector.y,
                                                        goal.x - ex.state.effector.x) /
                                             3.14159265358979323846);
    ex.move_to(goal, heading);
    if (behavior != Behavior::kExpert && !ex.budget_left()) {
      // budget already burnt
    } else if (behavior == Behavior::kAdversarial) {
      ex.idle_out();
    }
    record(vocab.done_id());
  } else {
    const int c1 = static_cast<int>(rng.uniform_int(4));
    int c2 = static_cast<int>(rng.uniform_int(3));
    if (c2 >= c1) ++c2;
    const bool adversarial_collides = behavior == Behavior::kAdversarial && rng.bernoulli(0.4);

    // grasp(c1)
    record(vocab.grasp_id(c1));
    if (behavior == Behavior::kAdversarial && !adversarial_collides) {
      ex.move_to(script_detail::jitter({0, 0}, rng, 0.6), 0.0f);
    } else {
      Vec2 goal = ex.state.blocks[static_cast<std::size_t>(c1)];
      if (behavior == Behavior::kNoisy) goal = script_detail::jitter(goal, rng, p_err);
      auto path = adversarial_collides ? std::vector<Vec2>{world.obstacle, goal}
                                       : route_ground(world, {ex.state.effector.x, ex.state.effector.y}, goal);
      ex.follow(path, 0.0f);
      Command g;
      g.kind = Command::kGrasp;
      g.arg = c1;
      ex.run(g);
    }

    // lift
    if (!ex.state.collided && ex.budget_left()) {
      record(vocab.lift_id());
      if (behavior == Behavior::kAdversarial && !adversarial_collides) {
        ex.move_to(script_detail::jitter({0, 0}, rng, 0.6), 0.0f);
      }
      Command l;
      l.kind = Command::kLift;
      ex.run(l);
    }

    // place_on(c2)
    if (!ex.state.collided && ex.budget_left()) {
      record(vocab.place_id(c2));
      Vec2 goal = ex.state.blocks[static_cast<std::size_t>(c2)];
      if (behavior == Behavior::kNoisy) goal = script_detail::jitter(goal, rng, p_err);
      if (behavior == Behavior::kAdversarial && !adversarial_collides) {
        goal = script_detail::jitter({0, 0}, rng, 0.7);
      }
      // Lifted motion is straight; an unlifted carry would have to route.
      ex.move_to(goal, 0.0f);
      Command p;
      p.kind = Command::kPlace;
      p.arg = c2;
      ex.run(p);
    }

    if (behavior == Behavior::kAdversarial && !ex.state.collided) ex.idle_out();
    record(vocab.done_id());
  }

  const Outcome outcome = label_outcome(ex.trajectory, nav_target);
  ep.success = outcome.success;
  ep.failure_reason = outcome.failure_reason;
  for (auto& k : ep.keyframes) k.reward_to_go = ep.success ? 1 : 0;
  return ep;
}

}  // namespace prospect
