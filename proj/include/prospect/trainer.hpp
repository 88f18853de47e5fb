#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "prospect/dataset.hpp"
#include "prospect/model.hpp"
#include "prospect/types.hpp"
#include "prospect/worlds.hpp"

namespace prospect {

class TrainError : public std::runtime_error {
 public:
  explicit TrainError(const std::string& what) : std::runtime_error(what) {}
};

struct TrainConfig {
  int steps = 5000;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double lambda = 0.05;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
  int log_every = 50;
  int checkpoint_every = 1000;

  void validate() const {
    if (steps < 1) throw ShapeError("train config: steps must be >= 1");
    if (batch_size < 1) throw ShapeError("train config: batch_size must be >= 1");
    if (lambda < 0.0 || lambda > 1.0) throw ShapeError("train config: lambda must be in [0,1]");
  }
};

// Adaptive-moment optimizer; state is kept per parameter in registry order.
template <typename S>
class Adam {
 public:
  explicit Adam(const ParamStore<S>& params) {
    for (const auto& e : params.entries()) {
      m_.push_back(Tensor<S>(e.tensor.shape));
      v_.push_back(Tensor<S>(e.tensor.shape));
    }
  }

  void update(ParamStore<S>& params, const std::map<std::string, Tensor<S>>& grads,
              const TrainConfig& cfg) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg.beta2, t_);
    for (std::size_t i = 0; i < params.entries().size(); ++i) {
      auto& entry = params.entries()[i];
      auto it = grads.find(entry.name);
      if (it == grads.end()) continue;
      const auto& g = it->second;
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::int64_t j = 0; j < g.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = static_cast<S>(cfg.beta1 * m[j] + (1.0 - cfg.beta1) * gj);
        v[j] = static_cast<S>(cfg.beta2 * v[j] + (1.0 - cfg.beta2) * gj * gj);
        const double mhat = static_cast<double>(m[j]) / bc1;
        const double vhat = static_cast<double>(v[j]) / bc2;
        entry.tensor[j] = static_cast<S>(entry.tensor[j] -
                                         cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
      }
    }
  }

 private:
  std::vector<Tensor<S>> m_;
  std::vector<Tensor<S>> v_;
  std::int64_t t_ = 0;
};

// Packs supervision pairs into dense batch tensors.
template <typename S>
TrainingBatch<S> pack_batch(const std::vector<const SupervisionPair*>& pairs,
                            const ModelConfig& cfg) {
  const int b = static_cast<int>(pairs.size());
  const int hw = cfg.image_hw;
  TrainingBatch<S> batch;
  batch.images = Tensor<S>({b, hw, hw, 3});
  batch.target_image = Tensor<S>({b, hw, hw, 3});
  batch.stategrip = Tensor<S>({b, cfg.state_dim + 1});
  batch.target_state = Tensor<S>({b, cfg.state_dim});
  batch.target_gripper = Tensor<S>({b, 1});
  batch.action_onehot = Tensor<S>({b, cfg.vocab_size});
  batch.target_action_onehot = Tensor<S>({b, cfg.vocab_size});
  batch.reward = Tensor<S>({b});
  batch.success_mask = Tensor<S>({b});
  const std::int64_t img_n = static_cast<std::int64_t>(hw) * hw * 3;
  for (int i = 0; i < b; ++i) {
    const auto& p = *pairs[static_cast<std::size_t>(i)];
    if (p.current->image.numel() != img_n)
      throw ShapeError("pack_batch: observation image does not match config image_hw");
    for (std::int64_t j = 0; j < img_n; ++j) {
      batch.images[i * img_n + j] = static_cast<S>(p.current->image[j]);
      batch.target_image[i * img_n + j] = static_cast<S>(p.target->image[j]);
    }
    for (int j = 0; j < cfg.state_dim; ++j) {
      batch.stategrip.at({i, j}) = static_cast<S>(p.current->state[static_cast<std::size_t>(j)]);
      batch.target_state.at({i, j}) = static_cast<S>(p.target->state[static_cast<std::size_t>(j)]);
    }
    batch.stategrip.at({i, cfg.state_dim}) = static_cast<S>(p.current->gripper);
    batch.target_gripper.at({i, 0}) = static_cast<S>(p.target->gripper);
    batch.action_onehot.at({i, p.action}) = S(1);
    batch.target_action_onehot.at({i, p.target_action}) = S(1);
    batch.reward[i] = static_cast<S>(p.reward_to_go);
    batch.success_mask[i] = p.from_success ? S(1) : S(0);
  }
  return batch;
}

// One optimizer step. Returns the scalar batch loss; aborts on a non-finite
// loss with the step index named.
template <typename S>
double train_step(ProspectModel<S>& model, Adam<S>& opt, const TrainingBatch<S>& batch,
                  const TrainConfig& cfg, int step_index) {
  Graph<S> g;
  auto staged = model.stage(g);
  auto loss = build_training_graph(model, g, staged, batch, Mode::kTrain, cfg.lambda,
                                   hash_combine(cfg.seed, 0x57E9 + static_cast<std::uint64_t>(step_index)));
  const double value = static_cast<double>(loss.total.scalar());
  if (!std::isfinite(value))
    throw TrainError("non-finite loss at step " + std::to_string(step_index));
  g.backward(loss.total);
  auto grads = g.parameter_gradients();
  opt.update(model.params, grads, cfg);
  return value;
}

struct MetricsReport {
  double val_image_mae = 0.0;
  double val_state_mae = 0.0;
  double val_gripper_mae = 0.0;
  double val_action_acc = 0.0;
  double value_auc = 0.0;
  double prior_top1 = 0.0;
  std::int64_t val_pairs = 0;
  std::vector<std::pair<int, double>> loss_curve;

  std::string to_text() const {
    std::ostringstream os;
    os << "val_image_mae=" << detail::fmt_double(val_image_mae) << "\n";
    os << "val_state_mae=" << detail::fmt_double(val_state_mae) << "\n";
    os << "val_gripper_mae=" << detail::fmt_double(val_gripper_mae) << "\n";
    os << "val_action_acc=" << detail::fmt_double(val_action_acc) << "\n";
    os << "value_auc=" << detail::fmt_double(value_auc) << "\n";
    os << "prior_top1=" << detail::fmt_double(prior_top1) << "\n";
    os << "val_pairs=" << val_pairs << "\n";
    return os.str();
  }

  std::string loss_csv() const {
    std::ostringstream os;
    os << "step,loss\n";
    for (const auto& [step, loss] : loss_curve)
      os << step << ',' << detail::fmt_double(loss) << "\n";
    return os.str();
  }
};

// Rank-based AUC of scores against binary labels, ties counted half.
inline double rank_auc(const std::vector<std::pair<double, int>>& scored) {
  std::int64_t pos = 0, neg = 0;
  for (const auto& [s, y] : scored) (y ? pos : neg) += 1;
  if (pos == 0 || neg == 0) return 0.5;
  double wins = 0.0;
  for (const auto& [sp, yp] : scored) {
    if (!yp) continue;
    for (const auto& [sn, yn] : scored) {
      if (yn) continue;
      if (sp > sn) wins += 1.0;
      else if (sp == sn) wins += 0.5;
    }
  }
  return wins / (static_cast<double>(pos) * static_cast<double>(neg));
}

// Metrics over one split in infer mode with a fixed evaluation noise seed.
// Per-view errors are reported on the best (minimum total cost) hypothesis of
// each sample.
template <typename S>
MetricsReport evaluate(const ProspectModel<S>& model, const std::vector<Episode>& episodes,
                       Split split, double val_fraction, std::uint64_t eval_seed,
                       int batch_size = 32) {
  std::vector<const SupervisionPair*> pending;
  std::vector<std::vector<SupervisionPair>> storage;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episode_split(e, val_fraction) != split) continue;
    storage.push_back(episode_pairs(episodes[e]));
  }
  for (auto& pairs : storage)
    for (auto& p : pairs) pending.push_back(&p);
  if (pending.empty()) throw ShapeError("evaluate: split holds no supervision pairs");

  MetricsReport report;
  const int nh = model.config.n_h;
  std::vector<std::pair<double, int>> value_scores;
  double prior_hits = 0.0;
  std::int64_t prior_count = 0;

  for (std::size_t start = 0; start < pending.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(pending.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<const SupervisionPair*> chunk(pending.begin() + static_cast<std::ptrdiff_t>(start),
                                              pending.begin() + static_cast<std::ptrdiff_t>(stop));
    auto batch = pack_batch<S>(chunk, model.config);
    Graph<S> g;
    auto staged = model.stage(g);
    auto loss = build_training_graph(model, g, staged, batch, Mode::kInfer, 0.05,
                                     hash_combine(eval_seed, 0xEA1 + start));
    const int b = static_cast<int>(chunk.size());
    const auto& cost = loss.cost_rows.tensor();
    const auto& img = loss.image_rows.tensor();
    const auto& st = loss.state_rows.tensor();
    const auto& gr = loss.gripper_rows.tensor();
    const auto& dist = loss.action_dist.tensor();
    const auto& value = loss.value_pred.tensor();
    const auto& prior = loss.prior.tensor();
    const int v = model.config.vocab_size;
    for (int i = 0; i < b; ++i) {
      int best = 0;
      for (int j = 1; j < nh; ++j)
        if (cost.at({i, j}) < cost.at({i, best})) best = j;
      report.val_image_mae += static_cast<double>(img.at({i, best}));
      report.val_state_mae += static_cast<double>(st.at({i, best}));
      report.val_gripper_mae += static_cast<double>(gr.at({i, best}));
      int argmax = 0;
      for (int a = 1; a < v; ++a)
        if (dist.at({i * nh + best, a}) > dist.at({i * nh + best, argmax})) argmax = a;
      report.val_action_acc += argmax == chunk[static_cast<std::size_t>(i)]->target_action ? 1.0 : 0.0;
      value_scores.push_back({static_cast<double>(value[i]),
                              chunk[static_cast<std::size_t>(i)]->reward_to_go});
      if (chunk[static_cast<std::size_t>(i)]->from_success) {
        int pa = 0;
        for (int a = 1; a < v; ++a)
          if (prior.at({i, a}) > prior.at({i, pa})) pa = a;
        prior_hits += pa == chunk[static_cast<std::size_t>(i)]->action ? 1.0 : 0.0;
        ++prior_count;
      }
    }
  }
  const double n = static_cast<double>(pending.size());
  report.val_image_mae /= n;
  report.val_state_mae /= n;
  report.val_gripper_mae /= n;
  report.val_action_acc /= n;
  report.value_auc = rank_auc(value_scores);
  report.prior_top1 = prior_count ? prior_hits / static_cast<double>(prior_count) : 0.0;
  report.val_pairs = static_cast<std::int64_t>(pending.size());
  return report;
}

// Full optimization run: seeded batch stream, logging every log_every steps,
// checkpoints every checkpoint_every steps, final checkpoint plus metrics on
// the held-out split.
template <typename S>
MetricsReport train_run(ProspectModel<S>& model, const std::vector<Episode>& episodes,
                        const TrainConfig& cfg, const std::string& out_dir = "",
                        bool quiet = true) {
  cfg.validate();
  BatchStream stream(episodes, cfg.batch_size, Split::kTrain, cfg.val_fraction, cfg.seed);
  Adam<S> opt(model.params);
  MetricsReport report;
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  for (int step = 1; step <= cfg.steps; ++step) {
    auto batch = pack_batch<S>(stream.next(), model.config);
    const double loss = train_step(model, opt, batch, cfg, step);
    if (step % cfg.log_every == 0 || step == 1) {
      report.loss_curve.push_back({step, loss});
      if (!quiet) std::fprintf(stderr, "step %d loss %.6f\n", step, loss);
    }
    if (!out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      if constexpr (std::is_same_v<S, float>)
        save_checkpoint(model.params, out_dir + "/weights_step" + std::to_string(step) + ".pwt");
    }
  }
  if (cfg.val_fraction > 0.0) {
    auto metrics = evaluate(model, episodes, Split::kVal, cfg.val_fraction, cfg.seed);
    metrics.loss_curve = report.loss_curve;
    report = metrics;
  }
  if (!out_dir.empty()) {
    if constexpr (std::is_same_v<S, float>) {
      save_model(model, out_dir);
    }
    detail::write_file(out_dir + "/metrics.txt", report.to_text());
    detail::write_file(out_dir + "/loss.csv", report.loss_csv());
  }
  return report;
}

// ---------------------------------------------------------------------------
// Bimodal toy benchmark. A fixed stacking layout where the expert grasps the
// red or the blue block with equal probability. Because the transform is
// conditioned on the action id, the episodes record the grasp under one
// merged action id (0) so that the target distribution given the inputs is
// genuinely two-moded; predicting it requires multiple hypotheses.

namespace toy {

inline WorldConfig layout() {
  WorldConfig w;
  w.domain = Domain::kStack;
  w.seed = 0;
  w.objects[0] = {-0.5f, 0.3f};   // red: left goal mode
  w.objects[1] = {-0.45f, -0.5f}; // green: parked
  w.objects[2] = {0.5f, 0.3f};    // blue: right goal mode
  w.objects[3] = {0.45f, -0.5f};  // yellow: parked
  w.obstacle = {0.0f, -0.55f};
  w.start = {0.0f, -0.1f, 0.0f};
  return w;
}

constexpr int kMergedGraspAction = 0;

// One truncated episode: start keyframe plus the post-grasp goal keyframe.
inline Episode episode(std::uint64_t seed) {
  const WorldConfig world = layout();
  Rng rng(hash_combine(0x70F, seed));
  const int target = rng.bernoulli(0.5) ? 0 : 2;  // red or blue, equal odds
  script_detail::Executor ex(world);
  const ActionVocab vocab = ActionVocab::for_domain(Domain::kStack);

  Episode ep;
  ep.domain = Domain::kStack;
  ep.world = world;
  Keyframe k0;
  k0.obs = observe(ex.state);
  k0.action = kMergedGraspAction;
  ep.keyframes.push_back(std::move(k0));

  ex.follow(route_ground(world, {world.start.x, world.start.y},
                         world.objects[static_cast<std::size_t>(target)]),
            0.0f);
  Command g;
  g.kind = Command::kGrasp;
  g.arg = target;
  ex.run(g);

  Keyframe k1;
  k1.obs = observe(ex.state);
  k1.action = vocab.done_id();
  ep.keyframes.push_back(std::move(k1));
  ep.success = ex.state.carried == target;
  for (auto& k : ep.keyframes) k.reward_to_go = ep.success ? 1 : 0;
  return ep;
}

inline std::vector<Episode> dataset(int n, std::uint64_t seed) {
  std::vector<Episode> eps;
  for (int i = 0; i < n; ++i)
    eps.push_back(episode(hash_combine(seed, static_cast<std::uint64_t>(i))));
  return eps;
}

// The two true goal states, straight from the generator.
inline std::array<std::vector<float>, 2> goal_modes() {
  std::array<std::vector<float>, 2> modes;
  int found = 0;
  for (std::uint64_t seed = 0; found != 3 && seed < 64; ++seed) {
    auto ep = episode(seed);
    const auto& st = ep.keyframes.back().obs.state;
    const int mode = st[0] < 0 ? 0 : 1;
    if (!(found & (1 << mode))) {
      modes[static_cast<std::size_t>(mode)] = st;
      found |= 1 << mode;
    }
  }
  if (found != 3) throw ShapeError("toy: failed to realise both goal modes");
  return modes;
}

struct ModeCoverage {
  std::array<double, 2> best_distance{1e9, 1e9};  // min over hypotheses, per mode
  bool both_covered(double tol) const {
    return best_distance[0] <= tol && best_distance[1] <= tol;
  }
};

// Distance of the closest hypothesis state to each generator mode.
inline ModeCoverage mode_coverage(const ProspectModel<float>& model, std::uint64_t eval_seed) {
  auto start_ep = episode(0);
  const Observation& start = start_ep.keyframes[0].obs;
  auto modes = goal_modes();
  auto hyps = model.predict_hypotheses(start, kMergedGraspAction, eval_seed);
  ModeCoverage cov;
  for (const auto& h : hyps) {
    for (int m = 0; m < 2; ++m) {
      double d2 = 0.0;
      for (std::size_t i = 0; i < modes[static_cast<std::size_t>(m)].size(); ++i) {
        const double d = static_cast<double>(h.predicted.state[i]) -
                         static_cast<double>(modes[static_cast<std::size_t>(m)][i]);
        d2 += d * d;
      }
      cov.best_distance[static_cast<std::size_t>(m)] =
          std::min(cov.best_distance[static_cast<std::size_t>(m)], std::sqrt(d2));
    }
  }
  return cov;
}

}  // namespace toy

}  // namespace prospect
