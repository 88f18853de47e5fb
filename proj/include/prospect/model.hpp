#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "prospect/checkpoint.hpp"
#include "prospect/graph.hpp"
#include "prospect/loss.hpp"
#include "prospect/netblocks.hpp"
#include "prospect/ops.hpp"
#include "prospect/rng.hpp"
#include "prospect/types.hpp"

namespace prospect {

// Encoder -> N_H transform heads -> shared decoder, plus a value head and an
// action prior, all over spatial soft-argmax keypoints. The encoder is not
// conditioned on the action; the action (with the prior and a noise draw)
// enters at the transform input, so the planner can expand many candidate
// actions from one encoded state.
template <typename S>
class ProspectModel {
 public:
  ModelConfig config;
  ParamStore<S> params;

  ProspectModel(ModelConfig cfg, std::uint64_t init_seed) : config(std::move(cfg)) {
    config.validate();
    init_parameters(init_seed);
  }

  ProspectModel(ModelConfig cfg, ParamStore<S> loaded) : config(std::move(cfg)) {
    config.validate();
    init_parameters(0);
    if (loaded.size() != params.size())
      throw IoError("checkpoint has " + std::to_string(loaded.size()) + " parameters, model needs " +
                    std::to_string(params.size()));
    for (auto& e : params.entries()) {
      auto& src = loaded.at(e.name);
      if (src.shape != e.tensor.shape)
        throw IoError("checkpoint parameter " + e.name + " has shape " + shape_str(src.shape) +
                      ", expected " + shape_str(e.tensor.shape));
      e.tensor = src;
    }
  }

  int state_input_dim() const { return config.state_dim + 1; }  // state plus gripper

  // --- graph-level pieces -------------------------------------------------

  struct GraphParams {
    std::map<std::string, Value<S>> leaves;
    Value<S> at(const std::string& name) const {
      auto it = leaves.find(name);
      if (it == leaves.end()) throw IoError("parameter not staged: " + name);
      return it->second;
    }
  };

  GraphParams stage(Graph<S>& g) const {
    GraphParams staged;
    for (const auto& e : params.entries()) staged.leaves[e.name] = g.leaf(e.tensor, e.name, true);
    return staged;
  }

  struct EncodeResult {
    Value<S> keypoints;           // (B, 2K)
    std::vector<Value<S>> skips;  // {32x32xE, 16x16x2E, 8x8x2E}
  };

  // images (B,hw,hw,3), stategrip (B, state_dim+1).
  EncodeResult encode(Graph<S>& g, const GraphParams& p, Value<S> images, Value<S> stategrip,
                      Mode mode, std::uint64_t dropout_seed) const {
    auto drop = [&](Value<S> v, int layer) {
      return dropout(v, config.dropout, mode, hash_combine(dropout_seed, static_cast<std::uint64_t>(layer)));
    };
    auto x1 = drop(conv2d(images, p.at("enc.conv1.w"), p.at("enc.conv1.b"), 1, Activation::kRelu), 1);
    auto tiled = tile_state(x1, stategrip);
    auto x2 = drop(conv2d(tiled, p.at("enc.conv2.w"), p.at("enc.conv2.b"), 2, Activation::kRelu), 2);
    auto x3 = drop(conv2d(x2, p.at("enc.conv3.w"), p.at("enc.conv3.b"), 2, Activation::kRelu), 3);
    auto x4 = drop(conv2d(x3, p.at("enc.conv4.w"), p.at("enc.conv4.b"), 2, Activation::kRelu), 4);
    auto logits = conv2d(x4, p.at("enc.conv5.w"), p.at("enc.conv5.b"), 1, Activation::kLinear);
    EncodeResult out;
    out.keypoints = spatial_soft_argmax(logits);
    out.skips = {x2, x3, x4};
    return out;
  }

  // One hypothesis head. Input rows: keypoints (B,2K), one-hot action (B,V),
  // prior (B,V), noise (B,noise_dim; omitted when noise_dim is 0).
  Value<S> transform(Graph<S>& g, const GraphParams& p, int head, Value<S> keypoints,
                     Value<S> action_onehot, Value<S> prior, Value<S> noise, Mode mode,
                     std::uint64_t dropout_seed) const {
    if (head < 0 || head >= config.n_h)
      throw ShapeError("transform: head " + std::to_string(head) + " out of range");
    std::vector<Value<S>> parts = {keypoints, action_onehot, prior};
    if (config.noise_dim > 0) parts.push_back(noise);
    auto in = concat<S>(parts, 1);
    const std::string pre = "trans" + std::to_string(head);
    auto h1 = dense(in, p.at(pre + ".fc1.w"), p.at(pre + ".fc1.b"), Activation::kRelu);
    h1 = dropout(h1, config.dropout, mode, hash_combine(dropout_seed, 100 + 2 * static_cast<std::uint64_t>(head)));
    auto h2 = dense(h1, p.at(pre + ".fc2.w"), p.at(pre + ".fc2.b"), Activation::kRelu);
    h2 = dropout(h2, config.dropout, mode, hash_combine(dropout_seed, 101 + 2 * static_cast<std::uint64_t>(head)));
    return dense(h2, p.at(pre + ".fc3.w"), p.at(pre + ".fc3.b"), Activation::kTanh);
  }

  struct DecodeResult {
    Value<S> image;        // (B,64,64,3) in [0,1]
    Value<S> state;        // (B,state_dim) in [-1,1]
    Value<S> gripper;      // (B,1) in (0,1)
    Value<S> action_dist;  // (B,V) rows sum to 1
  };

  // kp (B,2K); skips must match the same batch (pass zeros or tiled copies as
  // needed). Only the image path consumes them.
  DecodeResult decode(Graph<S>& g, const GraphParams& p, Value<S> kp,
                      const std::vector<Value<S>>& skips) const {
    const int batch = kp.tensor().shape[0];
    const int dchan = config.dec_base;
    const int base_hw = config.image_hw / 8;
    auto embed = dense(kp, p.at("dec.embed.w"), p.at("dec.embed.b"), Activation::kRelu);
    auto x = reshape(embed, {batch, base_hw, base_hw, dchan});
    x = upsample2x(x);  // 16x16
    if (config.use_skips) x = concat<S>({x, skips[1]}, 3);
    x = conv2d(x, p.at("dec.conv1.w"), p.at("dec.conv1.b"), 1, Activation::kRelu);
    x = upsample2x(x);  // 32x32
    if (config.use_skips) x = concat<S>({x, skips[0]}, 3);
    x = conv2d(x, p.at("dec.conv2.w"), p.at("dec.conv2.b"), 1, Activation::kRelu);
    x = upsample2x(x);  // 64x64
    x = conv2d(x, p.at("dec.conv3.w"), p.at("dec.conv3.b"), 1, Activation::kRelu);
    DecodeResult out;
    out.image = conv2d(x, p.at("dec.out.w"), p.at("dec.out.b"), 1, Activation::kSigmoid);
    out.state = dense(kp, p.at("dec.state.w"), p.at("dec.state.b"), Activation::kTanh);
    out.gripper = dense(kp, p.at("dec.gripper.w"), p.at("dec.gripper.b"), Activation::kSigmoid);
    out.action_dist = dense(kp, p.at("dec.action.w"), p.at("dec.action.b"), Activation::kSoftmax);
    return out;
  }

  // Success probability in (0,1); consumes keypoints only.
  Value<S> value_head(Graph<S>& g, const GraphParams& p, Value<S> kp) const {
    auto h = dense(kp, p.at("value.fc1.w"), p.at("value.fc1.b"), Activation::kRelu);
    auto v = dense(h, p.at("value.fc2.w"), p.at("value.fc2.b"), Activation::kSigmoid);
    return reshape(v, {kp.tensor().shape[0]});
  }

  Value<S> prior_head(Graph<S>& g, const GraphParams& p, Value<S> kp) const {
    return dense(kp, p.at("prior.fc.w"), p.at("prior.fc.b"), Activation::kSoftmax);
  }

  // --- plain inference helpers (infer mode, batch of one) ------------------

  Tensor<S> pack_image(const Observation& obs) const {
    const int hw = config.image_hw;
    Tensor<S> t({1, hw, hw, 3});
    if (obs.image.shape != std::vector<int>{hw, hw, 3})
      throw ShapeError("observation image must be " + std::to_string(hw) + "x" +
                       std::to_string(hw) + "x3, got " + shape_str(obs.image.shape));
    for (std::int64_t i = 0; i < obs.image.numel(); ++i) t[i] = static_cast<S>(obs.image[i]);
    return t;
  }

  Tensor<S> pack_stategrip(const Observation& obs) const {
    if (static_cast<int>(obs.state.size()) != config.state_dim)
      throw ShapeError("observation state dim " + std::to_string(obs.state.size()) +
                       " does not match config " + std::to_string(config.state_dim));
    Tensor<S> t({1, state_input_dim()});
    for (int i = 0; i < config.state_dim; ++i) t[i] = static_cast<S>(obs.state[static_cast<std::size_t>(i)]);
    t[config.state_dim] = static_cast<S>(obs.gripper);
    return t;
  }

  KeypointSet encode_observation(const Observation& obs) const {
    Graph<S> g;
    auto p = stage(g);
    auto enc = encode(g, p, g.leaf(pack_image(obs)), g.leaf(pack_stategrip(obs)), Mode::kInfer, 0);
    KeypointSet kp;
    kp.channels = config.k;
    for (auto v : enc.keypoints.tensor().data) kp.coords.push_back(static_cast<float>(v));
    return kp;
  }

  std::vector<float> uniform_noise(std::uint64_t seed) const {
    Rng rng(seed);
    std::vector<float> z(static_cast<std::size_t>(config.noise_dim));
    for (auto& v : z) v = static_cast<float>(rng.uniform(-1.0, 1.0));
    return z;
  }

  Value<S> stage_keypoints(Graph<S>& g, const KeypointSet& kp) const {
    Tensor<S> t({1, config.keypoint_dim()});
    if (static_cast<int>(kp.coords.size()) != config.keypoint_dim())
      throw ShapeError("keypoint vector has length " + std::to_string(kp.coords.size()) +
                       ", expected " + std::to_string(config.keypoint_dim()));
    for (std::size_t i = 0; i < kp.coords.size(); ++i) t[static_cast<std::int64_t>(i)] = static_cast<S>(kp.coords[i]);
    return g.leaf(t);
  }

  std::vector<double> prior_of(const KeypointSet& kp) const {
    Graph<S> g;
    auto p = stage(g);
    auto prior = prior_head(g, p, stage_keypoints(g, kp));
    std::vector<double> out;
    for (auto v : prior.tensor().data) out.push_back(static_cast<double>(v));
    return out;
  }

  double value_of(const KeypointSet& kp) const {
    Graph<S> g;
    auto p = stage(g);
    return static_cast<double>(value_head(g, p, stage_keypoints(g, kp)).tensor()[0]);
  }

  // Single transform step on plain keypoints (used by the planner).
  KeypointSet transform_keypoints(const KeypointSet& kp, int action,
                                  const std::vector<double>& prior,
                                  const std::vector<float>& noise, int head) const {
    Graph<S> g;
    auto p = stage(g);
    auto kpv = stage_keypoints(g, kp);
    auto onehot = g.leaf(row_vector(one_hot<S>(action, config.vocab_size)));
    Tensor<S> priort({1, config.vocab_size});
    for (int i = 0; i < config.vocab_size; ++i) priort[i] = static_cast<S>(prior[static_cast<std::size_t>(i)]);
    Tensor<S> noiset({1, std::max(1, config.noise_dim)});
    for (int i = 0; i < config.noise_dim; ++i) noiset[i] = static_cast<S>(noise[static_cast<std::size_t>(i)]);
    auto out = transform(g, p, head, kpv, onehot, g.leaf(priort), g.leaf(noiset), Mode::kInfer, 0);
    KeypointSet next;
    next.channels = config.k;
    for (auto v : out.tensor().data) next.coords.push_back(static_cast<float>(v));
    return next;
  }

  // Full pipeline for one observation and one candidate action: encode once,
  // one noise draw per head, one decode per head against the current frame's
  // skip maps.
  HypothesisSet predict_hypotheses(const Observation& obs, int action, std::uint64_t seed) const {
    if (action < 0 || action >= config.vocab_size)
      throw ShapeError("predict_hypotheses: action " + std::to_string(action) + " out of range");
    Graph<S> g;
    auto p = stage(g);
    auto enc = encode(g, p, g.leaf(pack_image(obs)), g.leaf(pack_stategrip(obs)), Mode::kInfer, 0);
    auto prior = prior_head(g, p, enc.keypoints);
    auto onehot_t = one_hot<S>(action, config.vocab_size);
    HypothesisSet hyps;
    for (int j = 0; j < config.n_h; ++j) {
      Tensor<S> noiset({1, std::max(1, config.noise_dim)});
      Rng rng(hash_combine(seed, static_cast<std::uint64_t>(j)));
      for (int i = 0; i < config.noise_dim; ++i) noiset[i] = static_cast<S>(rng.uniform(-1.0, 1.0));
      auto kp2 = transform(g, p, j, enc.keypoints, g.leaf(row_vector(onehot_t)), prior,
                           g.leaf(noiset), Mode::kInfer, 0);
      auto dec = decode(g, p, kp2, enc.skips);
      Hypothesis h;
      h.index = j;
      h.predicted.image = Tensor<float>({config.image_hw, config.image_hw, 3});
      for (std::int64_t i = 0; i < h.predicted.image.numel(); ++i)
        h.predicted.image[i] = static_cast<float>(dec.image.tensor()[i]);
      for (int i = 0; i < config.state_dim; ++i)
        h.predicted.state.push_back(static_cast<float>(dec.state.tensor()[i]));
      h.predicted.gripper = static_cast<float>(dec.gripper.tensor()[0]);
      for (int i = 0; i < config.vocab_size; ++i)
        h.action_dist.push_back(static_cast<float>(dec.action_dist.tensor()[i]));
      h.keypoints.channels = config.k;
      for (auto v : kp2.tensor().data) h.keypoints.coords.push_back(static_cast<float>(v));
      hyps.push_back(std::move(h));
    }
    return hyps;
  }

 private:
  static Tensor<S> row_vector(Tensor<S> v) {
    Tensor<S> r;
    r.shape = {1, v.shape[0]};
    r.data = std::move(v.data);
    return r;
  }

  void add_dense(const std::string& name, int in, int out, std::uint64_t seed) {
    params.add(name + ".w", glorot_uniform<S>({in, out}, in, out, hash_combine(seed, fnv1a(name))));
    params.add(name + ".b", Tensor<S>({out}));
  }

  void add_conv(const std::string& name, int cin, int cout, std::uint64_t seed) {
    params.add(name + ".w", glorot_uniform<S>({5, 5, cin, cout}, 25 * cin, 25 * cout,
                                              hash_combine(seed, fnv1a(name))));
    params.add(name + ".b", Tensor<S>({cout}));
  }

  void init_parameters(std::uint64_t seed) {
    const int e = config.enc_base;
    const int d = config.dec_base;
    const int kp2 = config.keypoint_dim();
    const int v = config.vocab_size;
    add_conv("enc.conv1", 3, e, seed);
    add_conv("enc.conv2", e + state_input_dim(), e, seed);
    add_conv("enc.conv3", e, 2 * e, seed);
    add_conv("enc.conv4", 2 * e, 2 * e, seed);
    add_conv("enc.conv5", 2 * e, config.k, seed);
    const int tin = kp2 + 2 * v + config.noise_dim;
    for (int j = 0; j < config.n_h; ++j) {
      const std::string pre = "trans" + std::to_string(j);
      add_dense(pre + ".fc1", tin, config.transform_width, seed);
      add_dense(pre + ".fc2", config.transform_width, config.transform_width, seed);
      add_dense(pre + ".fc3", config.transform_width, kp2, seed);
    }
    add_dense("dec.embed", kp2, (config.image_hw / 8) * (config.image_hw / 8) * d, seed);
    add_conv("dec.conv1", d + (config.use_skips ? 2 * e : 0), d, seed);
    add_conv("dec.conv2", d + (config.use_skips ? e : 0), d / 2, seed);
    add_conv("dec.conv3", d / 2, d / 2, seed);
    add_conv("dec.out", d / 2, 3, seed);
    add_dense("dec.state", kp2, config.state_dim, seed);
    add_dense("dec.gripper", kp2, 1, seed);
    add_dense("dec.action", kp2, v, seed);
    add_dense("value.fc1", kp2, 64, seed);
    add_dense("value.fc2", 64, 1, seed);
    add_dense("prior.fc", kp2, v, seed);
  }
};

// Packed supervision batch. All rows are sample-major; the builder tiles
// per-sample tensors across hypothesis heads itself.
template <typename S>
struct TrainingBatch {
  Tensor<S> images;                // (B,hw,hw,3) current frames
  Tensor<S> stategrip;             // (B,state_dim+1)
  Tensor<S> action_onehot;         // (B,V) action causing the transition
  Tensor<S> target_image;          // (B,hw,hw,3) next change-point frame
  Tensor<S> target_state;          // (B,state_dim)
  Tensor<S> target_gripper;        // (B,1)
  Tensor<S> target_action_onehot;  // (B,V) action at the target keyframe
  Tensor<S> reward;                // (B,) 0/1 reward-to-go
  Tensor<S> success_mask;          // (B,) 1 on samples from success episodes
};

template <typename S>
struct LossGraph {
  Value<S> total;       // scalar batch loss
  Value<S> mhp_rows;    // (B,) per-sample combined hypothesis cost
  Value<S> cost_rows;   // (B,N_H) per-hypothesis weighted totals
  Value<S> image_rows;  // (B,N_H) per-view costs
  Value<S> state_rows;
  Value<S> gripper_rows;
  Value<S> action_rows;
  Value<S> value_pred;   // (B,)
  Value<S> prior;        // (B,V)
  Value<S> pred_state;   // (B*N_H, state_dim), sample-major
  Value<S> pred_image;   // (B*N_H, hw, hw, 3)
  Value<S> action_dist;  // (B*N_H, V)
  Value<S> keypoints;    // (B, 2K) encoder output
};

// Full training-time forward: encode once, all heads, one shared decode over
// the head-tiled rows, per-view costs, the lambda-relaxed hypothesis
// combination, the value loss on every sample and the prior loss masked to
// success samples.
template <typename S>
LossGraph<S> build_training_graph(const ProspectModel<S>& model, Graph<S>& g,
                                  const typename ProspectModel<S>::GraphParams& p,
                                  const TrainingBatch<S>& batch, Mode mode, double lambda,
                                  std::uint64_t step_seed) {
  const auto& cfg = model.config;
  const int b = batch.images.shape[0];
  const int nh = cfg.n_h;

  auto images = g.leaf(batch.images, "batch.images");
  auto stategrip = g.leaf(batch.stategrip, "batch.stategrip");
  auto action_onehot = g.leaf(batch.action_onehot, "batch.action");
  auto target_image = g.leaf(batch.target_image, "batch.target_image");
  auto target_state = g.leaf(batch.target_state, "batch.target_state");
  auto target_gripper = g.leaf(batch.target_gripper, "batch.target_gripper");
  auto target_action = g.leaf(batch.target_action_onehot, "batch.target_action");
  auto reward = g.leaf(batch.reward, "batch.reward");
  auto mask = g.leaf(batch.success_mask, "batch.success_mask");

  auto enc = model.encode(g, p, images, stategrip, mode, hash_combine(step_seed, 0xE));
  auto prior = model.prior_head(g, p, enc.keypoints);
  auto value_pred = model.value_head(g, p, enc.keypoints);

  // Head-major transforms, interleaved to sample-major rows (i*nh + j).
  std::vector<Value<S>> head_kp;
  for (int j = 0; j < nh; ++j) {
    Tensor<S> noise({b, std::max(1, cfg.noise_dim)});
    Rng rng(hash_combine(step_seed, 0x100 + static_cast<std::uint64_t>(j)));
    for (auto& v : noise.data) v = static_cast<S>(rng.uniform(-1.0, 1.0));
    auto t = model.transform(g, p, j, enc.keypoints, action_onehot, prior, g.leaf(noise), mode,
                             hash_combine(step_seed, 0x200 + static_cast<std::uint64_t>(j)));
    head_kp.push_back(reshape(t, {b, 1, cfg.keypoint_dim()}));
  }
  auto kp_all = reshape(concat<S>(head_kp, 1), {b * nh, cfg.keypoint_dim()});

  auto tile_rows = [&](Value<S> v) {
    auto shape = v.tensor().shape;
    std::vector<int> with_axis = shape;
    with_axis.insert(with_axis.begin() + 1, 1);
    auto r = reshape(v, with_axis);
    auto tiled = concat<S>(std::vector<Value<S>>(static_cast<std::size_t>(nh), r), 1);
    std::vector<int> out_shape = shape;
    out_shape[0] *= nh;
    return reshape(tiled, out_shape);
  };

  std::vector<Value<S>> skips;
  if (cfg.use_skips)
    for (auto s : enc.skips) skips.push_back(tile_rows(s));
  auto dec = model.decode(g, p, kp_all, skips);

  auto image_rows = reshape(mae_rows(dec.image, tile_rows(target_image)), {b, nh});
  auto state_rows = reshape(mae_rows(dec.state, tile_rows(target_state)), {b, nh});
  auto gripper_rows = reshape(mae_rows(dec.gripper, tile_rows(target_gripper)), {b, nh});
  auto action_rows = reshape(ce_rows(dec.action_dist, tile_rows(target_action)), {b, nh});

  auto cost_rows = add(add(scale(image_rows, static_cast<S>(cfg.w_image)),
                           scale(state_rows, static_cast<S>(cfg.w_state))),
                       add(scale(gripper_rows, static_cast<S>(cfg.w_gripper)),
                           scale(action_rows, static_cast<S>(cfg.w_action))));
  auto mhp = mhp_combine_rows(cost_rows, lambda);

  auto value_bce = bce_rows(value_pred, reward);
  auto prior_ce = ce_rows(prior, action_onehot);
  double n_success = 0;
  for (auto v : batch.success_mask.data) n_success += static_cast<double>(v);
  auto prior_term = scale(sum_reduce(multiply(prior_ce, mask)),
                          static_cast<S>(1.0 / std::max(1.0, n_success)));

  LossGraph<S> out;
  out.total = add(add(mean_reduce(mhp), mean_reduce(value_bce)), prior_term);
  out.mhp_rows = mhp;
  out.cost_rows = cost_rows;
  out.image_rows = image_rows;
  out.state_rows = state_rows;
  out.gripper_rows = gripper_rows;
  out.action_rows = action_rows;
  out.value_pred = value_pred;
  out.prior = prior;
  out.pred_state = dec.state;
  out.pred_image = dec.image;
  out.action_dist = dec.action_dist;
  out.keypoints = enc.keypoints;
  return out;
}

// Model directory layout: weights.pwt (PWT1 checkpoint) plus config.txt
// (key=value ModelConfig).
inline void save_model(const ProspectModel<float>& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  detail::write_file(dir + "/config.txt", model_config_to_text(model.config));
  save_checkpoint(model.params, dir + "/weights.pwt");
}

inline ProspectModel<float> load_model(const std::string& dir) {
  auto cfg = parse_model_config(detail::read_file(dir + "/config.txt"));
  return ProspectModel<float>(cfg, load_checkpoint(dir + "/weights.pwt"));
}

}  // namespace prospect
