#pragma once

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "prospect/dataset.hpp"
#include "prospect/gradcheck_suite.hpp"
#include "prospect/model.hpp"
#include "prospect/planner.hpp"
#include "prospect/ppm.hpp"
#include "prospect/trainer.hpp"
#include "prospect/worlds.hpp"

namespace prospect::cli {

namespace detail_cli {

inline int find_episode(const std::vector<Episode>& episodes, const std::string& id) {
  // Manifest ids are epNNNNN in save order.
  if (id.size() < 3 || id.substr(0, 2) != "ep")
    throw IoError("episode id must look like ep00042, got '" + id + "'");
  const int index = std::stoi(id.substr(2));
  if (index < 0 || index >= static_cast<int>(episodes.size()))
    throw IoError("episode " + id + " out of range (dataset has " +
                  std::to_string(episodes.size()) + ")");
  return index;
}

inline const Observation& keyframe_obs(const Episode& ep, int frame) {
  if (frame < 0 || frame >= static_cast<int>(ep.keyframes.size()))
    throw IoError("frame " + std::to_string(frame) + " out of range (episode has " +
                  std::to_string(ep.keyframes.size()) + " keyframes)");
  return ep.keyframes[static_cast<std::size_t>(frame)].obs;
}

struct GenDataArgs {
  std::string domain = "stack";
  int episodes = 100;
  std::uint64_t seed = 0;
  std::string out;
  double expert_frac = 0.45;
  double noisy_frac = 0.35;
  double adversarial_frac = 0.20;
};

inline int run_gen_data(const GenDataArgs& args) {
  if (std::fabs(args.expert_frac + args.noisy_frac + args.adversarial_frac - 1.0) > 1e-6)
    throw IoError("behaviour fractions must sum to 1");
  const Domain domain = parse_domain(args.domain);
  std::vector<Episode> episodes;
  int successes = 0;
  for (int i = 0; i < args.episodes; ++i) {
    const double frac = (static_cast<double>(i) + 0.5) / args.episodes;
    Behavior b = frac < args.expert_frac
                     ? Behavior::kExpert
                     : (frac < args.expert_frac + args.noisy_frac ? Behavior::kNoisy
                                                                  : Behavior::kAdversarial);
    auto world = sample_world(domain, hash_combine(args.seed, static_cast<std::uint64_t>(i)));
    episodes.push_back(scripted_episode(world, b,
                                        hash_combine(args.seed, 0xB00 + static_cast<std::uint64_t>(i))));
    successes += episodes.back().success ? 1 : 0;
  }
  save_dataset(episodes, args.out);
  std::printf("wrote %d %s episodes to %s (%d successful)\n", args.episodes, args.domain.c_str(),
              args.out.c_str(), successes);
  return 0;
}

struct TrainArgs {
  std::string data;
  std::string out;
  TrainConfig tc;
  ModelConfig mc;
  std::string skips = "on";
};

inline int run_train(const TrainArgs& args_in) {
  TrainArgs args = args_in;
  auto episodes = load_dataset(args.data);
  const Domain domain = episodes[0].domain;
  const ActionVocab vocab = ActionVocab::for_domain(domain);
  args.mc.domain = domain_name(domain);
  args.mc.vocab_size = vocab.size();
  args.mc.state_dim = static_cast<int>(episodes[0].keyframes[0].obs.state.size());
  args.mc.use_skips = parse_onoff(args.skips, "skips");
  args.mc.validate();
  args.tc.validate();
  ProspectModel<float> model(args.mc, args.tc.seed);
  auto report = train_run(model, episodes, args.tc, args.out, /*quiet=*/false);
  std::printf("trained %d steps on %zu episodes\n%s", args.tc.steps, episodes.size(),
              report.to_text().c_str());
  return 0;
}

struct EvalArgs {
  std::string data;
  std::string model;
  std::string report;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;
};

inline int run_eval(const EvalArgs& args) {
  auto episodes = load_dataset(args.data);
  auto model = load_model(args.model);
  auto report = evaluate(model, episodes, Split::kVal, args.val_fraction, args.seed);
  detail::write_file(args.report, report.to_text());
  std::printf("%s", report.to_text().c_str());
  return 0;
}

struct PredictArgs {
  std::string model;
  std::string data;
  std::string episode;
  int frame = 0;
  std::string action;
  std::uint64_t seed = 0;
  std::string out;
};

inline int run_predict(const PredictArgs& args) {
  auto episodes = load_dataset(args.data);
  auto model = load_model(args.model);
  const ActionVocab vocab = ActionVocab::for_domain(parse_domain(model.config.domain));
  const int index = find_episode(episodes, args.episode);
  const Episode& ep = episodes[static_cast<std::size_t>(index)];
  const Observation& obs = keyframe_obs(ep, args.frame);
  const int action = vocab.id_by_name(args.action);
  auto hyps = model.predict_hypotheses(obs, action, args.seed);
  std::vector<double> values;
  for (const auto& h : hyps) values.push_back(model.value_of(h.keypoints));
  const Observation* target = args.frame + 1 < static_cast<int>(ep.keyframes.size())
                                  ? &ep.keyframes[static_cast<std::size_t>(args.frame) + 1].obs
                                  : nullptr;
  render_hypothesis_grid(hyps, target, args.out, vocab, values);
  std::printf("wrote %s.ppm and %s.txt (%zu hypotheses)\n", args.out.c_str(), args.out.c_str(),
              hyps.size());
  return 0;
}

struct PlanArgs {
  std::string model;
  std::string data;
  std::string episode;
  int frame = 0;
  int depth = 3;
  int beam = 8;
  int topk = 3;
  std::uint64_t seed = 0;
  std::string out;
};

inline int run_plan(const PlanArgs& args) {
  auto episodes = load_dataset(args.data);
  auto model = load_model(args.model);
  const ActionVocab vocab = ActionVocab::for_domain(parse_domain(model.config.domain));
  const int index = find_episode(episodes, args.episode);
  const Observation& obs = keyframe_obs(episodes[static_cast<std::size_t>(index)], args.frame);
  auto plan = plan_from_observation(model, obs, args.depth, args.beam, args.topk, args.seed);
  std::ostringstream os;
  os << "score=" << detail::fmt_double(plan.score) << "\n";
  for (std::size_t i = 0; i < plan.actions.size(); ++i) {
    os << "step " << i << ": " << vocab.name(plan.actions[static_cast<std::size_t>(i)])
       << " value=" << detail::fmt_double(plan.values[i]) << "\n";
    char suffix[32];
    std::snprintf(suffix, sizeof(suffix), "_step%zu.ppm", i);
    export_ppm(plan.predicted_frames[i].image, args.out + suffix);
  }
  detail::write_file(args.out + ".txt", os.str());
  std::printf("%s", os.str().c_str());
  return 0;
}

}  // namespace detail_cli

// Applies --config FILE as key=value defaults: each key becomes a trailing
// --key flag unless the command line already sets it, so explicit flags win
// and unknown keys fail flag parsing.
inline std::vector<std::string> apply_config_overlay(std::vector<std::string> args) {
  std::string config_path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw IoError("--config needs a file argument");
      config_path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (config_path.empty()) return args;
  std::istringstream in(detail::read_file(config_path));
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("config: malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::string flag = "--" + key;
    bool overridden = false;
    for (const auto& a : args)
      if (a == flag || a.rfind(flag + "=", 0) == 0) overridden = true;
    if (overridden) continue;
    args.push_back(flag);
    args.push_back(line.substr(eq + 1));
  }
  return args;
}

inline int cli_main(int argc, const char* const* argv) {
  CLI::App app{"prospection: learned multi-hypothesis future prediction and search"};
  app.require_subcommand(1);
  app.footer("--config FILE provides key=value defaults for the subcommand; flags override it.");

  detail_cli::GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate a scripted-episode dataset");
  gen_cmd->add_option("--domain", gen.domain, "nav or stack")->check(CLI::IsMember({"nav", "stack"}));
  gen_cmd->add_option("--episodes", gen.episodes)->check(CLI::PositiveNumber);
  gen_cmd->add_option("--seed", gen.seed);
  gen_cmd->add_option("--out", gen.out)->required();
  gen_cmd->add_option("--expert-frac", gen.expert_frac);
  gen_cmd->add_option("--noisy-frac", gen.noisy_frac);
  gen_cmd->add_option("--adversarial-frac", gen.adversarial_frac);

  detail_cli::TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a model on a dataset");
  train_cmd->add_option("--data", train.data)->required();
  train_cmd->add_option("--out", train.out)->required();
  train_cmd->add_option("--steps", train.tc.steps);
  train_cmd->add_option("--seed", train.tc.seed);
  train_cmd->add_option("--batch", train.tc.batch_size);
  train_cmd->add_option("--lr", train.tc.learning_rate);
  train_cmd->add_option("--lambda", train.tc.lambda);
  train_cmd->add_option("--val-fraction", train.tc.val_fraction);
  train_cmd->add_option("--nh", train.mc.n_h);
  train_cmd->add_option("--noise-dim", train.mc.noise_dim);
  train_cmd->add_option("--skips", train.skips)->check(CLI::IsMember({"on", "off"}));
  train_cmd->add_option("--dropout", train.mc.dropout);
  train_cmd->add_option("--k", train.mc.k);
  train_cmd->add_option("--enc-base", train.mc.enc_base);
  train_cmd->add_option("--dec-base", train.mc.dec_base);
  train_cmd->add_option("--transform-width", train.mc.transform_width);
  train_cmd->add_option("--w-image", train.mc.w_image);
  train_cmd->add_option("--w-state", train.mc.w_state);
  train_cmd->add_option("--w-gripper", train.mc.w_gripper);
  train_cmd->add_option("--w-action", train.mc.w_action);

  detail_cli::EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "metrics for a trained model");
  eval_cmd->add_option("--data", eval_args.data)->required();
  eval_cmd->add_option("--model", eval_args.model)->required();
  eval_cmd->add_option("--report", eval_args.report)->required();
  eval_cmd->add_option("--val-fraction", eval_args.val_fraction);
  eval_cmd->add_option("--seed", eval_args.seed);

  detail_cli::PredictArgs predict;
  auto* predict_cmd = app.add_subcommand("predict", "render a hypothesis grid for one frame");
  predict_cmd->add_option("--model", predict.model)->required();
  predict_cmd->add_option("--data", predict.data)->required();
  predict_cmd->add_option("--episode", predict.episode)->required();
  predict_cmd->add_option("--frame", predict.frame);
  predict_cmd->add_option("--action", predict.action)->required();
  predict_cmd->add_option("--seed", predict.seed);
  predict_cmd->add_option("--out", predict.out)->required();

  detail_cli::PlanArgs plan;
  auto* plan_cmd = app.add_subcommand("plan", "beam search over predicted futures");
  plan_cmd->add_option("--model", plan.model)->required();
  plan_cmd->add_option("--data", plan.data)->required();
  plan_cmd->add_option("--episode", plan.episode)->required();
  plan_cmd->add_option("--frame", plan.frame);
  plan_cmd->add_option("--depth", plan.depth);
  plan_cmd->add_option("--beam", plan.beam);
  plan_cmd->add_option("--topk", plan.topk);
  plan_cmd->add_option("--seed", plan.seed);
  plan_cmd->add_option("--out", plan.out)->required();

  double tolerance = 1e-5;
  auto* check_cmd = app.add_subcommand("grad-check", "finite-difference gradient verification");
  check_cmd->add_option("--tolerance", tolerance);

  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.push_back(argv[i]);
  try {
    args = apply_config_overlay(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);  // CLI11 consumes the vector form back to front
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {  // --help
      std::cout << app.help();
      return 0;
    }
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (gen_cmd->parsed()) return detail_cli::run_gen_data(gen);
    if (train_cmd->parsed()) return detail_cli::run_train(train);
    if (eval_cmd->parsed()) return detail_cli::run_eval(eval_args);
    if (predict_cmd->parsed()) return detail_cli::run_predict(predict);
    if (plan_cmd->parsed()) return detail_cli::run_plan(plan);
    if (check_cmd->parsed()) return run_grad_check_suite(tolerance, std::cout) ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}

}  // namespace prospect::cli
