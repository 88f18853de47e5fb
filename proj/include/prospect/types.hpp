#pragma once

#include <cstdint>
#include <cstdio>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "prospect/checkpoint.hpp"
#include "prospect/netblocks.hpp"
#include "prospect/tensor.hpp"

namespace prospect {

// One sensor snapshot: 64x64x3 image in [0,1], pose state in [-1,1] and a
// gripper scalar in (0,1).
struct Observation {
  Tensor<float> image;
  std::vector<float> state;
  float gripper = 0.5f;
};

inline void validate_observation(const Observation& obs) {
  for (float v : obs.image.data)
    if (!(v >= 0.0f && v <= 1.0f)) throw ShapeError("observation image scalar out of [0,1]");
  for (float v : obs.state)
    if (!(v >= -1.0f && v <= 1.0f)) throw ShapeError("observation state coordinate out of [-1,1]");
  if (!(obs.gripper > 0.0f && obs.gripper < 1.0f))
    throw ShapeError("observation gripper out of (0,1)");
}

// One predicted future: decoded observation, next-action distribution and the
// predicted keypoint vector it was decoded from.
struct Hypothesis {
  int index = 0;
  Observation predicted;
  std::vector<float> action_dist;
  KeypointSet keypoints;
};

using HypothesisSet = std::vector<Hypothesis>;

struct ModelConfig {
  std::string domain = "stack";
  int n_h = 4;
  int noise_dim = 32;
  bool use_skips = true;
  double dropout = 0.125;
  int k = 32;  // keypoint channels; the hidden state has 2k coordinates
  int vocab_size = 0;
  int state_dim = 0;
  double w_image = 1.0;
  double w_state = 1.0;
  double w_gripper = 1.0;
  double w_action = 1.0;
  // Channel widths: encoder convs {enc_base, enc_base, 2*enc_base,
  // 2*enc_base}, decoder embedding 8*8*dec_base with stages {dec_base,
  // dec_base/2, dec_base/2}.
  int enc_base = 8;
  int dec_base = 8;
  int transform_width = 256;
  // Square input image extent. The encoder downsamples by 8, so this must be
  // a multiple of 8 and at least 16 to keep the soft-argmax grid non-trivial.
  int image_hw = 64;

  int keypoint_dim() const { return 2 * k; }

  void validate() const {
    if (n_h < 1) throw ShapeError("model config: n_h must be >= 1");
    if (noise_dim < 0) throw ShapeError("model config: noise_dim must be >= 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ShapeError("model config: dropout must be in [0,1)");
    if (k < 1) throw ShapeError("model config: k must be >= 1");
    if (vocab_size < 1) throw ShapeError("model config: vocab_size must be set");
    if (state_dim < 1) throw ShapeError("model config: state_dim must be set");
    if (w_image < 0 || w_state < 0 || w_gripper < 0 || w_action < 0)
      throw ShapeError("model config: loss weights must be >= 0");
    if (enc_base < 1 || dec_base < 2 || dec_base % 2 != 0)
      throw ShapeError("model config: bad channel widths");
    if (image_hw < 16 || image_hw % 8 != 0)
      throw ShapeError("model config: image_hw must be a multiple of 8, >= 16");
    if (domain != "stack" && domain != "nav") throw ShapeError("model config: unknown domain");
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

// Plain-text key=value rendering of a ModelConfig (the model directory's
// config file).
inline std::string model_config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "# prospect model configuration\n";
  os << "domain=" << c.domain << "\n";
  os << "n_h=" << c.n_h << "\n";
  os << "noise_dim=" << c.noise_dim << "\n";
  os << "use_skips=" << (c.use_skips ? "on" : "off") << "\n";
  os << "dropout=" << detail::fmt_double(c.dropout) << "\n";
  os << "k=" << c.k << "\n";
  os << "vocab_size=" << c.vocab_size << "\n";
  os << "state_dim=" << c.state_dim << "\n";
  os << "w_image=" << detail::fmt_double(c.w_image) << "\n";
  os << "w_state=" << detail::fmt_double(c.w_state) << "\n";
  os << "w_gripper=" << detail::fmt_double(c.w_gripper) << "\n";
  os << "w_action=" << detail::fmt_double(c.w_action) << "\n";
  os << "enc_base=" << c.enc_base << "\n";
  os << "dec_base=" << c.dec_base << "\n";
  os << "transform_width=" << c.transform_width << "\n";
  os << "image_hw=" << c.image_hw << "\n";
  return os.str();
}

inline bool parse_onoff(const std::string& v, const std::string& key) {
  if (v == "on" || v == "1" || v == "true") return true;
  if (v == "off" || v == "0" || v == "false") return false;
  throw IoError("config: bad flag value '" + v + "' for " + key);
}

// Applies one key=value pair; unknown keys are rejected.
inline void apply_model_config_key(ModelConfig& c, const std::string& key, const std::string& v) {
  try {
    if (key == "domain") c.domain = v;
    else if (key == "n_h") c.n_h = std::stoi(v);
    else if (key == "noise_dim") c.noise_dim = std::stoi(v);
    else if (key == "use_skips") c.use_skips = parse_onoff(v, key);
    else if (key == "dropout") c.dropout = std::stod(v);
    else if (key == "k") c.k = std::stoi(v);
    else if (key == "vocab_size") c.vocab_size = std::stoi(v);
    else if (key == "state_dim") c.state_dim = std::stoi(v);
    else if (key == "w_image") c.w_image = std::stod(v);
    else if (key == "w_state") c.w_state = std::stod(v);
    else if (key == "w_gripper") c.w_gripper = std::stod(v);
    else if (key == "w_action") c.w_action = std::stod(v);
    else if (key == "enc_base") c.enc_base = std::stoi(v);
    else if (key == "dec_base") c.dec_base = std::stoi(v);
    else if (key == "transform_width") c.transform_width = std::stoi(v);
    else if (key == "image_hw") c.image_hw = std::stoi(v);
    else throw IoError("config: unknown key '" + key + "'");
  } catch (const std::invalid_argument&) {
    throw IoError("config: bad value '" + v + "' for " + key);
  }
}

inline ModelConfig parse_model_config(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError("config: malformed line '" + line + "'");
    apply_model_config_key(c, line.substr(0, eq), line.substr(eq + 1));
  }
  return c;
}

}  // namespace prospect
