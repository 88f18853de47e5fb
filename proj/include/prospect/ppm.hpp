#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "prospect/checkpoint.hpp"
#include "prospect/tensor.hpp"
#include "prospect/types.hpp"
#include "prospect/worlds.hpp"

namespace prospect {

// Binary PPM: "P6\n<W> <H>\n255\n" then H*W*3 bytes row-major RGB with
// value = round(scalar * 255).
inline std::string encode_ppm(const Tensor<float>& image) {
  if (image.rank() != 3 || image.shape[2] != 3)
    throw ShapeError("encode_ppm: expects HxWx3, got " + shape_str(image.shape));
  const int h = image.shape[0], w = image.shape[1];
  std::ostringstream os;
  os << "P6\n" << w << ' ' << h << "\n255\n";
  std::string out = os.str();
  out.reserve(out.size() + static_cast<std::size_t>(image.numel()));
  for (std::int64_t i = 0; i < image.numel(); ++i) {
    const float v = image[i];
    if (!(v >= 0.0f && v <= 1.0f))
      throw ShapeError("encode_ppm: scalar out of [0,1]");
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0f))));
  }
  return out;
}

inline void export_ppm(const Tensor<float>& image, const std::string& path) {
  detail::write_file(path, encode_ppm(image));
}

// Minimal PPM reader for round-trip checks.
inline Tensor<float> read_ppm(const std::string& path) {
  const std::string data = detail::read_file(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P6" || maxval != 255) throw IoError(path + ": not an 8-bit P6 PPM");
  in.get();  // the single whitespace after the header
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (data.size() != offset + static_cast<std::size_t>(w) * h * 3)
    throw IoError(path + ": payload size mismatch");
  Tensor<float> img({h, w, 3});
  for (std::int64_t i = 0; i < img.numel(); ++i)
    img[i] = static_cast<float>(static_cast<unsigned char>(data[offset + static_cast<std::size_t>(i)])) / 255.0f;
  return img;
}

// Side-by-side panel image: the N_H predicted frames (plus the target frame
// when given) separated by 2-pixel black columns.
inline Tensor<float> hypothesis_grid(const HypothesisSet& hyps, const Observation* target) {
  if (hyps.empty()) throw ShapeError("hypothesis_grid: no hypotheses");
  const int hw = hyps[0].predicted.image.shape[0];
  const int panels = static_cast<int>(hyps.size()) + (target ? 1 : 0);
  const int width = panels * hw + (panels - 1) * 2;
  Tensor<float> grid({hw, width, 3});  // separators stay zero
  auto blit = [&](const Tensor<float>& img, int panel) {
    const int left = panel * (hw + 2);
    for (int r = 0; r < hw; ++r)
      for (int c = 0; c < hw; ++c)
        for (int ch = 0; ch < 3; ++ch) grid.at({r, left + c, ch}) = img.at({r, c, ch});
  };
  for (std::size_t j = 0; j < hyps.size(); ++j) blit(hyps[j].predicted.image, static_cast<int>(j));
  if (target) blit(target->image, panels - 1);
  return grid;
}

// Writes the grid PPM plus a text sidecar describing each panel: predicted
// state, argmax action name and value estimate.
inline void render_hypothesis_grid(const HypothesisSet& hyps, const Observation* target,
                                   const std::string& path_prefix, const ActionVocab& vocab,
                                   const std::vector<double>& values) {
  export_ppm(hypothesis_grid(hyps, target), path_prefix + ".ppm");
  std::ostringstream os;
  for (std::size_t j = 0; j < hyps.size(); ++j) {
    int argmax = 0;
    for (std::size_t a = 1; a < hyps[j].action_dist.size(); ++a)
      if (hyps[j].action_dist[a] > hyps[j].action_dist[static_cast<std::size_t>(argmax)])
        argmax = static_cast<int>(a);
    os << "panel " << j << ": state=(";
    for (std::size_t i = 0; i < hyps[j].predicted.state.size(); ++i)
      os << (i ? "," : "") << detail::fmt_double(hyps[j].predicted.state[i]);
    os << ") gripper=" << detail::fmt_double(hyps[j].predicted.gripper);
    os << " action=" << vocab.name(argmax);
    if (j < values.size()) os << " value=" << detail::fmt_double(values[j]);
    os << "\n";
  }
  if (target) os << "panel " << hyps.size() << ": target frame\n";
  detail::write_file(path_prefix + ".txt", os.str());
}

}  // namespace prospect
