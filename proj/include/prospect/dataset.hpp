#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "prospect/checkpoint.hpp"
#include "prospect/rng.hpp"
#include "prospect/types.hpp"
#include "prospect/worlds.hpp"

namespace prospect {

// One training example: consecutive keyframes of one episode. `action` caused
// the transition; `target_action` is the action at the target keyframe (the
// domain's done id on terminal pairs).
struct SupervisionPair {
  const Observation* current = nullptr;
  const Observation* target = nullptr;
  int action = 0;
  int target_action = 0;
  int reward_to_go = 0;
  bool from_success = false;
};

struct DatasetManifestRow {
  std::string id;
  std::string file;
  bool success = false;
  int n_keyframes = 0;
  std::string domain;
};

// ---------------------------------------------------------------------------
// Episode files. Format: magic "PEP1"; u32 version=1; u32 n_keyframes;
// u32 H, W, C; u32 state_dim; then per keyframe: f32 image (H*W*C, row-major,
// channel-last), f32 state, f32 gripper, u32 action_id, f32 reward_to_go.

inline std::string encode_episode(const Episode& ep) {
  std::string out;
  out.append("PEP1", 4);
  detail::put_u32(out, 1);
  detail::put_u32(out, static_cast<std::uint32_t>(ep.keyframes.size()));
  detail::put_u32(out, 64);
  detail::put_u32(out, 64);
  detail::put_u32(out, 3);
  const std::uint32_t state_dim =
      ep.keyframes.empty() ? 0 : static_cast<std::uint32_t>(ep.keyframes[0].obs.state.size());
  detail::put_u32(out, state_dim);
  for (const auto& k : ep.keyframes) {
    if (k.obs.image.shape != std::vector<int>{64, 64, 3})
      throw IoError("episode image must be 64x64x3");
    if (k.obs.state.size() != state_dim) throw IoError("inconsistent state_dim in episode");
    for (float v : k.obs.image.data) detail::put_f32(out, v);
    for (float v : k.obs.state) detail::put_f32(out, v);
    detail::put_f32(out, k.obs.gripper);
    detail::put_u32(out, static_cast<std::uint32_t>(k.action));
    detail::put_f32(out, static_cast<float>(k.reward_to_go));
  }
  return out;
}

inline Episode decode_episode(const std::string& bytes, const std::string& origin,
                              Domain domain, bool success) {
  detail::ByteReader r(bytes, origin);
  if (r.bytes(4) != "PEP1") throw IoError(origin + ": bad magic, expected PEP1");
  if (r.u32() != 1) throw IoError(origin + ": unsupported version");
  const std::uint32_t n = r.u32();
  const std::uint32_t h = r.u32(), w = r.u32(), c = r.u32();
  if (h != 64 || w != 64 || c != 3)
    throw IoError(origin + ": unexpected image dims " + std::to_string(h) + "x" +
                  std::to_string(w) + "x" + std::to_string(c));
  const std::uint32_t state_dim = r.u32();
  Episode ep;
  ep.domain = domain;
  ep.success = success;
  for (std::uint32_t i = 0; i < n; ++i) {
    Keyframe k;
    k.obs.image = Tensor<float>({64, 64, 3});
    for (auto& v : k.obs.image.data) v = r.f32();
    k.obs.state.resize(state_dim);
    for (auto& v : k.obs.state) v = r.f32();
    k.obs.gripper = r.f32();
    k.action = static_cast<int>(r.u32());
    k.reward_to_go = static_cast<int>(r.f32());
    ep.keyframes.push_back(std::move(k));
  }
  if (!r.exhausted()) throw IoError(origin + ": trailing bytes after last keyframe");
  return ep;
}

// ---------------------------------------------------------------------------
// Dataset directory: manifest.txt plus one binary file per episode.
// Manifest: header line "PROSPECT-DATASET v1"; one line per episode
// "id,file,success,n_keyframes,domain"; final line the action vocabulary in
// id order.

inline std::vector<DatasetManifestRow> save_dataset(const std::vector<Episode>& episodes,
                                                    const std::string& path) {
  if (episodes.empty()) throw IoError("save_dataset: no episodes");
  std::filesystem::create_directories(path);
  std::vector<DatasetManifestRow> manifest;
  std::ostringstream text;
  text << "PROSPECT-DATASET v1\n";
  for (std::size_t i = 0; i < episodes.size(); ++i) {
    const auto& ep = episodes[i];
    char idbuf[16];
    std::snprintf(idbuf, sizeof(idbuf), "ep%05zu", i);
    DatasetManifestRow row;
    row.id = idbuf;
    row.file = row.id + ".pep";
    row.success = ep.success;
    row.n_keyframes = static_cast<int>(ep.keyframes.size());
    row.domain = domain_name(ep.domain);
    detail::write_file(path + "/" + row.file, encode_episode(ep));
    text << row.id << ',' << row.file << ',' << (row.success ? 1 : 0) << ',' << row.n_keyframes
         << ',' << row.domain << "\n";
    manifest.push_back(std::move(row));
  }
  const ActionVocab vocab = ActionVocab::for_domain(episodes[0].domain);
  for (int i = 0; i < vocab.size(); ++i) text << (i ? "," : "") << vocab.name(i);
  text << "\n";
  detail::write_file(path + "/manifest.txt", text.str());
  return manifest;
}

inline std::vector<Episode> load_dataset(const std::string& path) {
  const std::string manifest = detail::read_file(path + "/manifest.txt");
  std::istringstream in(manifest);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  if (lines.size() < 3 || lines[0] != "PROSPECT-DATASET v1")
    throw IoError(path + "/manifest.txt: bad header");
  // Header line, episode rows, and the vocabulary as the final line.
  std::vector<Episode> episodes;
  for (std::size_t r = 1; r + 1 < lines.size(); ++r) {
    std::vector<std::string> cols;
    std::istringstream ls(lines[r]);
    std::string col;
    while (std::getline(ls, col, ',')) cols.push_back(col);
    if (cols.size() != 5)
      throw IoError(path + "/manifest.txt: malformed row '" + lines[r] + "'");
    const std::string file = path + "/" + cols[1];
    auto ep = decode_episode(detail::read_file(file), file, parse_domain(cols[4]), cols[2] == "1");
    if (static_cast<int>(ep.keyframes.size()) != std::stoi(cols[3]))
      throw IoError(file + ": keyframe count disagrees with the manifest");
    episodes.push_back(std::move(ep));
  }
  if (episodes.empty()) throw IoError(path + ": empty dataset");
  return episodes;
}

// ---------------------------------------------------------------------------
// Supervision pairs and batches.

inline std::vector<SupervisionPair> episode_pairs(const Episode& ep) {
  const ActionVocab vocab = ActionVocab::for_domain(ep.domain);
  std::vector<SupervisionPair> pairs;
  for (std::size_t i = 0; i + 1 < ep.keyframes.size(); ++i) {
    SupervisionPair p;
    p.current = &ep.keyframes[i].obs;
    p.target = &ep.keyframes[i + 1].obs;
    p.action = ep.keyframes[i].action;
    p.target_action = i + 2 < ep.keyframes.size() ? ep.keyframes[i + 1].action : vocab.done_id();
    p.reward_to_go = ep.keyframes[i].reward_to_go;
    p.from_success = ep.success;
    pairs.push_back(p);
  }
  return pairs;
}

enum class Split { kTrain, kVal };

// Per-episode split by seeded hash, so an episode never straddles splits and
// every consumer of a dataset agrees on the membership.
constexpr std::uint64_t kSplitSeed = 0x51717;

inline Split episode_split(std::size_t episode_index, double val_fraction) {
  const std::uint64_t h = hash_combine(kSplitSeed, hash_u64(0xDA7A + episode_index));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  return u < val_fraction ? Split::kVal : Split::kTrain;
}

// Deterministic shuffled batch stream over the supervision pairs of a split.
class BatchStream {
 public:
  BatchStream(const std::vector<Episode>& episodes, int batch_size, Split split,
              double val_fraction, std::uint64_t seed, bool success_only = false)
      : batch_size_(batch_size), seed_(seed) {
    if (batch_size < 1) throw ShapeError("make_batches: batch_size must be >= 1");
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      if (episode_split(e, val_fraction) != split) continue;
      if (success_only && !episodes[e].success) continue;
      auto pairs = episode_pairs(episodes[e]);
      all_pairs_.insert(all_pairs_.end(), pairs.begin(), pairs.end());
    }
    if (all_pairs_.empty())
      throw ShapeError("make_batches: split holds no supervision pairs");
    order_.resize(all_pairs_.size());
    for (std::size_t i = 0; i < order_.size(); ++i) order_[i] = i;
    reshuffle();
  }

  std::size_t pair_count() const { return all_pairs_.size(); }
  const std::vector<SupervisionPair>& pairs() const { return all_pairs_; }

  // Next batch of exactly batch_size pairs; reshuffles at epoch boundaries.
  std::vector<const SupervisionPair*> next() {
    std::vector<const SupervisionPair*> batch;
    batch.reserve(static_cast<std::size_t>(batch_size_));
    for (int i = 0; i < batch_size_; ++i) {
      if (cursor_ == order_.size()) {
        ++epoch_;
        reshuffle();
      }
      batch.push_back(&all_pairs_[order_[cursor_++]]);
    }
    return batch;
  }

 private:
  void reshuffle() {
    Rng rng(hash_combine(seed_, 0xE70C + epoch_));
    for (std::size_t i = order_.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(i));
      std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
  }

  std::vector<SupervisionPair> all_pairs_;
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  std::uint64_t epoch_ = 0;
  int batch_size_ = 0;
  std::uint64_t seed_ = 0;
};

}  // namespace prospect
