#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "prospect/rng.hpp"
#include "prospect/tensor.hpp"

namespace prospect {

class IoError : public std::runtime_error {
 public:
  explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Ordered named parameter set. Order is construction order and is preserved
// through checkpoints, so save(load(f)) reproduces f byte for byte.
template <typename S>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<S> tensor;
  };

  Tensor<S>& add(const std::string& name, Tensor<S> t) {
    if (index_.count(name)) throw IoError("duplicate parameter name: " + name);
    index_[name] = static_cast<int>(entries_.size());
    entries_.push_back({name, std::move(t)});
    return entries_.back().tensor;
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  Tensor<S>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("unknown parameter: " + name);
    return entries_[static_cast<std::size_t>(it->second)].tensor;
  }
  const Tensor<S>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("unknown parameter: " + name);
    return entries_[static_cast<std::size_t>(it->second)].tensor;
  }

  const std::vector<Entry>& entries() const { return entries_; }
  std::vector<Entry>& entries() { return entries_; }
  std::size_t size() const { return entries_.size(); }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& e : entries_) n += e.tensor.numel();
    return n;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, int> index_;
};

// Fan-based uniform init, seeded per parameter name so shared layers get
// identical draws across config variants.
template <typename S>
Tensor<S> glorot_uniform(const std::vector<int>& shape, int fan_in, int fan_out,
                         std::uint64_t seed) {
  Rng rng(seed);
  const double limit = std::sqrt(6.0 / (fan_in + fan_out));
  Tensor<S> t(shape);
  for (auto& v : t.data) v = static_cast<S>(rng.uniform(-limit, limit));
  return t;
}

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  b[0] = static_cast<char>(v & 0xff);
  b[1] = static_cast<char>((v >> 8) & 0xff);
  b[2] = static_cast<char>((v >> 16) & 0xff);
  b[3] = static_cast<char>((v >> 24) & 0xff);
  out.append(b, 4);
}

inline void put_f32(std::string& out, float v) {
  std::uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& data, std::string origin)
      : data_(data), origin_(std::move(origin)) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = static_cast<std::uint8_t>(data_[pos_]) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 1])) << 8) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 2])) << 16) |
                      (static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + 3])) << 24);
    pos_ += 4;
    return v;
  }

  float f32() {
    std::uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  bool exhausted() const { return pos_ == data_.size(); }

  void need(std::size_t n) {
    if (pos_ + n > data_.size())
      throw IoError(origin_ + ": truncated (needed " + std::to_string(n) + " bytes at offset " +
                    std::to_string(pos_) + ")");
  }

 private:
  const std::string& data_;
  std::string origin_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return data;
}

inline void write_file(const std::string& path, const std::string& data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace detail

// Checkpoint file: magic "PWT1", little-endian u32 parameter count, then per
// parameter: u32 name length, UTF-8 name, u32 rank, u32 extents, f32 data.
inline void save_checkpoint(const ParamStore<float>& params, const std::string& path) {
  std::string out;
  out.append("PWT1", 4);
  detail::put_u32(out, static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.append(e.name);
    detail::put_u32(out, static_cast<std::uint32_t>(e.tensor.rank()));
    for (int d : e.tensor.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : e.tensor.data) detail::put_f32(out, v);
  }
  detail::write_file(path, out);
}

inline ParamStore<float> load_checkpoint(const std::string& path) {
  const std::string data = detail::read_file(path);
  detail::ByteReader r(data, path);
  if (r.bytes(4) != "PWT1") throw IoError(path + ": bad magic, expected PWT1");
  const std::uint32_t count = r.u32();
  ParamStore<float> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = r.u32();
    const std::string name = r.bytes(name_len);
    const std::uint32_t rank = r.u32();
    std::vector<int> shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.u32()));
    Tensor<float> t(shape.empty() ? std::vector<int>{} : shape);
    if (shape.empty()) t = Tensor<float>::scalar(0.0f);
    for (auto& v : t.data) v = r.f32();
    params.add(name, std::move(t));
  }
  if (!r.exhausted()) throw IoError(path + ": trailing bytes after last parameter");
  return params;
}

}  // namespace prospect
