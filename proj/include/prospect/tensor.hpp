#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace prospect {

class ShapeError : public std::invalid_argument {
 public:
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

inline std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

// Dense N-dimensional array, row-major flat storage. Scalar is float or
// double; rank 0 (empty shape) holds a single scalar.
template <typename Scalar>
struct Tensor {
  std::vector<int> shape;
  std::vector<Scalar> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> s, Scalar fill = Scalar(0))
      : shape(std::move(s)) {
    for (int d : shape)
      if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    data.assign(static_cast<std::size_t>(shape_numel(shape)), fill);
  }

  static Tensor scalar(Scalar v) {
    Tensor t;
    t.data.assign(1, v);
    return t;
  }

  static Tensor from(std::vector<int> s, std::vector<Scalar> values) {
    Tensor t;
    t.shape = std::move(s);
    if (shape_numel(t.shape) != static_cast<std::int64_t>(values.size()))
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(t.shape));
    t.data = std::move(values);
    return t;
  }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int extent(int axis) const { return shape[static_cast<std::size_t>(axis)]; }

  Scalar* ptr() { return data.data(); }
  const Scalar* ptr() const { return data.data(); }

  Scalar& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const Scalar& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  Scalar& at(std::initializer_list<int> idx) {
    return data[static_cast<std::size_t>(flat_index(idx))];
  }
  const Scalar& at(std::initializer_list<int> idx) const {
    return data[static_cast<std::size_t>(flat_index(idx))];
  }

  std::int64_t flat_index(std::initializer_list<int> idx) const {
    if (static_cast<int>(idx.size()) != rank())
      throw ShapeError("index rank mismatch for shape " + shape_str(shape));
    std::int64_t flat = 0;
    int axis = 0;
    for (int i : idx) {
      flat = flat * shape[static_cast<std::size_t>(axis)] + i;
      ++axis;
    }
    return flat;
  }

  bool same_shape(const Tensor& other) const { return shape == other.shape; }
};

// (outer, extent, inner) decomposition of a shape around one axis, so that
// flat = (o * extent + k) * inner + i.
inline void axis_split(const std::vector<int>& shape, int axis, std::int64_t* outer,
                       std::int64_t* extent, std::int64_t* inner) {
  if (axis < 0 || axis >= static_cast<int>(shape.size()))
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(shape));
  *outer = 1;
  *inner = 1;
  for (int i = 0; i < axis; ++i) *outer *= shape[static_cast<std::size_t>(i)];
  *extent = shape[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < shape.size(); ++i)
    *inner *= shape[i];
}

}  // namespace prospect
