#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "prospect/graph.hpp"
#include "prospect/tensor.hpp"

namespace prospect {

namespace detail {

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename S>
void check_same_graph(const char* op, Value<S> a, Value<S> b) {
  if (a.graph != b.graph) throw ShapeError(std::string(op) + ": operands from different graphs");
}

template <typename S>
void check_same_shape(const char* op, const Tensor<S>& a, const Tensor<S>& b) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                     shape_str(b.shape));
}

// Strides into `from` for iterating over `to` (right-aligned, size-1 dims
// repeat). Throws when the shapes are not broadcast-compatible.
inline std::vector<std::int64_t> broadcast_strides(const std::vector<int>& from,
                                                   const std::vector<int>& to) {
  if (from.size() > to.size())
    throw ShapeError("broadcast: source rank exceeds target, " + shape_str(from) + " -> " +
                     shape_str(to));
  std::vector<std::int64_t> strides(to.size(), 0);
  std::int64_t stride = 1;
  int offset = static_cast<int>(to.size() - from.size());
  for (int i = static_cast<int>(from.size()) - 1; i >= 0; --i) {
    int f = from[static_cast<std::size_t>(i)];
    int t = to[static_cast<std::size_t>(i + offset)];
    if (f != t && f != 1)
      throw ShapeError("broadcast: cannot expand " + shape_str(from) + " to " + shape_str(to));
    strides[static_cast<std::size_t>(i + offset)] = (f == 1 && t != 1) ? 0 : stride;
    stride *= f;
  }
  return strides;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary primitives (shapes must match exactly; use broadcast_to
// for expansion).

template <typename S, typename Fwd, typename Bwd>
Value<S> elementwise_binary(const char* op, Value<S> a, Value<S> b, Fwd f, Bwd bprop) {
  detail::check_same_graph(op, a, b);
  Graph<S>& g = *a.graph;
  detail::check_same_shape(op, g.value(a.id), g.value(b.id));
  Tensor<S> out(g.value(a.id).shape.empty() ? Tensor<S>::scalar(S(0))
                                            : Tensor<S>(g.value(a.id).shape));
  const auto& av = g.value(a.id);
  const auto& bv = g.value(b.id);
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i], bv[i]);
  auto recompute = [f](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    const auto& x = gr.value(in[0]);
    const auto& y = gr.value(in[1]);
    auto& o = gr.mutable_value(id);
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = f(x[i], y[i]);
  };
  return g.record(op, {a.id, b.id}, std::move(out), recompute, bprop);
}

template <typename S>
Value<S> add(Value<S> a, Value<S> b) {
  return elementwise_binary<S>(
      "add", a, b, [](S x, S y) { return x + y; },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& in = gr.node(id).inputs;
        auto& ga = gr.grad(in[0]);
        auto& gb = gr.grad(in[1]);
        for (std::int64_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i];
          gb[i] += go[i];
        }
      });
}

template <typename S>
Value<S> subtract(Value<S> a, Value<S> b) {
  return elementwise_binary<S>(
      "subtract", a, b, [](S x, S y) { return x - y; },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& in = gr.node(id).inputs;
        auto& ga = gr.grad(in[0]);
        auto& gb = gr.grad(in[1]);
        for (std::int64_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i];
          gb[i] -= go[i];
        }
      });
}

template <typename S>
Value<S> multiply(Value<S> a, Value<S> b) {
  return elementwise_binary<S>(
      "multiply", a, b, [](S x, S y) { return x * y; },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& in = gr.node(id).inputs;
        const auto& x = gr.value(in[0]);
        const auto& y = gr.value(in[1]);
        auto& ga = gr.grad(in[0]);
        auto& gb = gr.grad(in[1]);
        for (std::int64_t i = 0; i < go.numel(); ++i) {
          ga[i] += go[i] * y[i];
          gb[i] += go[i] * x[i];
        }
      });
}

// ---------------------------------------------------------------------------
// Elementwise unary primitives.

template <typename S, typename Fwd, typename Bwd>
Value<S> elementwise_unary(const char* op, Value<S> a, Fwd f, Bwd bprop) {
  Graph<S>& g = *a.graph;
  const auto& av = g.value(a.id);
  Tensor<S> out;
  out.shape = av.shape;
  out.data.resize(av.data.size());
  for (std::int64_t i = 0; i < av.numel(); ++i) out[i] = f(av[i]);
  auto recompute = [f](Graph<S>& gr, int id) {
    const auto& x = gr.value(gr.node(id).inputs[0]);
    auto& o = gr.mutable_value(id);
    for (std::int64_t i = 0; i < x.numel(); ++i) o[i] = f(x[i]);
  };
  return g.record(op, {a.id}, std::move(out), recompute, bprop);
}

template <typename S>
Value<S> negate(Value<S> a) {
  return elementwise_unary<S>(
      "negate", a, [](S x) { return -x; },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] -= go[i];
      });
}

template <typename S>
Value<S> relu(Value<S> a) {
  return elementwise_unary<S>(
      "relu", a, [](S x) { return x > S(0) ? x : S(0); },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& x = gr.value(gr.node(id).inputs[0]);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i)
          if (x[i] > S(0)) ga[i] += go[i];
      });
}

template <typename S>
Value<S> tanh(Value<S> a) {
  return elementwise_unary<S>(
      "tanh", a, [](S x) { return std::tanh(x); },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& y = gr.value(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * (S(1) - y[i] * y[i]);
      });
}

template <typename S>
Value<S> sigmoid(Value<S> a) {
  return elementwise_unary<S>(
      "sigmoid", a,
      [](S x) {
        return x >= S(0) ? S(1) / (S(1) + std::exp(-x))
                         : std::exp(x) / (S(1) + std::exp(x));
      },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& y = gr.value(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * y[i] * (S(1) - y[i]);
      });
}

template <typename S>
Value<S> exp(Value<S> a) {
  return elementwise_unary<S>(
      "exp", a, [](S x) { return std::exp(x); },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& y = gr.value(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] * y[i];
      });
}

template <typename S>
Value<S> log(Value<S> a) {
  return elementwise_unary<S>(
      "log", a, [](S x) { return std::log(x); },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        const auto& x = gr.value(gr.node(id).inputs[0]);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i] / x[i];
      });
}

// Convenience: multiply by a compile-time-known constant. Not part of the
// primitive set but recorded the same way.
template <typename S>
Value<S> scale(Value<S> a, S c) {
  return elementwise_unary<S>(
      "scale", a, [c](S x) { return c * x; },
      [c](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += c * go[i];
      });
}

template <typename S>
Value<S> add_const(Value<S> a, S c) {
  return elementwise_unary<S>(
      "add_const", a, [c](S x) { return x + c; },
      [](Graph<S>& gr, int id) {
        const auto& go = gr.grad(id);
        auto& ga = gr.grad(gr.node(id).inputs[0]);
        for (std::int64_t i = 0; i < go.numel(); ++i) ga[i] += go[i];
      });
}

template <typename S>
Value<S> abs_value(Value<S> a) {
  return add(relu(a), relu(negate(a)));
}

// max(x, c) elementwise, via relu so the subgradient matches.
template <typename S>
Value<S> clamp_min(Value<S> a, S c) {
  return add_const(relu(add_const(a, -c)), c);
}

// ---------------------------------------------------------------------------
// matmul: [M,K] x [K,N] -> [M,N].

template <typename S>
Value<S> matmul(Value<S> a, Value<S> b) {
  detail::check_same_graph("matmul", a, b);
  Graph<S>& g = *a.graph;
  const auto& av = g.value(a.id);
  const auto& bv = g.value(b.id);
  if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape) + " x " +
                     shape_str(bv.shape));
  const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
  Tensor<S> out({m, n});
  detail::MatMap<S>(out.ptr(), m, n).noalias() =
      detail::ConstMatMap<S>(av.ptr(), m, k) * detail::ConstMatMap<S>(bv.ptr(), k, n);
  auto recompute = [m, k, n](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    detail::MatMap<S>(gr.mutable_value(id).ptr(), m, n).noalias() =
        detail::ConstMatMap<S>(gr.value(in[0]).ptr(), m, k) *
        detail::ConstMatMap<S>(gr.value(in[1]).ptr(), k, n);
  };
  auto backprop = [m, k, n](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    detail::ConstMatMap<S> go(gr.grad(id).ptr(), m, n);
    detail::ConstMatMap<S> A(gr.value(in[0]).ptr(), m, k);
    detail::ConstMatMap<S> B(gr.value(in[1]).ptr(), k, n);
    detail::MatMap<S>(gr.grad(in[0]).ptr(), m, k).noalias() += go * B.transpose();
    detail::MatMap<S>(gr.grad(in[1]).ptr(), k, n).noalias() += A.transpose() * go;
  };
  return g.record("matmul", {a.id, b.id}, std::move(out), recompute, backprop);
}

// ---------------------------------------------------------------------------
// Reductions. Axis form removes the axis; the no-axis form reduces everything
// to a rank-0 scalar.

namespace detail {

template <typename S>
void reduce_shapes(const Tensor<S>& in, int axis, std::vector<int>* out_shape,
                   std::int64_t* outer, std::int64_t* extent, std::int64_t* inner) {
  if (axis < 0) {
    *out_shape = {};
    *outer = 1;
    *extent = in.numel();
    *inner = 1;
    return;
  }
  axis_split(in.shape, axis, outer, extent, inner);
  out_shape->clear();
  for (int i = 0; i < in.rank(); ++i)
    if (i != axis) out_shape->push_back(in.shape[static_cast<std::size_t>(i)]);
}

}  // namespace detail

template <typename S>
Value<S> sum_reduce(Value<S> a, int axis = -1) {
  Graph<S>& g = *a.graph;
  std::vector<int> out_shape;
  std::int64_t outer, extent, inner;
  detail::reduce_shapes(g.value(a.id), axis, &out_shape, &outer, &extent, &inner);
  auto run = [axis](const Tensor<S>& x, Tensor<S>& o) {
    std::vector<int> s;
    std::int64_t ou, ex, in;
    detail::reduce_shapes(x, axis, &s, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      S acc = S(0);
      for (std::int64_t k = 0; k < ex; ++k) acc += x[(oi * ex + k) * in + ii];
      o[p] = acc;
    }
  };
  Tensor<S> out = out_shape.empty() ? Tensor<S>::scalar(S(0)) : Tensor<S>(out_shape);
  run(g.value(a.id), out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  auto backprop = [axis](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    const auto& x = gr.value(gr.node(id).inputs[0]);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    std::vector<int> s;
    std::int64_t ou, ex, in;
    detail::reduce_shapes(x, axis, &s, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      for (std::int64_t k = 0; k < ex; ++k) gx[(oi * ex + k) * in + ii] += go[p];
    }
  };
  return g.record("sum-reduce", {a.id}, std::move(out), recompute, backprop);
}

template <typename S>
Value<S> mean_reduce(Value<S> a, int axis = -1) {
  Graph<S>& g = *a.graph;
  std::vector<int> s;
  std::int64_t ou, ex, in;
  detail::reduce_shapes(g.value(a.id), axis, &s, &ou, &ex, &in);
  return scale(sum_reduce(a, axis), S(1) / static_cast<S>(ex));
}

template <typename S>
Value<S> max_reduce(Value<S> a, int axis = -1) {
  Graph<S>& g = *a.graph;
  std::vector<int> out_shape;
  std::int64_t outer, extent, inner;
  detail::reduce_shapes(g.value(a.id), axis, &out_shape, &outer, &extent, &inner);
  auto run = [axis](const Tensor<S>& x, Tensor<S>& o) {
    std::vector<int> s;
    std::int64_t ou, ex, in;
    detail::reduce_shapes(x, axis, &s, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      S best = x[oi * ex * in + ii];
      for (std::int64_t k = 1; k < ex; ++k) best = std::max(best, x[(oi * ex + k) * in + ii]);
      o[p] = best;
    }
  };
  Tensor<S> out = out_shape.empty() ? Tensor<S>::scalar(S(0)) : Tensor<S>(out_shape);
  run(g.value(a.id), out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  // Ties route the gradient to the lowest index along the axis.
  auto backprop = [axis](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    const auto& x = gr.value(gr.node(id).inputs[0]);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    std::vector<int> s;
    std::int64_t ou, ex, in;
    detail::reduce_shapes(x, axis, &s, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      std::int64_t arg = 0;
      S best = x[oi * ex * in + ii];
      for (std::int64_t k = 1; k < ex; ++k) {
        S v = x[(oi * ex + k) * in + ii];
        if (v > best) {
          best = v;
          arg = k;
        }
      }
      gx[(oi * ex + arg) * in + ii] += go[p];
    }
  };
  return g.record("max-reduce", {a.id}, std::move(out), recompute, backprop);
}

template <typename S>
Value<S> min_reduce(Value<S> a, int axis = -1) {
  return negate(max_reduce(negate(a), axis));
}

// ---------------------------------------------------------------------------
// concat / slice / reshape / broadcast.

template <typename S>
Value<S> concat(const std::vector<Value<S>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph<S>& g = *parts[0].graph;
  const auto& first = g.value(parts[0].id);
  std::vector<int> out_shape = first.shape;
  if (axis < 0 || axis >= first.rank())
    throw ShapeError("concat: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(first.shape));
  std::vector<int> ids;
  int total = 0;
  for (const auto& p : parts) {
    detail::check_same_graph("concat", parts[0], p);
    const auto& t = g.value(p.id);
    if (t.rank() != first.rank())
      throw ShapeError("concat: rank mismatch " + shape_str(first.shape) + " vs " +
                       shape_str(t.shape));
    for (int i = 0; i < t.rank(); ++i)
      if (i != axis && t.shape[static_cast<std::size_t>(i)] != first.shape[static_cast<std::size_t>(i)])
        throw ShapeError("concat: shape mismatch " + shape_str(first.shape) + " vs " +
                         shape_str(t.shape));
    total += t.shape[static_cast<std::size_t>(axis)];
    ids.push_back(p.id);
  }
  out_shape[static_cast<std::size_t>(axis)] = total;
  auto run = [axis](Graph<S>& gr, const std::vector<int>& in, Tensor<S>& o) {
    std::int64_t outer, extent, inner;
    axis_split(o.shape, axis, &outer, &extent, &inner);
    std::int64_t off = 0;
    for (int src : in) {
      const auto& t = gr.value(src);
      std::int64_t e = t.shape[static_cast<std::size_t>(axis)];
      for (std::int64_t oi = 0; oi < outer; ++oi)
        std::copy_n(t.ptr() + oi * e * inner, e * inner,
                    o.ptr() + (oi * extent + off) * inner);
      off += e;
    }
  };
  Tensor<S> out(out_shape);
  run(g, ids, out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr, gr.node(id).inputs, gr.mutable_value(id));
  };
  auto backprop = [axis](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    std::int64_t outer, extent, inner;
    axis_split(go.shape, axis, &outer, &extent, &inner);
    std::int64_t off = 0;
    for (int src : gr.node(id).inputs) {
      auto& gx = gr.grad(src);
      std::int64_t e = gr.value(src).shape[static_cast<std::size_t>(axis)];
      for (std::int64_t oi = 0; oi < outer; ++oi) {
        const S* from = go.ptr() + (oi * extent + off) * inner;
        S* to = gx.ptr() + oi * e * inner;
        for (std::int64_t i = 0; i < e * inner; ++i) to[i] += from[i];
      }
      off += e;
    }
  };
  return g.record("concat", std::move(ids), std::move(out), recompute, backprop);
}

template <typename S>
Value<S> slice(Value<S> a, int axis, int start, int length) {
  Graph<S>& g = *a.graph;
  const auto& av = g.value(a.id);
  std::int64_t outer, extent, inner;
  axis_split(av.shape, axis, &outer, &extent, &inner);
  if (start < 0 || length <= 0 || start + length > extent)
    throw ShapeError("slice: range [" + std::to_string(start) + "," +
                     std::to_string(start + length) + ") out of bounds for axis " +
                     std::to_string(axis) + " of " + shape_str(av.shape));
  std::vector<int> out_shape = av.shape;
  out_shape[static_cast<std::size_t>(axis)] = length;
  auto run = [axis, start, length](const Tensor<S>& x, Tensor<S>& o) {
    std::int64_t outer2, extent2, inner2;
    axis_split(x.shape, axis, &outer2, &extent2, &inner2);
    for (std::int64_t oi = 0; oi < outer2; ++oi)
      std::copy_n(x.ptr() + (oi * extent2 + start) * inner2, length * inner2,
                  o.ptr() + oi * length * inner2);
  };
  Tensor<S> out(out_shape);
  run(av, out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  auto backprop = [axis, start, length](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    std::int64_t outer2, extent2, inner2;
    axis_split(gx.shape, axis, &outer2, &extent2, &inner2);
    for (std::int64_t oi = 0; oi < outer2; ++oi) {
      const S* from = go.ptr() + oi * length * inner2;
      S* to = gx.ptr() + (oi * extent2 + start) * inner2;
      for (std::int64_t i = 0; i < length * inner2; ++i) to[i] += from[i];
    }
  };
  return g.record("slice", {a.id}, std::move(out), recompute, backprop);
}

template <typename S>
Value<S> reshape(Value<S> a, std::vector<int> new_shape) {
  Graph<S>& g = *a.graph;
  const auto& av = g.value(a.id);
  if (shape_numel(new_shape) != av.numel())
    throw ShapeError("reshape: " + shape_str(av.shape) + " to " + shape_str(new_shape) +
                     " changes element count");
  Tensor<S> out;
  out.shape = new_shape;
  out.data = av.data;
  auto recompute = [](Graph<S>& gr, int id) {
    gr.mutable_value(id).data = gr.value(gr.node(id).inputs[0]).data;
  };
  auto backprop = [](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    for (std::int64_t i = 0; i < go.numel(); ++i) gx[i] += go[i];
  };
  return g.record("reshape", {a.id}, std::move(out), recompute, backprop);
}

template <typename S>
Value<S> broadcast_to(Value<S> a, std::vector<int> target) {
  Graph<S>& g = *a.graph;
  auto strides = detail::broadcast_strides(g.value(a.id).shape, target);
  auto run = [target, strides](const Tensor<S>& x, Tensor<S>& o) {
    const int rank = static_cast<int>(target.size());
    std::vector<int> idx(target.size(), 0);
    for (std::int64_t p = 0; p < o.numel(); ++p) {
      std::int64_t src = 0;
      for (int i = 0; i < rank; ++i) src += idx[static_cast<std::size_t>(i)] * strides[static_cast<std::size_t>(i)];
      o[p] = x[src];
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < target[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
  };
  Tensor<S> out(target);
  run(g.value(a.id), out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  auto backprop = [target, strides](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    const int rank = static_cast<int>(target.size());
    std::vector<int> idx(target.size(), 0);
    for (std::int64_t p = 0; p < go.numel(); ++p) {
      std::int64_t src = 0;
      for (int i = 0; i < rank; ++i) src += idx[static_cast<std::size_t>(i)] * strides[static_cast<std::size_t>(i)];
      gx[src] += go[p];
      for (int i = rank - 1; i >= 0; --i) {
        if (++idx[static_cast<std::size_t>(i)] < target[static_cast<std::size_t>(i)]) break;
        idx[static_cast<std::size_t>(i)] = 0;
      }
    }
  };
  return g.record("broadcast", {a.id}, std::move(out), recompute, backprop);
}

// ---------------------------------------------------------------------------
// softmax over one axis (numerically stable).

template <typename S>
Value<S> softmax(Value<S> a, int axis) {
  Graph<S>& g = *a.graph;
  const auto& av = g.value(a.id);
  std::int64_t outer, extent, inner;
  axis_split(av.shape, axis, &outer, &extent, &inner);
  auto run = [axis](const Tensor<S>& x, Tensor<S>& o) {
    std::int64_t ou, ex, in;
    axis_split(x.shape, axis, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      S mx = x[oi * ex * in + ii];
      for (std::int64_t k = 1; k < ex; ++k) mx = std::max(mx, x[(oi * ex + k) * in + ii]);
      S denom = S(0);
      for (std::int64_t k = 0; k < ex; ++k) {
        S e = std::exp(x[(oi * ex + k) * in + ii] - mx);
        o[(oi * ex + k) * in + ii] = e;
        denom += e;
      }
      for (std::int64_t k = 0; k < ex; ++k) o[(oi * ex + k) * in + ii] /= denom;
    }
  };
  Tensor<S> out(av.shape);
  run(av, out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  auto backprop = [axis](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    const auto& y = gr.value(id);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    std::int64_t ou, ex, in;
    axis_split(y.shape, axis, &ou, &ex, &in);
    for (std::int64_t p = 0; p < ou * in; ++p) {
      std::int64_t oi = p / in, ii = p % in;
      S dot = S(0);
      for (std::int64_t k = 0; k < ex; ++k) {
        std::int64_t f = (oi * ex + k) * in + ii;
        dot += go[f] * y[f];
      }
      for (std::int64_t k = 0; k < ex; ++k) {
        std::int64_t f = (oi * ex + k) * in + ii;
        gx[f] += y[f] * (go[f] - dot);
      }
    }
  };
  return g.record("softmax", {a.id}, std::move(out), recompute, backprop);
}

// ---------------------------------------------------------------------------
// Name-based dispatcher over the primitive set.

struct PrimitiveAttrs {
  int axis = -1;
  int start = 0;
  int length = 0;
  std::vector<int> shape;
};

template <typename S>
Value<S> apply_primitive(const std::string& op, std::vector<Value<S>> inputs,
                         PrimitiveAttrs attrs = {}) {
  auto unary = [&](const char* name) {
    if (inputs.size() != 1) throw ShapeError(std::string(name) + ": expects 1 input");
    return inputs[0];
  };
  auto binary = [&](const char* name) {
    if (inputs.size() != 2) throw ShapeError(std::string(name) + ": expects 2 inputs");
    return std::make_pair(inputs[0], inputs[1]);
  };
  if (op == "add") {
    auto [a, b] = binary("add");
    return add(a, b);
  }
  if (op == "subtract") {
    auto [a, b] = binary("subtract");
    return subtract(a, b);
  }
  if (op == "multiply") {
    auto [a, b] = binary("multiply");
    return multiply(a, b);
  }
  if (op == "negate") return negate(unary("negate"));
  if (op == "matmul") {
    auto [a, b] = binary("matmul");
    return matmul(a, b);
  }
  if (op == "relu") return relu(unary("relu"));
  if (op == "tanh") return tanh(unary("tanh"));
  if (op == "sigmoid") return sigmoid(unary("sigmoid"));
  if (op == "exp") return exp(unary("exp"));
  if (op == "log") return log(unary("log"));
  if (op == "sum-reduce") return sum_reduce(unary("sum-reduce"), attrs.axis);
  if (op == "mean-reduce") return mean_reduce(unary("mean-reduce"), attrs.axis);
  if (op == "max-reduce") return max_reduce(unary("max-reduce"), attrs.axis);
  if (op == "concat") return concat(inputs, attrs.axis);
  if (op == "slice") return slice(unary("slice"), attrs.axis, attrs.start, attrs.length);
  if (op == "reshape") return reshape(unary("reshape"), attrs.shape);
  if (op == "broadcast") return broadcast_to(unary("broadcast"), attrs.shape);
  if (op == "softmax") return softmax(unary("softmax"), attrs.axis);
  throw ShapeError("unknown primitive '" + op + "'");
}

}  // namespace prospect
