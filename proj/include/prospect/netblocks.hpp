#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <memory>
#include <string>
#include <vector>

#include "prospect/graph.hpp"
#include "prospect/ops.hpp"
#include "prospect/rng.hpp"
#include "prospect/threading.hpp"

namespace prospect {

enum class Activation { kLinear, kRelu, kTanh, kSigmoid, kSoftmax };

enum class Mode { kTrain, kInfer };

// 5x5 convolution block: symmetric zero padding of 2, stride 1 or 2, so the
// output extent is ceil(input / stride).
struct ConvBlockSpec {
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 5;
  int stride = 1;
  Activation activation = Activation::kRelu;
};

// Differentiable keypoint vector: 2K coordinates interleaved as
// (x1, y1, ..., xK, yK), each in [-1, 1]. grid x runs over columns, grid y
// over rows, both spanning [-1, 1] with endpoints on border cells.
struct KeypointSet {
  int channels = 0;
  std::vector<float> coords;
};

namespace detail {

inline int conv_out_extent(int in, int stride) { return (in + stride - 1) / stride; }

// Gathers one image (H,W,C channel-last) into a (HO*WO, K*K*C) patch matrix.
// The interior fast path copies whole k*c kernel rows with a compile-time
// size, which is where nearly all of the gather time goes.
template <typename S, int C>
void im2col_impl(const S* img, int h, int w, int c_rt, int k, int pad, int stride, int ho,
                 int wo, S* col) {
  const int c = C > 0 ? C : c_rt;
  const int patch = k * k * c;
  const int run = k * c;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      S* row = col + (static_cast<std::int64_t>(oy) * wo + ox) * patch;
      const int ix0 = ox * stride - pad;
      const bool x_interior = ix0 >= 0 && ix0 + k <= w;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        S* dst = row + ky * run;
        if (iy < 0 || iy >= h) {
          std::fill(dst, dst + run, S(0));
          continue;
        }
        const S* src_row = img + (static_cast<std::int64_t>(iy) * w) * c;
        if (x_interior) {
          if constexpr (C > 0)
            std::memcpy(dst, src_row + ix0 * c, sizeof(S) * static_cast<std::size_t>(run));
          else
            std::copy(src_row + ix0 * c, src_row + (ix0 + k) * c, dst);
        } else {
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= w)
              std::fill(dst + kx * c, dst + (kx + 1) * c, S(0));
            else
              std::copy(src_row + ix * c, src_row + (ix + 1) * c, dst + kx * c);
          }
        }
      }
    }
  }
}

template <typename S>
void im2col(const S* img, int h, int w, int c, int k, int pad, int stride, int ho, int wo,
            S* col) {
  switch (c) {
    case 3: im2col_impl<S, 3>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 4: im2col_impl<S, 4>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 8: im2col_impl<S, 8>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 12: im2col_impl<S, 12>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 16: im2col_impl<S, 16>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 24: im2col_impl<S, 24>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    case 32: im2col_impl<S, 32>(img, h, w, c, k, pad, stride, ho, wo, col); return;
    default: im2col_impl<S, 0>(img, h, w, c, k, pad, stride, ho, wo, col); return;
  }
}

// Scatter-add of a patch matrix back into an image gradient.
template <typename S, int C>
void col2im_add_impl(const S* col, int h, int w, int c_rt, int k, int pad, int stride, int ho,
                     int wo, S* img) {
  const int c = C > 0 ? C : c_rt;
  const int patch = k * k * c;
  const int run = k * c;
  for (int oy = 0; oy < ho; ++oy) {
    for (int ox = 0; ox < wo; ++ox) {
      const S* row = col + (static_cast<std::int64_t>(oy) * wo + ox) * patch;
      const int ix0 = ox * stride - pad;
      const bool x_interior = ix0 >= 0 && ix0 + k <= w;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * stride - pad + ky;
        if (iy < 0 || iy >= h) continue;
        S* dst_row = img + (static_cast<std::int64_t>(iy) * w) * c;
        const S* src = row + ky * run;
        if (x_interior) {
          S* dst = dst_row + ix0 * c;
          if constexpr (C > 0) {
            for (int i = 0; i < run; ++i) dst[i] += src[i];
          } else {
            for (int i = 0; i < run; ++i) dst[i] += src[i];
          }
        } else {
          for (int kx = 0; kx < k; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= w) continue;
            S* dst = dst_row + ix * c;
            for (int ch = 0; ch < c; ++ch) dst[ch] += src[kx * c + ch];
          }
        }
      }
    }
  }
}

template <typename S>
void col2im_add(const S* col, int h, int w, int c, int k, int pad, int stride, int ho, int wo,
                S* img) {
  switch (c) {
    case 3: col2im_add_impl<S, 3>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 4: col2im_add_impl<S, 4>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 8: col2im_add_impl<S, 8>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 12: col2im_add_impl<S, 12>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 16: col2im_add_impl<S, 16>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 24: col2im_add_impl<S, 24>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    case 32: col2im_add_impl<S, 32>(col, h, w, c, k, pad, stride, ho, wo, img); return;
    default: col2im_add_impl<S, 0>(col, h, w, c, k, pad, stride, ho, wo, img); return;
  }
}

// Images are processed in fixed-size chunks so the patch matrices stay small
// while each GEMM is big enough to reach full throughput. Chunks are assigned
// to threads statically and weight-gradient partials are reduced in chunk
// order, keeping every result byte-reproducible.
constexpr int kConvChunk = 4;

template <typename S>
void apply_act_inplace(S* p, std::int64_t n, Activation act) {
  switch (act) {
    case Activation::kLinear: return;
    case Activation::kRelu:
      for (std::int64_t i = 0; i < n; ++i) p[i] = p[i] > S(0) ? p[i] : S(0);
      return;
    case Activation::kSigmoid:
      for (std::int64_t i = 0; i < n; ++i)
        p[i] = p[i] >= S(0) ? S(1) / (S(1) + std::exp(-p[i]))
                            : std::exp(p[i]) / (S(1) + std::exp(p[i]));
      return;
    default: throw ShapeError("conv2d: unsupported fused activation");
  }
}

template <typename S>
void conv2d_forward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride,
                    Activation act, Tensor<S>& out) {
  const int batch = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3];
  const int k = w.shape[0], cout = w.shape[3];
  const int pad = k / 2;
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const int patch = k * k * c;
  const std::int64_t cells = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t img_in = static_cast<std::int64_t>(h) * wd * c;
  const int chunks = (batch + kConvChunk - 1) / kConvChunk;
  auto& pool = WorkerPool::instance();
  ConstMatMap<S> wm(w.ptr(), patch, cout);
  parallel_for(chunks, [&](int ci, int t) {
    const int i0 = ci * kConvChunk;
    const int i1 = std::min(batch, i0 + kConvChunk);
    S* col = pool.scratch<S>(t, 0, static_cast<std::size_t>(kConvChunk * cells * patch));
    for (int i = i0; i < i1; ++i)
      im2col(x.ptr() + i * img_in, h, wd, c, k, pad, stride, ho, wo,
             col + static_cast<std::int64_t>(i - i0) * cells * patch);
    const std::int64_t rows = static_cast<std::int64_t>(i1 - i0) * cells;
    MatMap<S> om(out.ptr() + i0 * cells * cout, rows, cout);
    om.noalias() = ConstMatMap<S>(col, rows, patch) * wm;
    om.rowwise() += ConstMatMap<S>(b.ptr(), 1, cout).row(0);
    apply_act_inplace(out.ptr() + i0 * cells * cout, rows * cout, act);
  });
}

// `go` must already be the gradient at the pre-activation (the caller folds
// the activation derivative in).
template <typename S>
void conv2d_backward(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& go, int stride,
                     Tensor<S>* gx, Tensor<S>* gw, Tensor<S>* gb) {
  const int batch = x.shape[0], h = x.shape[1], wd = x.shape[2], c = x.shape[3];
  const int k = w.shape[0], cout = w.shape[3];
  const int pad = k / 2;
  const int ho = conv_out_extent(h, stride), wo = conv_out_extent(wd, stride);
  const int patch = k * k * c;
  const std::int64_t cells = static_cast<std::int64_t>(ho) * wo;
  const std::int64_t img_in = static_cast<std::int64_t>(h) * wd * c;
  const int chunks = (batch + kConvChunk - 1) / kConvChunk;
  auto& pool = WorkerPool::instance();
  const int wpool = pool.workers();
  ConstMatMap<S> wm(w.ptr(), patch, cout);
  const std::size_t wsize = static_cast<std::size_t>(patch) * cout;
  auto worker_lo = [&](int t) { return static_cast<int>(static_cast<long long>(chunks) * t / wpool); };
  parallel_for(chunks, [&](int ci, int t) {
    const int i0 = ci * kConvChunk;
    const int i1 = std::min(batch, i0 + kConvChunk);
    const std::int64_t rows = static_cast<std::int64_t>(i1 - i0) * cells;
    ConstMatMap<S> gom(go.ptr() + i0 * cells * cout, rows, cout);
    if (gw) {
      S* col = pool.scratch<S>(t, 0, static_cast<std::size_t>(kConvChunk * cells * patch));
      for (int i = i0; i < i1; ++i)
        im2col(x.ptr() + i * img_in, h, wd, c, k, pad, stride, ho, wo,
               col + static_cast<std::int64_t>(i - i0) * cells * patch);
      S* dw = pool.scratch<S>(t, 2, wsize);
      if (ci == worker_lo(t) || (wpool == 1 && ci == 0)) std::fill(dw, dw + wsize, S(0));
      MatMap<S>(dw, patch, cout).noalias() += ConstMatMap<S>(col, rows, patch).transpose() * gom;
    }
    if (gx) {
      S* dcol = pool.scratch<S>(t, 1, static_cast<std::size_t>(kConvChunk * cells * patch));
      MatMap<S>(dcol, rows, patch).noalias() = gom * wm.transpose();
      for (int i = i0; i < i1; ++i)
        col2im_add(dcol + static_cast<std::int64_t>(i - i0) * cells * patch, h, wd, c, k, pad,
                   stride, ho, wo, gx->ptr() + i * img_in);
    }
  });
  if (gw) {
    // Ordered reduce of the per-worker partials.
    const bool inline_run = chunks == 1 || wpool <= 1;
    const int active = inline_run ? 1 : wpool;
    for (int t = 0; t < active; ++t) {
      const int lo = inline_run ? 0 : worker_lo(t);
      const int hi = inline_run ? chunks : worker_lo(t + 1);
      if (lo >= hi) continue;
      const S* dw = pool.scratch<S>(t, 2, wsize);
      for (std::int64_t p = 0; p < gw->numel(); ++p) (*gw)[p] += dw[static_cast<std::size_t>(p)];
    }
  }
  if (gb)
    for (std::int64_t i = 0; i < go.numel(); ++i) (*gb)[i % cout] += go[i];
}

}  // namespace detail

// conv2d on channel-last tensors: x (B,H,W,Cin), w (K,K,Cin,Cout), b (Cout).
// The activation (linear, relu or sigmoid) is fused into the node.
template <typename S>
Value<S> conv2d(Value<S> x, Value<S> w, Value<S> b, int stride,
                Activation act = Activation::kLinear) {
  Graph<S>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const auto& wv = g.value(w.id);
  const auto& bv = g.value(b.id);
  if (xv.rank() != 4 || wv.rank() != 4)
    throw ShapeError("conv2d: expects x rank 4 and w rank 4, got " + shape_str(xv.shape) +
                     " and " + shape_str(wv.shape));
  if (wv.shape[0] != wv.shape[1])
    throw ShapeError("conv2d: kernel must be square, got " + shape_str(wv.shape));
  if (xv.shape[3] != wv.shape[2])
    throw ShapeError("conv2d: channel mismatch, input " + shape_str(xv.shape) + " vs kernel " +
                     shape_str(wv.shape));
  if (bv.rank() != 1 || bv.shape[0] != wv.shape[3])
    throw ShapeError("conv2d: bias shape " + shape_str(bv.shape) + " does not match kernel " +
                     shape_str(wv.shape));
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");

  const int batch = xv.shape[0];
  const int ho = detail::conv_out_extent(xv.shape[1], stride);
  const int wo = detail::conv_out_extent(xv.shape[2], stride);
  Tensor<S> out({batch, ho, wo, wv.shape[3]});
  detail::conv2d_forward(xv, wv, bv, stride, act, out);

  auto recompute = [stride, act](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    detail::conv2d_forward(gr.value(in[0]), gr.value(in[1]), gr.value(in[2]), stride, act,
                           gr.mutable_value(id));
  };
  auto backprop = [stride, act](Graph<S>& gr, int id) {
    const auto& in = gr.node(id).inputs;
    Tensor<S>* gx = gr.wants_grad(in[0]) ? &gr.grad(in[0]) : nullptr;
    Tensor<S>* gw = gr.wants_grad(in[1]) ? &gr.grad(in[1]) : nullptr;
    Tensor<S>* gb = gr.wants_grad(in[2]) ? &gr.grad(in[2]) : nullptr;
    const auto& go = gr.grad(id);
    if (act == Activation::kLinear) {
      detail::conv2d_backward(gr.value(in[0]), gr.value(in[1]), go, stride, gx, gw, gb);
      return;
    }
    const auto& y = gr.value(id);
    Tensor<S> dpre;
    dpre.shape = go.shape;
    dpre.data.resize(go.data.size());
    if (act == Activation::kRelu) {
      for (std::int64_t i = 0; i < go.numel(); ++i) dpre[i] = y[i] > S(0) ? go[i] : S(0);
    } else {  // sigmoid
      for (std::int64_t i = 0; i < go.numel(); ++i) dpre[i] = go[i] * y[i] * (S(1) - y[i]);
    }
    detail::conv2d_backward(gr.value(in[0]), gr.value(in[1]), dpre, stride, gx, gw, gb);
  };
  return g.record("conv2d", {x.id, w.id, b.id}, std::move(out), recompute, backprop);
}

template <typename S>
Value<S> apply_activation(Value<S> v, Activation act) {
  switch (act) {
    case Activation::kLinear: return v;
    case Activation::kRelu: return relu(v);
    case Activation::kTanh: return tanh(v);
    case Activation::kSigmoid: return sigmoid(v);
    case Activation::kSoftmax: return softmax(v, v.tensor().rank() - 1);
  }
  throw ShapeError("unknown activation");
}

// Convolution block per ConvBlockSpec. Accepts (H,W,C) or (B,H,W,C) input.
template <typename S>
Value<S> conv_block(Value<S> x, const ConvBlockSpec& spec, Value<S> w, Value<S> b) {
  Graph<S>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const bool single = xv.rank() == 3;
  if (single) x = reshape(x, {1, xv.shape[0], xv.shape[1], xv.shape[2]});
  const auto& xs = x.tensor().shape;
  if (xs[3] != spec.in_channels)
    throw ShapeError("conv_block: input channels " + std::to_string(xs[3]) +
                     " do not match spec " + std::to_string(spec.in_channels));
  Value<S> out;
  switch (spec.activation) {
    case Activation::kLinear:
    case Activation::kRelu:
    case Activation::kSigmoid:
      out = conv2d(x, w, b, spec.stride, spec.activation);
      break;
    default:
      out = apply_activation(conv2d(x, w, b, spec.stride), spec.activation);
      break;
  }
  if (single) {
    const auto& os = out.tensor().shape;
    out = reshape(out, {os[1], os[2], os[3]});
  }
  return out;
}

// Nearest-neighbour 2x spatial upsampling of (B,H,W,C).
template <typename S>
Value<S> upsample2x(Value<S> x) {
  Graph<S>& g = *x.graph;
  const auto& xv = g.value(x.id);
  if (xv.rank() != 4) throw ShapeError("upsample2x: expects rank 4, got " + shape_str(xv.shape));
  const int batch = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3];
  auto run = [](const Tensor<S>& in, Tensor<S>& o) {
    const int b2 = in.shape[0], h2 = in.shape[1], w2 = in.shape[2], c2 = in.shape[3];
    parallel_for(b2, [&](int i, int) {
      for (int y = 0; y < 2 * h2; ++y)
        for (int x2 = 0; x2 < 2 * w2; ++x2) {
          const S* src = in.ptr() + ((static_cast<std::int64_t>(i) * h2 + y / 2) * w2 + x2 / 2) * c2;
          S* dst = o.ptr() + ((static_cast<std::int64_t>(i) * 2 * h2 + y) * 2 * w2 + x2) * c2;
          std::copy(src, src + c2, dst);
        }
    });
  };
  Tensor<S> out({batch, 2 * h, 2 * w, c});
  run(xv, out);
  auto recompute = [run](Graph<S>& gr, int id) {
    run(gr.value(gr.node(id).inputs[0]), gr.mutable_value(id));
  };
  auto backprop = [](Graph<S>& gr, int id) {
    const auto& go = gr.grad(id);
    auto& gx = gr.grad(gr.node(id).inputs[0]);
    const auto& s = gx.shape;
    const int b2 = s[0], h2 = s[1], w2 = s[2], c2 = s[3];
    parallel_for(b2, [&](int i, int) {
      for (int y = 0; y < 2 * h2; ++y)
        for (int x2 = 0; x2 < 2 * w2; ++x2) {
          const S* src = go.ptr() + ((static_cast<std::int64_t>(i) * 2 * h2 + y) * 2 * w2 + x2) * c2;
          S* dst = gx.ptr() + ((static_cast<std::int64_t>(i) * h2 + y / 2) * w2 + x2 / 2) * c2;
          for (int ch = 0; ch < c2; ++ch) dst[ch] += src[ch];
        }
    });
  };
  return g.record("upsample2x", {x.id}, std::move(out), recompute, backprop);
}

// Appends the state vector as constant channels at every spatial cell.
// features (B,H,W,C) with state (B,S), or (H,W,C) with state (S).
template <typename S>
Value<S> tile_state(Value<S> features, Value<S> state) {
  Graph<S>& g = *features.graph;
  const auto& fv = g.value(features.id);
  const auto& sv = g.value(state.id);
  if (sv.numel() == 0) return features;
  if (fv.rank() == 3) {
    if (sv.rank() != 1)
      throw ShapeError("tile_state: state must be rank 1 for unbatched features, got " +
                       shape_str(sv.shape));
    auto tiled = broadcast_to(reshape(state, {1, 1, sv.shape[0]}),
                              {fv.shape[0], fv.shape[1], sv.shape[0]});
    return concat<S>({features, tiled}, 2);
  }
  if (fv.rank() != 4 || sv.rank() != 2 || fv.shape[0] != sv.shape[0])
    throw ShapeError("tile_state: incompatible shapes " + shape_str(fv.shape) + " and " +
                     shape_str(sv.shape));
  auto tiled = broadcast_to(reshape(state, {sv.shape[0], 1, 1, sv.shape[1]}),
                            {fv.shape[0], fv.shape[1], fv.shape[2], sv.shape[1]});
  return concat<S>({features, tiled}, 3);
}

// Unit vector of length vocab_size with a one at `action`.
template <typename S>
Tensor<S> one_hot(int action, int vocab_size) {
  if (action < 0 || action >= vocab_size)
    throw ShapeError("one_hot: action " + std::to_string(action) + " out of range [0," +
                     std::to_string(vocab_size) + ")");
  Tensor<S> t({vocab_size});
  t[action] = S(1);
  return t;
}

// Grid coordinate along one image axis, endpoints on border cells.
inline double grid_coord(int index, int extent) {
  return extent > 1 ? -1.0 + 2.0 * index / (extent - 1) : 0.0;
}

// Per-channel softmax over all spatial cells followed by an expected-
// coordinate readout. Input (B,H,W,K) or (H,W,K); output (B,2K) or (2K),
// interleaved (x1,y1,...,xK,yK).
template <typename S>
Value<S> spatial_soft_argmax(Value<S> features, double temperature = 1.0) {
  if (!(temperature > 0.0)) throw ShapeError("spatial_soft_argmax: temperature must be > 0");
  Graph<S>& g = *features.graph;
  const auto& fv = g.value(features.id);
  const bool single = fv.rank() == 3;
  if (single) features = reshape(features, {1, fv.shape[0], fv.shape[1], fv.shape[2]});
  const auto& s = features.tensor().shape;
  const int batch = s[0], h = s[1], w = s[2], k = s[3];
  const int cells = h * w;

  Tensor<S> gx({cells}), gy({cells});
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      gx[r * w + c] = static_cast<S>(grid_coord(c, w));
      gy[r * w + c] = static_cast<S>(grid_coord(r, h));
    }
  auto gxv = broadcast_to(reshape(g.leaf(std::move(gx), "grid_x"), {1, cells, 1}),
                          {batch, cells, k});
  auto gyv = broadcast_to(reshape(g.leaf(std::move(gy), "grid_y"), {1, cells, 1}),
                          {batch, cells, k});

  auto logits = reshape(features, {batch, cells, k});
  if (temperature != 1.0) logits = scale(logits, static_cast<S>(1.0 / temperature));
  auto p = softmax(logits, 1);
  auto x = sum_reduce(multiply(p, gxv), 1);
  auto y = sum_reduce(multiply(p, gyv), 1);
  auto kp = reshape(concat<S>({reshape(x, {batch, k, 1}), reshape(y, {batch, k, 1})}, 2),
                    {batch, 2 * k});
  if (single) kp = reshape(kp, {2 * k});
  return kp;
}

// Inverted dropout: zero each scalar with probability `rate` and scale the
// survivors by 1/(1-rate). Identity in infer mode. Deterministic in seed.
template <typename S>
Value<S> dropout(Value<S> x, double rate, Mode mode, std::uint64_t seed) {
  if (rate >= 1.0 || rate < 0.0)
    throw ShapeError("dropout: rate must be in [0,1), got " + std::to_string(rate));
  if (mode == Mode::kInfer || rate == 0.0) return x;
  Graph<S>& g = *x.graph;
  const auto& xv = g.value(x.id);
  Rng rng(seed);
  Tensor<S> mask;
  mask.shape = xv.shape;
  mask.data.resize(xv.data.size());
  const S keep_scale = static_cast<S>(1.0 / (1.0 - rate));
  for (auto& m : mask.data) m = rng.uniform() < rate ? S(0) : keep_scale;
  return multiply(x, g.leaf(std::move(mask), "dropout_mask"));
}

// Dense layer: x (B,Din) or (Din), w (Din,Dout), bias (Dout).
template <typename S>
Value<S> dense(Value<S> x, Value<S> w, Value<S> b, Activation act) {
  Graph<S>& g = *x.graph;
  const auto& xv = g.value(x.id);
  const auto& wv = g.value(w.id);
  const auto& bv = g.value(b.id);
  if (wv.rank() != 2) throw ShapeError("dense: weights must be rank 2, got " + shape_str(wv.shape));
  if (bv.rank() != 1 || bv.shape[0] != wv.shape[1])
    throw ShapeError("dense: bias " + shape_str(bv.shape) + " does not match weights " +
                     shape_str(wv.shape));
  const bool single = xv.rank() == 1;
  if (single) x = reshape(x, {1, xv.shape[0]});
  const int rows = x.tensor().shape[0];
  auto out = add(matmul(x, w), broadcast_to(reshape(b, {1, wv.shape[1]}), {rows, wv.shape[1]}));
  out = apply_activation(out, act);
  if (single) out = reshape(out, {wv.shape[1]});
  return out;
}

}  // namespace prospect
