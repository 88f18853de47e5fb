#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "prospect/netblocks.hpp"
#include "test_support.hpp"

using namespace prospect;

namespace {

// Reference convolution: explicit loops over output cells, kernel taps and
// channels, zero padding of kernel/2.
template <typename S>
Tensor<S> naive_conv(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride) {
  const int h = x.shape[0], wd = x.shape[1], cin = x.shape[2];
  const int k = w.shape[0], cout = w.shape[3];
  const int pad = k / 2;
  const int ho = (h + stride - 1) / stride, wo = (wd + stride - 1) / stride;
  Tensor<S> out({ho, wo, cout});
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox)
      for (int co = 0; co < cout; ++co) {
        S acc = b[co];
        for (int ky = 0; ky < k; ++ky)
          for (int kx = 0; kx < k; ++kx) {
            const int iy = oy * stride - pad + ky;
            const int ix = ox * stride - pad + kx;
            if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
            for (int ci = 0; ci < cin; ++ci)
              acc += x.at({iy, ix, ci}) * w.at({ky, kx, ci, co});
          }
        out.at({oy, ox, co}) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv_block shape contract") {
  Graph<float> g;
  Rng rng(3);
  auto x = g.leaf(test::random_tensor<float>({64, 64, 3}, rng, 0.0, 1.0));
  auto w = g.leaf(test::random_tensor<float>({5, 5, 3, 32}, rng, -0.1, 0.1));
  auto b = g.leaf(Tensor<float>({32}));
  ConvBlockSpec spec{3, 32, 5, 2, Activation::kRelu};
  auto out = conv_block(x, spec, w, b);
  CHECK(out.shape() == std::vector<int>{32, 32, 32});

  auto wrong = g.leaf(test::random_tensor<float>({64, 64, 4}, rng));
  CHECK_THROWS_AS(conv_block(wrong, spec, w, b), ShapeError);
}

TEST_CASE("conv_block identity kernel") {
  Graph<double> g;
  Rng rng(5);
  auto x = g.leaf(test::random_tensor<double>({9, 9, 1}, rng));
  Tensor<double> w({5, 5, 1, 1});
  w.at({2, 2, 0, 0}) = 1.0;  // centre tap
  auto wv = g.leaf(w);
  auto b = g.leaf(Tensor<double>({1}));
  ConvBlockSpec spec{1, 1, 5, 1, Activation::kLinear};
  auto out = conv_block(x, spec, wv, b);
  REQUIRE(out.shape() == std::vector<int>{9, 9, 1});
  for (std::int64_t i = 0; i < out.tensor().numel(); ++i)
    CHECK(out.tensor()[i] == Catch::Approx(x.tensor()[i]).margin(1e-12));
}

TEST_CASE("conv_block matches the naive loop oracle") {
  Rng rng(17);
  for (int stride : {1, 2}) {
    Graph<double> g;
    auto xt = test::random_tensor<double>({11, 10, 3}, rng);
    auto wt = test::random_tensor<double>({5, 5, 3, 4}, rng, -0.5, 0.5);
    auto bt = test::random_tensor<double>({4}, rng, -0.5, 0.5);
    auto out = conv_block(g.leaf(xt), ConvBlockSpec{3, 4, 5, stride, Activation::kLinear},
                          g.leaf(wt), g.leaf(bt));
    auto want = naive_conv(xt, wt, bt, stride);
    REQUIRE(out.shape() == want.shape);
    for (std::int64_t i = 0; i < want.numel(); ++i)
      CHECK(out.tensor()[i] == Catch::Approx(want[i]).margin(1e-6));
  }
}

TEST_CASE("tile_state broadcasts the state over cells") {
  Graph<double> g;
  auto f = g.leaf(Tensor<double>::from({2, 2, 1}, {1, 2, 3, 4}));
  auto s = g.leaf(Tensor<double>::from({1}, {7}));
  auto out = tile_state(f, s);
  REQUIRE(out.shape() == std::vector<int>{2, 2, 2});
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) CHECK(out.tensor().at({r, c, 1}) == 7.0);

  Tensor<double> empty;
  empty.shape = {0};
  SECTION("zero-length state is the identity") {
    Graph<double> g2;
    auto f2 = g2.leaf(Tensor<double>::from({2, 2, 1}, {1, 2, 3, 4}));
    Tensor<double> s0;
    s0.shape = {0};
    auto out2 = tile_state(f2, g2.leaf(s0));
    CHECK(out2.id == f2.id);
  }
  SECTION("shape contract at full scale") {
    Graph<float> g3;
    Rng rng(9);
    auto f3 = g3.leaf(test::random_tensor<float>({64, 64, 32}, rng));
    auto s3 = g3.leaf(test::random_tensor<float>({4}, rng));
    CHECK(tile_state(f3, s3).shape() == std::vector<int>{64, 64, 36});
  }
}

TEST_CASE("spatial_soft_argmax of a uniform map is the origin") {
  Graph<double> g;
  auto f = g.leaf(Tensor<double>({8, 8, 2}, 0.37));
  auto kp = spatial_soft_argmax(f);
  REQUIRE(kp.shape() == std::vector<int>{4});
  for (int i = 0; i < 4; ++i) CHECK(std::fabs(kp.tensor()[i]) < 1e-9);
}

TEST_CASE("spatial_soft_argmax of two symmetric peaks is the midpoint") {
  // 5x5 grid has cells exactly at x = -0.5 and x = +0.5 (row 2).
  Graph<double> g;
  Tensor<double> f({5, 5, 1}, -100.0);
  f.at({2, 1, 0}) = 40.0;
  f.at({2, 3, 0}) = 40.0;
  auto kp = spatial_soft_argmax(g.leaf(f));
  CHECK(std::fabs(kp.tensor()[0]) < 1e-9);   // x
  CHECK(std::fabs(kp.tensor()[1]) < 1e-9);   // y
}

TEST_CASE("spatial_soft_argmax concentrates on a single hot cell") {
  Graph<double> g;
  Tensor<double> f({8, 8, 1});
  f.at({5, 2, 0}) = 50.0;
  auto kp = spatial_soft_argmax(g.leaf(f), 1.0);
  CHECK(kp.tensor()[0] == Catch::Approx(grid_coord(2, 8)).margin(1e-3));
  CHECK(kp.tensor()[1] == Catch::Approx(grid_coord(5, 8)).margin(1e-3));
}

TEST_CASE("spatial_soft_argmax is invariant to per-channel shifts") {
  Rng rng(21);
  Graph<double> g;
  auto base = test::random_tensor<double>({6, 7, 3}, rng);
  Tensor<double> shifted = base;
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 7; ++c)
      for (int k = 0; k < 3; ++k) shifted.at({r, c, k}) += 5.0 * (k + 1);
  auto kp1 = spatial_soft_argmax(g.leaf(base));
  auto kp2 = spatial_soft_argmax(g.leaf(shifted));
  for (int i = 0; i < 6; ++i)
    CHECK(std::fabs(kp1.tensor()[i] - kp2.tensor()[i]) < 1e-9);
}

TEST_CASE("spatial_soft_argmax converges to the max cell as temperature drops") {
  Rng rng(23);
  Graph<double> g;
  auto f = test::random_tensor<double>({8, 8, 1}, rng, 0.0, 1.0);
  // Make the max unique with a clear gap.
  f.at({3, 6, 0}) = 2.0;
  auto kp = spatial_soft_argmax(g.leaf(f), 1e-3);
  CHECK(kp.tensor()[0] == Catch::Approx(grid_coord(6, 8)).margin(1e-3));
  CHECK(kp.tensor()[1] == Catch::Approx(grid_coord(3, 8)).margin(1e-3));
}

TEST_CASE("keypoints stay inside the unit box") {
  Rng rng(29);
  for (int t = 0; t < 5; ++t) {
    Graph<double> g;
    auto f = g.leaf(test::random_tensor<double>({7, 9, 4}, rng, -50.0, 50.0));
    auto kp = spatial_soft_argmax(f);
    for (std::int64_t i = 0; i < kp.tensor().numel(); ++i) {
      CHECK(kp.tensor()[i] >= -1.0);
      CHECK(kp.tensor()[i] <= 1.0);
    }
  }
}

TEST_CASE("dropout identity cases") {
  Graph<double> g;
  Rng rng(31);
  auto x = g.leaf(test::random_tensor<double>({10}, rng));
  CHECK(dropout(x, 0.0, Mode::kTrain, 1).id == x.id);
  CHECK(dropout(x, 0.5, Mode::kInfer, 1).id == x.id);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, 1), ShapeError);
}

TEST_CASE("dropout keeps half the scalars and preserves the mean") {
  Graph<float> g;
  auto x = g.leaf(Tensor<float>({100000}, 1.0f));
  auto y = dropout(x, 0.5, Mode::kTrain, 12345);
  std::int64_t survivors = 0;
  double sum = 0;
  for (std::int64_t i = 0; i < y.tensor().numel(); ++i) {
    if (y.tensor()[i] != 0.0f) ++survivors;
    sum += y.tensor()[i];
  }
  const double frac = static_cast<double>(survivors) / 100000.0;
  CHECK(std::fabs(frac - 0.5) < 0.01);
  CHECK(std::fabs(sum / 100000.0 - 1.0) < 0.02);
}

TEST_CASE("dropout expectation over seeds equals the input") {
  Graph<double> g;
  auto x = g.leaf(Tensor<double>::from({4}, {1.0, -2.0, 3.0, 0.5}));
  std::vector<double> acc(4, 0.0);
  const int seeds = 10000;
  for (int s = 0; s < seeds; ++s) {
    auto y = dropout(x, 0.25, Mode::kTrain, 2000 + static_cast<std::uint64_t>(s));
    for (int i = 0; i < 4; ++i) acc[static_cast<std::size_t>(i)] += y.tensor()[i];
  }
  for (int i = 0; i < 4; ++i) {
    const double mean = acc[static_cast<std::size_t>(i)] / seeds;
    CHECK(std::fabs(mean - x.tensor()[i]) < 0.02 * std::fabs(x.tensor()[i]));
  }
}

TEST_CASE("one_hot") {
  auto v = one_hot<double>(2, 4);
  CHECK(v.data == std::vector<double>{0, 0, 1, 0});
  CHECK(one_hot<double>(0, 1).data == std::vector<double>{1});
  auto last = one_hot<double>(9, 10);
  CHECK(last[9] == 1.0);
  CHECK_THROWS_AS(one_hot<double>(4, 4), ShapeError);
  CHECK_THROWS_AS(one_hot<double>(-1, 4), ShapeError);
}

TEST_CASE("dense layer basics") {
  Graph<double> g;
  Rng rng(37);
  auto x = g.leaf(test::random_tensor<double>({5}, rng));

  SECTION("zero weights give zeros") {
    auto out = dense(x, g.leaf(Tensor<double>({5, 3})), g.leaf(Tensor<double>({3})),
                     Activation::kLinear);
    for (int i = 0; i < 3; ++i) CHECK(out.tensor()[i] == 0.0);
  }
  SECTION("identity weights pass the input through") {
    Tensor<double> eye({5, 5});
    for (int i = 0; i < 5; ++i) eye.at({i, i}) = 1.0;
    auto out = dense(x, g.leaf(eye), g.leaf(Tensor<double>({5})), Activation::kLinear);
    for (int i = 0; i < 5; ++i) CHECK(out.tensor()[i] == Catch::Approx(x.tensor()[i]));
  }
  SECTION("matches an explicit dot-product loop") {
    auto wt = test::random_tensor<double>({5, 4}, rng);
    auto bt = test::random_tensor<double>({4}, rng);
    auto out = dense(x, g.leaf(wt), g.leaf(bt), Activation::kLinear);
    for (int j = 0; j < 4; ++j) {
      double want = bt[j];
      for (int i = 0; i < 5; ++i) want += x.tensor()[i] * wt.at({i, j});
      CHECK(out.tensor()[j] == Catch::Approx(want).margin(1e-6));
    }
  }
  SECTION("width mismatch is rejected") {
    CHECK_THROWS_AS(dense(x, g.leaf(Tensor<double>({4, 3})), g.leaf(Tensor<double>({3})),
                          Activation::kLinear),
                    ShapeError);
  }
}

TEST_CASE("grad check: all net blocks") {
  const double tol = 1e-5;

  SECTION("conv block, both strides") {
    for (int stride : {1, 2}) {
      Rng rng(41 + stride);
      Graph<double> g;
      auto x = g.leaf(test::random_tensor<double>({1, 6, 6, 2}, rng), "x", true);
      auto w = g.leaf(test::random_tensor<double>({5, 5, 2, 3}, rng, -0.5, 0.5), "w", true);
      auto b = g.leaf(test::random_tensor<double>({3}, rng, -0.2, 0.2), "b", true);
      auto mix = g.leaf(test::random_tensor<double>(conv2d(x, w, b, stride).shape(), rng));
      Graph<double> g2;  // rebuild cleanly so the mix leaf is not downstream
      auto x2 = g2.leaf(x.tensor(), "x", true);
      auto w2 = g2.leaf(w.tensor(), "w", true);
      auto b2 = g2.leaf(b.tensor(), "b", true);
      auto out = relu(conv2d(x2, w2, b2, stride));
      auto loss = sum_reduce(multiply(out, g2.leaf(mix.tensor())));
      auto report = grad_check(g2, loss, tol);
      INFO("stride " << stride);
      CHECK(report.pass);
    }
  }
  SECTION("dense") {
    Rng rng(43);
    Graph<double> g;
    auto x = g.leaf(test::random_tensor<double>({2, 4}, rng), "x", true);
    auto w = g.leaf(test::random_tensor<double>({4, 3}, rng), "w", true);
    auto b = g.leaf(test::random_tensor<double>({3}, rng), "b", true);
    auto loss = sum_reduce(multiply(dense(x, w, b, Activation::kTanh),
                                    g.leaf(test::random_tensor<double>({2, 3}, rng))));
    CHECK(grad_check(g, loss, tol).pass);
  }
  SECTION("spatial soft argmax") {
    Rng rng(47);
    Graph<double> g;
    auto f = g.leaf(test::random_tensor<double>({2, 4, 5, 3}, rng), "f", true);
    auto loss = sum_reduce(multiply(spatial_soft_argmax(f),
                                    g.leaf(test::random_tensor<double>({2, 6}, rng))));
    CHECK(grad_check(g, loss, tol).pass);
  }
  SECTION("upsample2x") {
    Rng rng(53);
    Graph<double> g;
    auto x = g.leaf(test::random_tensor<double>({1, 3, 3, 2}, rng), "x", true);
    auto loss = sum_reduce(multiply(upsample2x(x),
                                    g.leaf(test::random_tensor<double>({1, 6, 6, 2}, rng))));
    CHECK(grad_check(g, loss, tol).pass);
  }
  SECTION("tile_state + dropout composite") {
    Rng rng(59);
    Graph<double> g;
    auto f = g.leaf(test::random_tensor<double>({1, 3, 3, 2}, rng), "f", true);
    auto s = g.leaf(test::random_tensor<double>({1, 2}, rng), "s", true);
    auto out = dropout(tile_state(f, s), 0.3, Mode::kTrain, 777);
    auto loss = sum_reduce(multiply(out, g.leaf(test::random_tensor<double>(out.shape(), rng))));
    CHECK(grad_check(g, loss, tol).pass);
  }
}
