#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "wsc/conv.hpp"
#include "wsc/gradcheck.hpp"
#include "wsc/ops.hpp"

using namespace wsc;

namespace {

TensorD rnd(Shape s, Rng& rng) { return TensorD::randn(std::move(s), rng); }

// sum(f(x) * r) with fixed random weights r
TensorD wsum(const TensorD& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, TensorD::randn(y.shape(), rng)));
}

}  // namespace

TEST(Tensor, ConstantFactories) {
  auto z = TensorD::zeros({2, 3});
  EXPECT_EQ(z.numel(), 6u);
  for (auto v : z.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(TensorD::ones({1}).item(), 1.0);
  auto f = TensorD::full({2}, 0.5);
  EXPECT_EQ(f[0], 0.5);
  EXPECT_EQ(f[1], 0.5);
  EXPECT_FALSE(f.requires_grad());
  EXPECT_THROW(TensorD::zeros({2, 0}), ShapeError);
  EXPECT_THROW(TensorD::zeros({}), ShapeError);
}

TEST(Tensor, RandnDeterministicAndCentered) {
  Rng a(7), b(7);
  auto x = TensorD::randn({4}, a), y = TensorD::randn({4}, b);
  for (int i = 0; i < 4; ++i) EXPECT_EQ(x[i], y[i]);
  Rng c(12345);
  auto big = TensorD::randn({100000}, c);
  double m = std::accumulate(big.data().begin(), big.data().end(), 0.0) / 100000.0;
  EXPECT_LT(std::abs(m), 0.02);
  Rng d(1);
  EXPECT_THROW(TensorD::randn({}, d), ShapeError);
}

TEST(Tensor, ElementwiseArithmetic) {
  auto a = TensorD::from_data({2}, {1, 2}), b = TensorD::from_data({2}, {3, 4});
  auto c = add(a, b);
  EXPECT_EQ(c[0], 4.0);
  EXPECT_EQ(c[1], 6.0);
  auto z = add(a, TensorD::zeros({2}));
  EXPECT_EQ(z.vec(), a.vec());
  EXPECT_THROW(add(a, TensorD::zeros({3})), ShapeError);

  auto x = TensorD::from_data({1}, {3}, true);
  sum(mul(x, x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
}

TEST(Tensor, BackwardAccumulates) {
  auto x = TensorD::from_data({5}, {1, 2, 3, 4, 5}, true);
  auto loss = sum(x);
  loss.backward();
  for (auto g : x.grad()) EXPECT_EQ(g, 1.0);
  loss.backward();
  for (auto g : x.grad()) EXPECT_EQ(g, 2.0);
  EXPECT_THROW(x.backward(), ShapeError);
}

TEST(Tensor, BackwardThroughSharedSubgraphVisitsOnce) {
  auto x = TensorD::from_data({1}, {2}, true);
  auto y = mul(x, x);        // x^2
  auto z = add(y, y);        // 2 x^2
  auto loss = sum(mul(z, y)); // 2 x^4 -> 8 x^3 = 64
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 64.0);
  loss.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 128.0);
}

TEST(Tensor, Matmul) {
  auto eye = TensorD::from_data({2, 2}, {1, 0, 0, 1});
  Rng rng(3);
  auto X = rnd({2, 5}, rng);
  EXPECT_EQ(matmul(eye, X).vec(), X.vec());
  EXPECT_EQ(matmul(rnd({2, 3}, rng), rnd({3, 4}, rng)).shape(), (Shape{2, 4}));
  EXPECT_THROW(matmul(rnd({2, 3}, rng), rnd({2, 4}, rng)), ShapeError);
  auto a = rnd({3, 4}, rng), b = rnd({4, 2}, rng);
  auto r = grad_check([&] { return wsum(matmul(a, b)); }, {a, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Tensor, BatchedMatmulAllTransposeCombos) {
  Rng rng(5);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      auto a = ta ? rnd({2, 4, 3}, rng) : rnd({2, 3, 4}, rng);
      auto b = tb ? rnd({2, 5, 4}, rng) : rnd({2, 4, 5}, rng);
      auto y = bmm(a, b, ta, tb);
      ASSERT_EQ(y.shape(), (Shape{2, 3, 5}));
      // direct oracle for one entry
      double s = 0;
      for (int k = 0; k < 4; ++k) {
        double av = ta ? a[(1 * 4 + k) * 3 + 2] : a[(1 * 3 + 2) * 4 + k];
        double bv = tb ? b[(1 * 5 + 4) * 4 + k] : b[(1 * 4 + k) * 5 + 4];
        s += av * bv;
      }
      EXPECT_NEAR(y[(1 * 3 + 2) * 5 + 4], s, 1e-12);
      auto r = grad_check([&] { return wsum(bmm(a, b, ta, tb)); }, {a, b});
      EXPECT_LT(r.max_rel_error, 1e-4) << ta << tb;
    }
}

TEST(Tensor, ConcatSplitRoundtripAndGrad) {
  Rng rng(11);
  auto a = rnd({1, 3, 4, 4, 4}, rng), b = rnd({1, 3, 4, 4, 4}, rng);
  auto c = concat<double>({a, b}, 1);
  EXPECT_EQ(c.shape(), (Shape{1, 6, 4, 4, 4}));
  auto parts = split(c, 1, {3, 3});
  EXPECT_EQ(parts[0].vec(), a.vec());
  EXPECT_EQ(parts[1].vec(), b.vec());
  EXPECT_THROW(concat<double>({a, rnd({1, 3, 4, 4, 3}, rng)}, 1), ShapeError);
  EXPECT_THROW(concat<double>({a, b}, 5), ShapeError);
  auto x = rnd({2, 3}, rng), y = rnd({2, 2}, rng);
  auto r = grad_check([&] { return wsum(concat<double>({x, y}, 1)); }, {x, y});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Tensor, PermuteRollPadRoundtrips) {
  Rng rng(13);
  auto x = rnd({2, 3, 4, 5}, rng);
  std::vector<std::size_t> p{2, 0, 3, 1};
  auto back = permute(permute(x, p), inverse_permutation(p));
  EXPECT_EQ(back.vec(), x.vec());
  EXPECT_THROW(permute(x, {0, 0, 1, 2}), ShapeError);

  auto v = rnd({1, 4, 4, 4}, rng);
  auto rolled = roll(roll(v, {0, 1, 1, 1}), {0, -1, -1, -1});
  EXPECT_EQ(rolled.vec(), v.vec());
  auto r1 = roll(TensorD::from_data({4}, {0, 1, 2, 3}), {1});
  EXPECT_EQ(r1.vec(), (std::vector<double>{3, 0, 1, 2}));

  auto cube = TensorD::ones({4, 4, 4});
  auto padded = pad(cube, {1, 1, 1}, {1, 1, 1});
  ASSERT_EQ(padded.shape(), (Shape{6, 6, 6}));
  double total = 0;
  for (auto e : padded.data()) total += e;
  EXPECT_EQ(total, 64.0);
  EXPECT_EQ(padded[0], 0.0);
  EXPECT_EQ(padded[(1 * 6 + 1) * 6 + 1], 1.0);
  auto cropped = slice(slice(slice(padded, 0, 1, 4), 1, 1, 4), 2, 1, 4);
  EXPECT_EQ(cropped.vec(), cube.vec());
  EXPECT_THROW(reshape(x, {7}), ShapeError);

  auto g = rnd({2, 3, 4}, rng);
  auto r = grad_check([&] { return wsum(roll(permute(pad(g, {0, 1, 0}, {1, 0, 2}), {2, 0, 1}), {1, -2, 3})); }, {g});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Conv, ShapesAndValues) {
  Rng rng(17);
  auto x = rnd({1, 1, 4, 4, 4}, rng);
  auto w = rnd({5, 1, 3, 3, 3}, rng);
  EXPECT_EQ(conv3d(x, w, TensorD::zeros({5}), 1, 1).shape(), (Shape{1, 5, 4, 4, 4}));
  EXPECT_EQ(conv3d(rnd({1, 1, 5, 5, 5}, rng), w, TensorD(), 2, 1).shape(), (Shape{1, 5, 3, 3, 3}));
  auto ones = TensorD::ones({1, 1, 3, 3, 3});
  auto k = TensorD::ones({1, 1, 3, 3, 3});
  auto y = conv3d(ones, k, TensorD(), 1, 0);
  ASSERT_EQ(y.numel(), 1u);
  EXPECT_DOUBLE_EQ(y.item(), 27.0);
  EXPECT_THROW(conv3d(rnd({1, 2, 4, 4, 4}, rng), w, TensorD()), ShapeError);
  EXPECT_THROW(conv3d(rnd({1, 1, 2, 2, 2}, rng), w, TensorD(), 1, 0), ShapeError);
}

TEST(Conv, MatchesDirectLoopOracle) {
  Rng rng(19);
  auto x = rnd({2, 2, 5, 4, 3}, rng);
  auto w = rnd({3, 2, 3, 3, 3}, rng);
  auto b = rnd({3}, rng);
  const std::size_t s = 2, p = 1;
  auto y = conv3d(x, w, b, s, p);
  ASSERT_EQ(y.shape(), (Shape{2, 3, 3, 2, 2}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t co = 0; co < 3; ++co)
      for (std::size_t z = 0; z < 3; ++z)
        for (std::size_t yy = 0; yy < 2; ++yy)
          for (std::size_t xx = 0; xx < 2; ++xx) {
            double acc = b[co];
            for (std::size_t ci = 0; ci < 2; ++ci)
              for (int a = 0; a < 3; ++a)
                for (int bb = 0; bb < 3; ++bb)
                  for (int c = 0; c < 3; ++c) {
                    long iz = long(z * s) - long(p) + a, iy = long(yy * s) - long(p) + bb, ix = long(xx * s) - long(p) + c;
                    if (iz < 0 || iz >= 5 || iy < 0 || iy >= 4 || ix < 0 || ix >= 3) continue;
                    acc += x[(((n * 2 + ci) * 5 + iz) * 4 + iy) * 3 + ix] * w[(((co * 2 + ci) * 3 + a) * 3 + bb) * 3 + c];
                  }
            EXPECT_NEAR(y[(((n * 3 + co) * 3 + z) * 2 + yy) * 2 + xx], acc, 1e-12);
          }
}

TEST(Conv, GradientCheck) {
  Rng rng(23);
  auto x = rnd({1, 2, 3, 3, 3}, rng);
  auto w = rnd({2, 2, 3, 3, 3}, rng);
  auto b = rnd({2}, rng);
  auto r = grad_check([&] { return wsum(conv3d(x, w, b, 1, 1)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
  auto r2 = grad_check([&] { return wsum(conv3d(x, w, b, 2, 1)); }, {x, w, b});
  EXPECT_LT(r2.max_rel_error, 1e-4);
}

TEST(ConvTranspose, ShapesValuesAndGradient) {
  Rng rng(29);
  auto single = TensorD::from_data({1, 1, 1, 1, 1}, {2.5});
  auto k = rnd({1, 1, 2, 2, 2}, rng);
  auto y = conv_transpose3d(single, k, TensorD(), 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2, 2}));
  for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(y[i], 2.5 * k[i]);

  auto x = rnd({1, 4, 3, 3, 3}, rng);
  auto w = rnd({4, 2, 2, 2, 2}, rng);
  auto b = rnd({2}, rng);
  EXPECT_EQ(conv_transpose3d(x, w, b).shape(), (Shape{1, 2, 6, 6, 6}));
  auto r = grad_check([&] { return wsum(conv_transpose3d(x, w, b)); }, {x, w, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
  EXPECT_THROW(conv_transpose3d(rnd({1, 3, 2, 2, 2}, rng), w, b), ShapeError);
}

TEST(ConvTranspose, IsAdjointOfStridedConv) {
  // <conv(x), y> == <x, conv_transpose(y)> for matching geometry, k == s == 2
  Rng rng(31);
  auto x = rnd({1, 2, 4, 4, 4}, rng);
  auto w = rnd({3, 2, 2, 2, 2}, rng);  // conv: 2 -> 3
  auto y = rnd({1, 3, 2, 2, 2}, rng);
  auto cx = conv3d(x, w, TensorD(), 2, 0);
  // transposed weight layout [Cin=3 (of y), Cout=2, k^3] equals conv weight [3, 2, k^3]
  auto ty = conv_transpose3d(y, w, TensorD(), 2);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.numel(); ++i) lhs += cx[i] * y[i];
  for (std::size_t i = 0; i < x.numel(); ++i) rhs += x[i] * ty[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Norm, GroupNormProperties) {
  Rng rng(37);
  auto gamma = TensorD::ones({4}), beta = TensorD::zeros({4});
  auto x = rnd({2, 4, 3, 3, 3}, rng);
  auto y = group_norm(x, 2, gamma, beta);
  const std::size_t block = 2 * 27;
  for (std::size_t g = 0; g < 4; ++g) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < block; ++j) m += y[g * block + j];
    m /= block;
    for (std::size_t j = 0; j < block; ++j) v += (y[g * block + j] - m) * (y[g * block + j] - m);
    v /= block;
    EXPECT_LT(std::abs(m), 1e-5);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
  auto bvals = TensorD::from_data({4}, {0.1, -0.2, 0.3, 0.4});
  auto c = group_norm(TensorD::full({1, 4, 2, 2, 2}, 3.0), 2, rnd({4}, rng), bvals);
  for (std::size_t i = 0; i < c.numel(); ++i) EXPECT_NEAR(c[i], bvals[i / 8], 1e-12);
  EXPECT_THROW(group_norm(x, 3, gamma, beta), ShapeError);

  auto gm = rnd({4}, rng), bt = rnd({4}, rng);
  auto r = grad_check([&] { return wsum(group_norm(x, 2, gm, bt)); }, {x, gm, bt});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Norm, LayerNormGradient) {
  Rng rng(41);
  auto x = rnd({3, 5, 6}, rng), g = rnd({6}, rng), b = rnd({6}, rng);
  auto r = grad_check([&] { return wsum(layer_norm(x, g, b)); }, {x, g, b});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Activation, ReluGeluSoftmax) {
  auto r = relu(TensorD::from_data({2}, {-1, 2}));
  EXPECT_EQ(r.vec(), (std::vector<double>{0, 2}));
  auto s = softmax(TensorD::from_data({2}, {0, 0}), 0);
  EXPECT_DOUBLE_EQ(s[0], 0.5);
  auto big = softmax(TensorD::from_data({2}, {1000, 0}), 0);
  EXPECT_TRUE(std::isfinite(big[0]) && std::isfinite(big[1]));
  EXPECT_NEAR(big[0], 1.0, 1e-12);
  EXPECT_NEAR(big[1], 0.0, 1e-12);
  EXPECT_THROW(softmax(TensorD::zeros({2}), 1), ShapeError);

  Rng rng(43);
  auto x = rnd({3, 4, 5}, rng);
  for (std::size_t axis = 0; axis < 3; ++axis) {
    auto y = softmax(x, axis);
    // rows along `axis` sum to 1
    auto sums = permute(y, axis == 0 ? std::vector<std::size_t>{1, 2, 0}
                                     : axis == 1 ? std::vector<std::size_t>{0, 2, 1} : std::vector<std::size_t>{0, 1, 2});
    const std::size_t n = x.dim(axis);
    for (std::size_t row = 0; row < sums.numel() / n; ++row) {
      double t = 0;
      for (std::size_t k = 0; k < n; ++k) t += sums[row * n + k];
      EXPECT_NEAR(t, 1.0, 1e-6);
    }
    auto rr = grad_check([&] { return wsum(softmax(x, axis)); }, {x});
    EXPECT_LT(rr.max_rel_error, 1e-4);
  }
  auto rg = grad_check([&] { return wsum(gelu(x)); }, {x});
  EXPECT_LT(rg.max_rel_error, 1e-4);
}

TEST(GradCheck, QuadraticIsNearlyExact) {
  Rng rng(47);
  auto x = rnd({6}, rng);
  auto r = grad_check([&] { return sum(mul(x, x)); }, {x});
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_EQ(r.checked, 6u);
}

TEST(GradCheck, SkipsReluKinks) {
  // one coordinate sits within eps of the kink
  auto x = TensorD::from_data({3}, {1e-8, 0.5, -0.7});
  auto r = grad_check([&] { return sum(relu(x)); }, {x});
  EXPECT_EQ(r.skipped_kinks, 1u);
  EXPECT_EQ(r.checked, 2u);
  EXPECT_LT(r.max_rel_error, 1e-8);
}

TEST(GradCheck, CompositeConvNormRelu) {
  Rng rng(53);
  auto x = rnd({1, 2, 3, 3, 3}, rng);
  auto w = TensorD::randn({4, 2, 3, 3, 3}, rng, 0.3);
  auto b = rnd({4}, rng);
  auto g = rnd({4}, rng), be = rnd({4}, rng);
  auto r = grad_check([&] { return wsum(relu(group_norm(conv3d(x, w, b, 1, 1), 2, g, be))); }, {x, w, b, g, be});
  EXPECT_LT(r.max_rel_error, 1e-4);
}

TEST(Tensor, DeterministicOpSequence) {
  auto run = [] {
    Rng rng(61);
    auto x = TensorF::randn({1, 2, 4, 4, 4}, rng);
    auto w = TensorF::randn({3, 2, 3, 3, 3}, rng);
    return softmax(conv3d(x, w, TensorF(), 1, 1), 1).vec();
  };
  EXPECT_EQ(run(), run());
}
