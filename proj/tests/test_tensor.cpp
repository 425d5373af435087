#include <gtest/gtest.h>

#include "common.hpp"

using namespace mvflow;
using mvtest::max_abs_diff;
using mvtest::random_tensor;

namespace {

// Direct nested-loop cross-correlation.
Tensor<double> naive_conv(const Tensor<double>& in, const Tensor<double>& w, const Tensor<double>& b, ConvSpec s) {
  const int cin = in.dim(0), h = in.dim(1), wd = in.dim(2), cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const int ho = conv_out_size(h, kh, s), wo = conv_out_size(wd, kw, s);
  Tensor<double> out(Shape{cout, ho, wo});
  for (int co = 0; co < cout; ++co)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        double acc = b.empty() ? 0.0 : b[co];
        for (int ci = 0; ci < cin; ++ci)
          for (int ky = 0; ky < kh; ++ky)
            for (int kx = 0; kx < kw; ++kx) {
              const int iy = y * s.stride - s.padding + ky * s.dilation;
              const int ix = x * s.stride - s.padding + kx * s.dilation;
              if (iy < 0 || iy >= h || ix < 0 || ix >= wd) continue;
              acc += in.at(ci, iy, ix) * w[((co * cin + ci) * kh + ky) * kw + kx];
            }
        out.at(co, y, x) = acc;
      }
  return out;
}

}  // namespace

TEST(Conv2d, MatchesNestedLoopOracle) {
  std::mt19937_64 rng(7);
  const ConvSpec specs[] = {ConvSpec::same(3), ConvSpec::same(3, 2), ConvSpec{2, 1, 1}, ConvSpec{1, 3, 3},
                            ConvSpec{2, 2, 0}};
  for (const auto& s : specs) {
    auto in = random_tensor<double>({3, 9, 11}, rng);
    auto w = random_tensor<double>({5, 3, 3, 3}, rng);
    auto b = random_tensor<double>({5}, rng);
    auto got = conv2d(in, w, b, s);
    auto want = naive_conv(in, w, b, s);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-12);
  }
}

TEST(Conv2d, IsLinearInInput) {
  std::mt19937_64 rng(8);
  auto a = random_tensor<double>({2, 6, 6}, rng), b = random_tensor<double>({2, 6, 6}, rng);
  auto w = random_tensor<double>({3, 2, 3, 3}, rng);
  Tensor<double> sum(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) sum[i] = 2 * a[i] - 3 * b[i];
  auto ya = conv2d(a, w, {}, ConvSpec::same(3)), yb = conv2d(b, w, {}, ConvSpec::same(3));
  auto ys = conv2d(sum, w, {}, ConvSpec::same(3));
  for (std::size_t i = 0; i < ys.size(); ++i) EXPECT_NEAR(ys[i], 2 * ya[i] - 3 * yb[i], 1e-12);
}

TEST(Conv2d, IdentityKernelCopiesInput) {
  std::mt19937_64 rng(9);
  auto in = random_tensor<float>({1, 5, 5}, rng);
  Tensor<float> w(Shape{1, 1, 3, 3});
  w[4] = 1;
  EXPECT_EQ(conv2d(in, w, {}, ConvSpec::same(3)), in);
}

TEST(Conv2d, RejectsBadShapes) {
  Tensor<float> in(Shape{2, 4, 4}), w(Shape{3, 1, 3, 3});
  EXPECT_THROW(conv2d(in, w, {}, ConvSpec::same(3)), ShapeError);
  Tensor<float> w2(Shape{3, 2, 3, 3}), b(Shape{2});
  EXPECT_THROW(conv2d(in, w2, b, ConvSpec::same(3)), ShapeError);
}

TEST(Conv2d, NonFiniteOutputRaises) {
  Tensor<float> in(Shape{1, 3, 3}, 1.0f), w(Shape{1, 1, 3, 3}, 1.0f);
  in[0] = std::numeric_limits<float>::infinity();
  EXPECT_THROW(conv2d(in, w, {}, ConvSpec::same(3)), NumericError);
}

TEST(Softmax, MatchesNaiveFormula) {
  std::vector<double> x{0.3, -1.2, 2.0, 0.0};
  auto p = softmax(x);
  double z = 0;
  for (double v : x) z += std::exp(v);
  double s = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(p[i], std::exp(x[i]) / z, 1e-15);
    s += p[i];
  }
  EXPECT_NEAR(s, 1.0, 1e-15);
}

TEST(Softmax, LargeLogitsStayFinite) {
  auto p = softmax(std::vector<float>{1000.0f, 1000.0f, -1000.0f});
  EXPECT_FLOAT_EQ(p[0], 0.5f);
  EXPECT_FLOAT_EQ(p[1], 0.5f);
  EXPECT_EQ(p[2], 0.0f);
  auto q = softmax(std::vector<double>{1e300, 0.0});
  EXPECT_EQ(q[0], 1.0);
}

TEST(Softmax, NegativeInfinityGetsZeroWeight) {
  const double inf = std::numeric_limits<double>::infinity();
  auto p = softmax(std::vector<double>{-inf, 0.0, 0.0});
  EXPECT_EQ(p[0], 0.0);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
  EXPECT_THROW(softmax(std::vector<double>{-inf, -inf}), NumericError);
}

TEST(Sigmoid, SaturatesWithoutOverflow) {
  EXPECT_EQ(sigmoid_scalar(1000.0), 1.0);
  EXPECT_EQ(sigmoid_scalar(-1000.0), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid_scalar(0.0), 0.5);
}

TEST(AvgPool, AveragesBlocks) {
  Tensor<float> in(Shape{1, 2, 4}, std::vector<float>{1, 2, 3, 4, 5, 6, 7, 8});
  auto out = avg_pool(in, 2);
  EXPECT_EQ(out.shape(), (Shape{1, 1, 2}));
  EXPECT_FLOAT_EQ(out[0], 3.5f);
  EXPECT_FLOAT_EQ(out[1], 5.5f);
  EXPECT_THROW(avg_pool(in, 3), ShapeError);
}

TEST(Tape, BackwardRequiresScalarLoss) {
  Tape<double> t;
  auto x = t.param("x", Tensor<double>(Shape{2}, 1.0));
  EXPECT_THROW(t.backward(x), ShapeError);
}

TEST(Tape, FrozenParametersGetZeroGradient) {
  Tape<double> t;
  auto a = t.param("a", Tensor<double>(Shape{1}, 2.0));
  auto b = t.param("b", Tensor<double>(Shape{1}, 3.0), false);
  t.backward(sum(mul(a, b)));
  auto g = t.param_grads();
  EXPECT_DOUBLE_EQ(g.at("a")[0], 3.0);
  EXPECT_DOUBLE_EQ(g.at("b")[0], 0.0);
}

TEST(GradCheck, ConvReluSigmoidChain) {
  std::mt19937_64 rng(11);
  ParamSet<double> p;
  p.add("x", random_tensor<double>({2, 8, 8}, rng));
  p.add("w1", random_tensor<double>({3, 2, 3, 3}, rng));
  p.add("b1", random_tensor<double>({3}, rng));
  p.add("w2", random_tensor<double>({2, 3, 3, 3}, rng));
  p.add("b2", random_tensor<double>({2}, rng));
  auto fn = [](Tape<double>& t, const ParamSet<double>& q) {
    auto x = t.param("x", q.at("x"));
    auto h = relu(conv2d(x, t.param("w1", q.at("w1")), t.param("b1", q.at("b1")), ConvSpec{2, 1, 1}));
    auto y = sigmoid(conv2d(h, t.param("w2", q.at("w2")), t.param("b2", q.at("b2")), ConvSpec::same(3, 2)));
    auto z = concat<double>({y, avg_pool(x, 2)});
    return sum(mul(slice_channels(z, 1, 2), scale(slice_channels(z, 0, 2), 0.5)));
  };
  auto r = grad_check(fn, p);
  EXPECT_TRUE(r.passed) << r.summary();
}

TEST(GradCheck, DetectsWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  ParamSet<double> p;
  p.add("x", Tensor<double>(Shape{3}, std::vector<double>{0.5, -1.0, 2.0}));
  auto fn = [](Tape<double>& t, const ParamSet<double>& q) {
    auto x = t.param("x", q.at("x"));
    Tensor<double> sq(x.value());
    for (auto& v : sq.vec()) v *= v;
    auto y = t.emit(sq, {x}, [x](Tape<double>& tt, const Tensor<double>& g) {
      Tensor<double> gx(tt.value(x));
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] *= 3 * g[i];
      tt.accumulate(x, gx);
    });
    return sum(y);
  };
  EXPECT_FALSE(grad_check(fn, p).passed);
}

TEST(GradCheck, NonDeterministicClosureRaises) {
  ParamSet<double> p;
  p.add("x", Tensor<double>(Shape{1}, 1.0));
  int calls = 0;
  auto fn = [&calls](Tape<double>& t, const ParamSet<double>& q) {
    auto x = t.param("x", q.at("x"));
    return sum(scale(x, 1.0 + 1e-3 * ++calls));
  };
  EXPECT_THROW(grad_check(fn, p), DeterminismError);
}

TEST(ParamSet, DuplicateNamesRejected) {
  ParamSet<float> p;
  p.add("a", Tensor<float>(Shape{1}));
  EXPECT_THROW(p.add("a", Tensor<float>(Shape{1})), ConfigError);
}
