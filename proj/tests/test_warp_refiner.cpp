#include <gtest/gtest.h>

#include "common.hpp"
#include "oracles.hpp"

using namespace mvflow;
using mvtest::random_tensor;

// ---- forward warp -------------------------------------------------------------------

TEST(ForwardWarp, ZeroFlowIsIdentity) {
  FlowField f(9, 7);
  auto r = forward_warp(f);
  EXPECT_EQ(r.flow.t, f.t);
  for (float m : r.mask.t.data()) EXPECT_EQ(m, 1.0f);
  for (float w : r.weight.data()) EXPECT_EQ(w, 1.0f);
}

TEST(ForwardWarp, IntegerShiftMovesValues) {
  FlowField f(12, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 12; ++x) f.u(y, x) = 5;
  auto r = forward_warp(f);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 12; ++x) {
      EXPECT_EQ(r.mask(y, x), x < 5 ? 0.0f : 1.0f);
      EXPECT_EQ(r.flow.u(y, x), x < 5 ? 0.0f : 5.0f);
    }
}

TEST(ForwardWarp, SplatMassMatchesScalarOracle) {
  std::mt19937_64 rng(30);
  for (int trial = 0; trial < 10; ++trial) {
    FlowField f(random_tensor({2, 11, 13}, rng, -4, 4));
    auto r = forward_warp(f);
    double total = 0;
    for (float w : r.weight.data()) total += w;
    EXPECT_NEAR(total, mvtest::splat_mass(f.t), 1e-4);
  }
}

TEST(ForwardWarp, InFrameFlowConservesMass) {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> u(0, 1);
  const int H = 10, W = 14;
  FlowField f(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      f.u(y, x) = float(u(rng) * (W - 1) - x);  // target anywhere inside the frame
      f.v(y, x) = float(u(rng) * (H - 1) - y);
    }
  auto r = forward_warp(f);
  double total = 0;
  for (float w : r.weight.data()) total += w;
  EXPECT_NEAR(total, H * W, 1e-3);
}

TEST(ForwardWarp, ThresholdControlsMask) {
  FlowField f(4, 1);
  f.u(0, 0) = 0.9f;  // splats 0.1 onto itself, 0.9 onto x=1
  for (int x = 1; x < 4; ++x) f.u(0, x) = 10;
  auto r = forward_warp(f);
  EXPECT_EQ(r.mask(0, 0), 0.0f);
  EXPECT_EQ(r.flow.u(0, 0), 0.0f);
  EXPECT_NEAR(r.mask(0, 1), 0.9f, 1e-6);
  EXPECT_NEAR(r.flow.u(0, 1), 0.9f, 1e-6);
}

TEST(ForwardWarp, NonFiniteInputRejected) {
  FlowField f(3, 3);
  f.u(1, 1) = std::nanf("");
  EXPECT_THROW(forward_warp(f), NumericError);
}

// ---- refiner ------------------------------------------------------------------------

TEST(Correlation, SelfCorrelationPeaksAtZeroOffset) {
  std::mt19937_64 rng(40);
  auto f = random_tensor<double>({16, 6, 6}, rng);
  // Normalise so the self dot product dominates.
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      double n = 0;
      for (int c = 0; c < 16; ++c) n += f.at(c, y, x) * f.at(c, y, x);
      for (int c = 0; c < 16; ++c) f.at(c, y, x) /= std::sqrt(n);
    }
  auto corr = local_correlation(f, f, Tensor<double>(Shape{2, 6, 6}), 2);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 6; ++x) {
      int best = 0;
      for (int o = 1; o < 25; ++o)
        if (corr.at(o, y, x) > corr.at(best, y, x)) best = o;
      EXPECT_EQ(best, 12);
    }
}

TEST(Correlation, TranslationPeak) {
  std::mt19937_64 rng(41);
  const int H = 6, W = 10;
  auto f1 = random_tensor<double>({8, H, W}, rng);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double n = 0;
      for (int c = 0; c < 8; ++c) n += f1.at(c, y, x) * f1.at(c, y, x);
      for (int c = 0; c < 8; ++c) f1.at(c, y, x) /= std::sqrt(n);
    }
  Tensor<double> f2(f1.shape());
  for (int c = 0; c < 8; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 2; x < W; ++x) f2.at(c, y, x) = f1.at(c, y, x - 2);
  auto corr = local_correlation(f1, f2, Tensor<double>(Shape{2, H, W}), 2);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W - 2; ++x) {
      int best = 0;
      for (int o = 1; o < 25; ++o)
        if (corr.at(o, y, x) > corr.at(best, y, x)) best = o;
      EXPECT_EQ(best, 2 * 5 + 4) << "offset (2,0) expected";
    }
}

TEST(Correlation, ZeroFeaturesZeroCorrelation) {
  Tensor<float> z(Shape{4, 5, 5});
  std::mt19937_64 rng(42);
  auto corr = local_correlation(z, z, random_tensor({2, 5, 5}, rng, -3, 3), 3);
  EXPECT_EQ(corr.shape(), (Shape{49, 5, 5}));
  for (float v : corr.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Correlation, GradientIncludesFlow) {
  std::mt19937_64 rng(43);
  ParamSet<double> p;
  p.add("f1", random_tensor<double>({3, 5, 5}, rng));
  p.add("f2", random_tensor<double>({3, 5, 5}, rng));
  p.add("flow", random_tensor<double>({2, 5, 5}, rng, -1.7, 1.7));
  auto probe = random_tensor<double>({9, 5, 5}, rng);
  auto fn = [&](Tape<double>& t, const ParamSet<double>& q) {
    auto c = local_correlation(t.param("f1", q.at("f1")), t.param("f2", q.at("f2")), t.param("flow", q.at("flow")), 1);
    return sum(mul(c, t.constant(probe)));
  };
  auto r = grad_check(fn, p);
  EXPECT_TRUE(r.passed) << r.summary();
  for (auto& pc : r.params) EXPECT_GT(pc.checked, 0u) << pc.name;
}

TEST(Features, ShapeAndDeterminism) {
  RefinerConfig c;
  std::mt19937_64 rng(44);
  ParamSet<float> p;
  init_refiner(p, c, rng);
  auto img = random_tensor({3, 16, 24}, rng);
  Tape<float> t(false);
  Bound<float> b{t, p};
  auto a = extract_features(b, t.constant(img), c).value();
  auto a2 = extract_features(b, t.constant(img), c).value();
  EXPECT_EQ(a.shape(), (Shape{32, 4, 6}));
  EXPECT_EQ(a, a2);
  EXPECT_EQ(a, run_stack(p, feature_stack(c), img));
  EXPECT_THROW(extract_features(b, t.constant(random_tensor({3, 10, 12}, rng)), c), ShapeError);
}

TEST(Refiner, IterationCountAndZeroIterations) {
  auto mc = mvtest::small_model();
  auto params = init_model_params(mc, 1);
  auto s = synth_sample(1, mvtest::synth_config(16, 16, 4));
  auto init = make_init(s, InitStrategy::zero, params, mc);
  auto r0 = iterate(s, init, 0, params, mc);
  EXPECT_TRUE(r0.coarse.empty());
  EXPECT_EQ(r0.full.t, upsample_flow(init, 2).t);
  auto r3 = iterate(s, init, 3, params, mc);
  EXPECT_EQ(r3.coarse.size(), 3u);
  EXPECT_EQ(r3.full.width(), 16);
  EXPECT_EQ(r3.full.t, upsample_flow(r3.coarse.back(), 2).t);
  EXPECT_THROW(iterate(s, init, -1, params, mc), ConfigError);
}

TEST(Refiner, PrefixOfLongerRunMatchesShorterRun) {
  auto mc = mvtest::small_model();
  auto params = init_model_params(mc, 2);
  auto s = synth_sample(2, mvtest::synth_config(16, 16, 4));
  auto a = estimate(s, InitStrategy::mvcm, 5, params, mc);
  auto b = estimate(s, InitStrategy::mvcm, 2, params, mc);
  EXPECT_EQ(a.refined.coarse[1].t, b.refined.coarse[1].t);
}

// ---- initialisation strategies ----------------------------------------------------------

TEST(Init, ZeroStrategyIsZero) {
  auto mc = mvtest::small_model();
  auto s = synth_sample(3, mvtest::synth_config(16, 16, 4));
  auto f = make_init(s, InitStrategy::zero, init_model_params(mc, 3), mc);
  EXPECT_EQ(f.width(), 8);
  for (float v : f.t.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Init, WarmStartRequiresPreviousFlow) {
  auto mc = mvtest::small_model();
  auto s = synth_sample(4, mvtest::synth_config(16, 16, 4));
  s.prev_flow.reset();
  auto p = init_model_params(mc, 4);
  EXPECT_THROW(make_init(s, InitStrategy::mvcm_warm_start, p, mc), ConfigError);
  EXPECT_THROW(make_init(s, InitStrategy::warm_start, p, mc), ConfigError);
  EXPECT_NO_THROW(make_init(s, InitStrategy::mvcm, p, mc));
}

TEST(Init, AllStrategiesRunAtBothResolutions) {
  for (auto res : {MvcmResolution::feature, MvcmResolution::full}) {
    auto mc = mvtest::small_model();
    mc.mvcm_resolution = res;
    auto p = init_model_params(mc, 5);
    auto s = synth_sample(5, mvtest::synth_config(16, 16, 4));
    for (auto st : {InitStrategy::zero, InitStrategy::warm_start, InitStrategy::mvcm, InitStrategy::mvcm_warm_start,
                    InitStrategy::raw_mv}) {
      auto e = estimate(s, st, 1, p, mc);
      EXPECT_EQ(e.init.width(), 8);
      EXPECT_TRUE(e.refined.full.t.all_finite());
      EXPECT_EQ(e.mvcm_full.has_value(), st == InitStrategy::mvcm || st == InitStrategy::mvcm_warm_start);
    }
  }
}

TEST(Init, StrategyNamesRoundTrip) {
  for (auto st : {InitStrategy::zero, InitStrategy::warm_start, InitStrategy::mvcm, InitStrategy::mvcm_warm_start,
                  InitStrategy::raw_mv})
    EXPECT_EQ(parse_strategy(to_string(st)), st);
  EXPECT_THROW(parse_strategy("bogus"), ConfigError);
}

TEST(Pipeline, TwoIterationGradient) {
  auto mc = mvtest::small_model();
  auto p = init_model_params(mc, 6).cast<double>();
  auto s = synth_sample(6, mvtest::synth_config(8, 8, 4));
  auto fn = [&](Tape<double>& t, const ParamSet<double>& q) {
    Bound<double> b{t, q};
    auto out = model_forward(b, s, InitStrategy::mvcm_warm_start, 2, mc);
    std::vector<Var<double>> flows{*out.mvcm_full};
    for (auto& f : out.refined.coarse) flows.push_back(upsample_bilinear(f, 2, 2.0));
    return sequence_loss(flows, s.gt_flow.t.cast<double>(), s.gt_valid.t.cast<double>(), 0.8);
  };
  GradCheckOptions opt;
  opt.max_checks_per_param = 12;
  auto r = grad_check(fn, p, opt);
  EXPECT_TRUE(r.passed) << r.summary();
}
