#include <gtest/gtest.h>

#include "common.hpp"

using namespace mvflow;
using mvtest::random_tensor;

TEST(Aepe, PerfectPredictionIsZero) {
  std::mt19937_64 rng(50);
  FlowField g(random_tensor({2, 5, 5}, rng, -9, 9));
  EXPECT_EQ(aepe(g, g, Mask(5, 5, 1.0f)), 0.0);
  EXPECT_EQ(f1_outlier(g, g, Mask(5, 5, 1.0f)), 0.0);
}

TEST(Aepe, ThreeFourFive) {
  FlowField pred(3, 2), gt(3, 2);
  gt.u(1, 2) = 3;
  gt.v(1, 2) = 4;
  Mask m(3, 2);
  m(1, 2) = 1;
  EXPECT_EQ(aepe(pred, gt, m), 5.0);
}

TEST(Aepe, MatchesLoopOracle) {
  std::mt19937_64 rng(51);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 20; ++trial) {
    FlowField p(random_tensor({2, 9, 7}, rng, -10, 10)), g(random_tensor({2, 9, 7}, rng, -10, 10));
    Mask m(7, 9);
    for (auto& v : m.t.vec()) v = u(rng) < 0.6 ? 1.0f : 0.0f;
    m(0, 0) = 1;
    double s = 0, n = 0, bad = 0;
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 7; ++x)
        if (m(y, x) > 0) {
          const double e = std::hypot(double(p.u(y, x)) - g.u(y, x), double(p.v(y, x)) - g.v(y, x));
          const double gn = std::hypot(double(g.u(y, x)), double(g.v(y, x)));
          s += e;
          n += 1;
          bad += (e > 3 && e > 0.05 * gn) ? 1 : 0;
        }
    EXPECT_NEAR(aepe(p, g, m), s / n, 1e-6);
    EXPECT_NEAR(f1_outlier(p, g, m), bad / n, 1e-6);
  }
}

TEST(Aepe, EmptyMaskRaises) {
  FlowField a(2, 2);
  EXPECT_THROW(aepe(a, a, Mask(2, 2)), ShapeError);
  EXPECT_THROW(f1_outlier(a, a, Mask(2, 2)), ShapeError);
  EXPECT_THROW(aepe(a, FlowField(3, 2), Mask(2, 2, 1.0f)), ShapeError);
}

TEST(F1, KittiRuleBoundaries) {
  EXPECT_TRUE(is_outlier(4.0, 10.0));
  EXPECT_FALSE(is_outlier(4.0, 100.0));
  EXPECT_FALSE(is_outlier(3.0, 0.0));  // strict > 3
  EXPECT_FALSE(is_outlier(5.0, 100.0));  // strict > 5% of 100
  EXPECT_TRUE(is_outlier(5.0 + 1e-9, 100.0));
  FlowField pred(2, 1), gt(2, 1);
  gt.u(0, 0) = 10;
  pred.u(0, 0) = 14;  // EPE 4, |gt| 10
  gt.u(0, 1) = 100;
  pred.u(0, 1) = 104;  // EPE 4, |gt| 100
  EXPECT_EQ(f1_outlier(pred, gt, Mask(2, 1, 1.0f)), 0.5);
}

// ---- render -------------------------------------------------------------------------

TEST(Render, ZeroFlowIsUniformWhite) {
  auto img = render_flow(FlowField(4, 3));
  for (auto v : img.pixels) EXPECT_EQ(v, 255);
}

TEST(Render, HueFollowsFlowAngle) {
  // Hue is the flow angle: perpendicular flows are 90 degrees apart,
  // opposite flows 180 degrees apart.
  FlowField f(4, 1);
  const double r = 3;
  f.u(0, 0) = r;
  f.v(0, 1) = r;
  f.u(0, 2) = -r;
  f.v(0, 3) = -r;
  auto img = render_flow(f);
  auto hue = [&](int x) { return rgb_hue(img.px(0, x)); };
  auto sep = [](double a, double b) {
    double d = std::fmod(std::abs(a - b), 360.0);
    return std::min(d, 360 - d);
  };
  EXPECT_NEAR(hue(0), 0, 0.5);
  EXPECT_NEAR(sep(hue(0), hue(1)), 90, 0.5);
  EXPECT_NEAR(sep(hue(0), hue(2)), 180, 0.5);
  EXPECT_NEAR(sep(hue(1), hue(3)), 180, 0.5);
}

TEST(Render, ErrorMapBlackWhenExact) {
  std::mt19937_64 rng(52);
  FlowField g(random_tensor({2, 4, 4}, rng));
  Mask m(4, 4, 1.0f);
  auto img = render_error_map(g, g, m);
  for (auto v : img.pixels) EXPECT_EQ(v, 0);
  FlowField p = g;
  p.u(1, 1) += 2;
  m(0, 0) = 0;
  auto e = render_error_map(p, g, m);
  EXPECT_EQ(e.px(1, 1)[0], 255);
  EXPECT_EQ(e.px(0, 0)[0], 0);
}

// ---- benchmark ----------------------------------------------------------------------

TEST(Benchmark, GridShapeAndZeroInitReduction) {
  auto mc = mvtest::small_model();
  auto params = init_model_params(mc, 1);
  std::vector<Sample> samples{synth_sample(1, mvtest::synth_config(16, 16, 4)), synth_sample(2, mvtest::synth_config(16, 16, 4))};
  auto rep = run_benchmark(samples, {InitStrategy::zero, InitStrategy::mvcm}, {0, 1, 2}, params, mc, {1, {}});
  EXPECT_EQ(rep.cells.size(), 6u);
  // Zero field at zero iterations: AEPE is the mean ground-truth magnitude.
  double want = 0;
  for (const auto& s : samples) {
    double sum = 0, n = 0;
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        if (s.gt_valid(y, x) > 0) {
          sum += std::hypot(double(s.gt_flow.u(y, x)), double(s.gt_flow.v(y, x)));
          n += 1;
        }
    want += sum / n / samples.size();
  }
  EXPECT_NEAR(rep.cell(InitStrategy::zero, 0).mean_aepe, want, 1e-9);
  // Slicing a long run must agree with a dedicated short run.
  EXPECT_NEAR(rep.cell(InitStrategy::mvcm, 1).aepe[1],
              aepe(estimate(samples[1], InitStrategy::mvcm, 1, params, mc).refined.full, samples[1].gt_flow,
                   samples[1].gt_valid),
              1e-9);
  const auto jsonl = rep.to_jsonl();
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 6);
  EXPECT_THROW(rep.cell(InitStrategy::raw_mv, 0), ConfigError);
}
