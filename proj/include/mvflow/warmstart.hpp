#pragma once

// Warm start: project the previous pair's flow into the current frame by
// forward warping, then fuse it with the motion-vector prior through a
// two-headed credibility block and a shared attention window.

#include <cmath>
#include <random>
#include <string>

#include "mvflow/mvcm.hpp"

namespace mvflow {

inline constexpr double kSplatThreshold = 0.25;

struct ProjectedFlow {
  FlowField flow;        // zero where mask is zero
  Mask mask;             // min(weight, 1) above threshold, else 0
  Tensor<float> weight;  // [1,H,W] raw accumulated splat weight
};

// Bilinear splatting of each source pixel's flow to p + flow(p); overlaps are
// averaged by weight, out-of-frame splats are dropped.
inline ProjectedFlow forward_warp(const FlowField& prev, double threshold = kSplatThreshold) {
  require_finite(prev.t, "forward_warp input");
  const int w = prev.width(), h = prev.height();
  std::vector<double> acc_u(static_cast<std::size_t>(w) * h), acc_v(acc_u.size()), acc_w(acc_u.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double u = prev.u(y, x), v = prev.v(y, x);
      const double tx = x + u, ty = y + v;
      const double fx = std::floor(tx), fy = std::floor(ty);
      const double ax = tx - fx, ay = ty - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double ws[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
      const int xs[4] = {x0, x0 + 1, x0, x0 + 1};
      const int ys[4] = {y0, y0, y0 + 1, y0 + 1};
      for (int i = 0; i < 4; ++i) {
        if (xs[i] < 0 || xs[i] >= w || ys[i] < 0 || ys[i] >= h || ws[i] == 0) continue;
        const std::size_t o = static_cast<std::size_t>(ys[i]) * w + xs[i];
        acc_u[o] += ws[i] * u;
        acc_v[o] += ws[i] * v;
        acc_w[o] += ws[i];
      }
    }
  ProjectedFlow r{FlowField(w, h), Mask(w, h), Tensor<float>(Shape{1, h, w})};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const std::size_t o = static_cast<std::size_t>(y) * w + x;
      r.weight.at(0, y, x) = static_cast<float>(acc_w[o]);
      if (acc_w[o] > threshold) {
        r.flow.u(y, x) = static_cast<float>(acc_u[o] / acc_w[o]);
        r.flow.v(y, x) = static_cast<float>(acc_v[o] / acc_w[o]);
        r.mask(y, x) = static_cast<float>(std::min(acc_w[o], 1.0));
      }
    }
  return r;
}

inline ConvStack warm_credibility_stack(const MvcmConfig& c, const std::string& prefix = "warm.ceb") {
  return credibility_stack(prefix, c, 5, 2);
}

template <class T>
void init_warm(ParamSet<T>& params, const MvcmConfig& c, std::mt19937_64& rng) {
  init_stack(params, warm_credibility_stack(c), rng);
}

// Returns {C_prj, C_mv}: channel 0 of the two-headed block scores the projected flow.
template <class T>
std::pair<Var<T>, Var<T>> estimate_credibility2(const Bound<T>& b, Var<T> image, Var<T> mv_mask, Var<T> prj_mask,
                                                const MvcmConfig& c) {
  const auto& iv = image.value();
  require_shape(mv_mask.value(), Shape{1, iv.dim(1), iv.dim(2)}, "estimate_credibility2 mv mask");
  require_shape(prj_mask.value(), Shape{1, iv.dim(1), iv.dim(2)}, "estimate_credibility2 projected mask");
  auto both = apply_stack(b, warm_credibility_stack(c), concat<T>({image, mv_mask, prj_mask}));
  return {slice_channels(both, 0, 1), slice_channels(both, 1, 1)};
}

// Warm-start converter: encoders come from the ordinary converter.
template <class T>
Var<T> warm_mvcm_forward(const Bound<T>& b, Var<T> image, Var<T> mv_flow, Var<T> mv_mask, Var<T> prj_flow,
                         Var<T> prj_mask, const MvcmConfig& c) {
  auto [q, k] = encode_qk(b, image, c);
  auto [c_prj, c_mv] = estimate_credibility2(b, image, mv_mask, prj_mask, c);
  return aggregate<T>(q, k, {{mv_flow, c_mv}, {prj_flow, c_prj}}, c.window_radius, static_cast<T>(c.eps));
}

// ---- plain API -----------------------------------------------------------------

inline std::pair<CredibilityMap, CredibilityMap> estimate_credibility2(const Tensor<float>& image, const Mask& mv_mask,
                                                                       const Mask& prj_mask,
                                                                       const ParamSet<float>& params,
                                                                       const MvcmConfig& c) {
  Tape<float> tape(false);
  Bound<float> b{tape, params};
  auto [cp, cm] = estimate_credibility2(b, tape.constant(image), tape.constant(mv_mask.t), tape.constant(prj_mask.t), c);
  return {cp.value(), cm.value()};
}

inline FlowField fused_aggregate(const Tensor<float>& q, const Tensor<float>& k, const FlowField& v_mv,
                                 const FlowField& v_prj, const CredibilityMap& c_mv, const CredibilityMap& c_prj,
                                 int radius, double eps = 1e-8) {
  return FlowField(
      aggregate_forward<float>(q, k, {{&v_mv.t, &c_mv}, {&v_prj.t, &c_prj}}, radius, static_cast<float>(eps)).flow);
}

}  // namespace mvflow
