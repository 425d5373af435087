#pragma once

// Desk-scale iterative refiner: shared-weight feature encoder at 1/R
// resolution, local correlation around the current flow, and a conv update
// block that predicts a residual each iteration.

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "mvflow/flow.hpp"
#include "mvflow/layers.hpp"

namespace mvflow {

struct RefinerConfig {
  int feature_scale = 4;  // R; a power of two
  int feature_dim = 32;
  int corr_radius = 3;
  int update_width = 64;
};

inline void validate(const RefinerConfig& c) {
  if (c.feature_scale < 1 || (c.feature_scale & (c.feature_scale - 1)) != 0)
    throw ConfigError("refiner: feature_scale must be a power of two");
  if (c.corr_radius < 1) throw ConfigError("refiner: corr_radius must be >= 1");
  if (c.feature_dim < 1 || c.update_width < 1) throw ConfigError("refiner: widths must be positive");
}

inline ConvStack feature_stack(const RefinerConfig& c) {
  ConvStack s;
  int cin = 3, i = 0;
  for (int r = c.feature_scale; r > 1; r /= 2, ++i) {
    const int cout = i == 0 ? std::max(c.feature_dim / 2, 1) : c.feature_dim;
    s.push_back({"refiner.fnet." + std::to_string(i), cin, cout, 3, ConvSpec{2, 1, 1}, Activation::relu});
    cin = cout;
  }
  s.push_back({"refiner.fnet." + std::to_string(i), cin, c.feature_dim, 3, ConvSpec::same(3), std::nullopt});
  return s;
}

inline int corr_channels(const RefinerConfig& c) { return (2 * c.corr_radius + 1) * (2 * c.corr_radius + 1); }

inline ConvStack update_stack(const RefinerConfig& c) {
  const int cin = corr_channels(c) + 2 + c.feature_dim;
  return {{"refiner.update.0", cin, c.update_width, 3, ConvSpec::same(3), Activation::relu},
          {"refiner.update.1", c.update_width, c.update_width, 3, ConvSpec::same(3), Activation::relu},
          {"refiner.update.2", c.update_width, 2, 3, ConvSpec::same(3), std::nullopt}};
}

template <class T>
void init_refiner(ParamSet<T>& params, const RefinerConfig& c, std::mt19937_64& rng) {
  validate(c);
  init_stack(params, feature_stack(c), rng);
  auto upd = update_stack(c);
  init_stack(params, ConvStack(upd.begin(), upd.end() - 1), rng);
  // Small residual head so untrained iterations start near the identity.
  init_stack(params, ConvStack(upd.end() - 1, upd.end()), rng, 0.1);
}

template <class T>
Var<T> extract_features(const Bound<T>& b, Var<T> image, const RefinerConfig& c) {
  const auto& iv = image.value();
  require_rank(iv, 3, "extract_features");
  if (iv.dim(1) % c.feature_scale || iv.dim(2) % c.feature_scale)
    throw ShapeError("extract_features: image size must be divisible by " + std::to_string(c.feature_scale));
  return apply_stack(b, feature_stack(c), image);
}

namespace detail {

template <class T>
T sample_zero(const Tensor<T>& f, int c, int y, int x) {
  if (y < 0 || y >= f.dim(1) || x < 0 || x >= f.dim(2)) return T(0);
  return f.at(c, y, x);
}

}  // namespace detail

// corr(o, p) = <f1(p), f2(p + flow(p) + o)> / sqrt(C), bilinear f2 lookup with zeros outside.
template <class T>
Tensor<T> local_correlation(const Tensor<T>& f1, const Tensor<T>& f2, const Tensor<T>& flow, int radius) {
  if (radius < 1) throw ShapeError("local_correlation: radius must be >= 1");
  require_rank(f1, 3, "local_correlation f1");
  require_shape(f2, f1.shape(), "local_correlation f2");
  const int c = f1.dim(0), h = f1.dim(1), w = f1.dim(2), n = 2 * radius + 1;
  require_shape(flow, Shape{2, h, w}, "local_correlation flow");
  const T inv = T(1) / std::sqrt(T(c));
  Tensor<T> out(Shape{n * n, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const T bx = x + flow.at(0, y, x), by = y + flow.at(1, y, x);
      const T fx = std::floor(bx), fy = std::floor(by);
      const T ax = bx - fx, ay = by - fy;
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      for (int oy = -radius; oy <= radius; ++oy)
        for (int ox = -radius; ox <= radius; ++ox) {
          const int sx = x0 + ox, sy = y0 + oy;
          T acc = 0;
          for (int ci = 0; ci < c; ++ci) {
            const T s = (1 - ay) * ((1 - ax) * detail::sample_zero(f2, ci, sy, sx) +
                                    ax * detail::sample_zero(f2, ci, sy, sx + 1)) +
                        ay * ((1 - ax) * detail::sample_zero(f2, ci, sy + 1, sx) +
                              ax * detail::sample_zero(f2, ci, sy + 1, sx + 1));
            acc += f1.at(ci, y, x) * s;
          }
          out.at((oy + radius) * n + (ox + radius), y, x) = acc * inv;
        }
    }
  require_finite(out, "local_correlation");
  return out;
}

template <class T>
Var<T> local_correlation(Var<T> f1, Var<T> f2, Var<T> flow, int radius) {
  auto& tape = *f1.tape;
  if (tape.tracking_branches()) {
    const auto& fv = flow.value();
    std::uint64_t hsh = 0;
    for (int y = 0; y < fv.dim(1); ++y)
      for (int x = 0; x < fv.dim(2); ++x) {
        hsh = hsh * 1000003 + static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(x + fv.at(0, y, x))));
        hsh = hsh * 1000003 + static_cast<std::uint64_t>(static_cast<std::int64_t>(std::floor(y + fv.at(1, y, x))));
      }
    tape.note_branch(hsh);
  }
  auto out = local_correlation(f1.value(), f2.value(), flow.value(), radius);
  return tape.emit(std::move(out), {f1, f2, flow}, [f1, f2, flow, radius](Tape<T>& t, const Tensor<T>& g) {
    const auto& a = t.value(f1);
    const auto& bt = t.value(f2);
    const auto& fl = t.value(flow);
    const int c = a.dim(0), h = a.dim(1), w = a.dim(2), n = 2 * radius + 1;
    const T inv = T(1) / std::sqrt(T(c));
    Tensor<T> ga(a.shape()), gb(bt.shape()), gf(fl.shape());
    auto in = [&](int yy, int xx) { return yy >= 0 && yy < h && xx >= 0 && xx < w; };
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const T bx = x + fl.at(0, y, x), by = y + fl.at(1, y, x);
        const T fx = std::floor(bx), fy = std::floor(by);
        const T ax = bx - fx, ay = by - fy;
        const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
        T gu = 0, gv = 0;
        for (int oy = -radius; oy <= radius; ++oy)
          for (int ox = -radius; ox <= radius; ++ox) {
            const T go = g.at((oy + radius) * n + (ox + radius), y, x) * inv;
            if (go == T(0)) continue;
            const int sx = x0 + ox, sy = y0 + oy;
            const T w00 = (1 - ay) * (1 - ax), w01 = (1 - ay) * ax, w10 = ay * (1 - ax), w11 = ay * ax;
            for (int ci = 0; ci < c; ++ci) {
              const T v00 = detail::sample_zero(bt, ci, sy, sx), v01 = detail::sample_zero(bt, ci, sy, sx + 1);
              const T v10 = detail::sample_zero(bt, ci, sy + 1, sx), v11 = detail::sample_zero(bt, ci, sy + 1, sx + 1);
              const T f1v = a.at(ci, y, x);
              ga.at(ci, y, x) += go * (w00 * v00 + w01 * v01 + w10 * v10 + w11 * v11);
              const T gq = go * f1v;
              if (in(sy, sx)) gb.at(ci, sy, sx) += gq * w00;
              if (in(sy, sx + 1)) gb.at(ci, sy, sx + 1) += gq * w01;
              if (in(sy + 1, sx)) gb.at(ci, sy + 1, sx) += gq * w10;
              if (in(sy + 1, sx + 1)) gb.at(ci, sy + 1, sx + 1) += gq * w11;
              gu += gq * ((1 - ay) * (v01 - v00) + ay * (v11 - v10));
              gv += gq * ((1 - ax) * (v10 - v00) + ax * (v11 - v01));
            }
          }
        gf.at(0, y, x) = gu;
        gf.at(1, y, x) = gv;
      }
    t.accumulate(f1, ga);
    t.accumulate(f2, gb);
    t.accumulate(flow, gf);
  });
}

template <class T>
struct RefinerVars {
  std::vector<Var<T>> coarse;  // one per iteration, 1/R units
  Var<T> full;                 // final flow upsampled to full resolution, pixels
};

// image1/image2 already normalized to the network's input range.
template <class T>
RefinerVars<T> refine(const Bound<T>& b, Var<T> image1, Var<T> image2, Var<T> init, int n_iters,
                      const RefinerConfig& c) {
  if (n_iters < 0) throw ConfigError("refine: n_iters must be >= 0");
  const auto& iv = image1.value();
  require_shape(init.value(), Shape{2, iv.dim(1) / c.feature_scale, iv.dim(2) / c.feature_scale}, "refine init");
  RefinerVars<T> r;
  Var<T> flow = init;
  if (n_iters > 0) {
    auto f1 = extract_features(b, image1, c);
    auto f2 = extract_features(b, image2, c);
    const auto upd = update_stack(c);
    for (int i = 0; i < n_iters; ++i) {
      auto corr = local_correlation(f1, f2, flow, c.corr_radius);
      auto delta = apply_stack(b, upd, concat<T>({corr, flow, f1}));
      flow = add(flow, delta);
      r.coarse.push_back(flow);
    }
  }
  r.full = upsample_bilinear(flow, c.feature_scale, static_cast<T>(c.feature_scale));
  return r;
}

}  // namespace mvflow
