#pragma once

// Synthetic paired samples: a translating textured background plus textured
// rectangles, each with its own translation. Both frames are rendered from the
// same continuous layer model, so brightness constancy holds exactly on
// non-occluded pixels before noise.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <numeric>
#include <random>
#include <tuple>
#include <vector>

#include "mvflow/sample.hpp"
#include "mvflow/sidecar.hpp"

namespace mvflow {

struct SynthConfig {
  int width = 64;
  int height = 64;
  int block_size = 8;
  int n_moving_objects = 2;
  double mv_noise = 0.25;        // px, Gaussian noise on block MVs
  double coverage = 0.9;         // fraction of blocks that keep an MV
  double mv_outlier_rate = 0.1;  // blocks whose MV does not follow the true motion
  double image_noise = 0.01;     // Gaussian noise added to image2
  double max_motion = 6.0;       // px, per-component translation bound
  double prev_noise = 0.2;       // px, noise on the previous-pair flow
  bool with_prev = true;
  std::optional<std::array<double, 2>> background_motion;  // fixes the background translation
};

inline void validate(const SynthConfig& c) {
  if (c.width <= 0 || c.height <= 0 || c.block_size <= 0) throw ConfigError("synth: sizes must be positive");
  if (c.width % c.block_size || c.height % c.block_size)
    throw ConfigError("synth: frame size must be divisible by block_size");
  if (c.n_moving_objects < 0) throw ConfigError("synth: n_moving_objects must be >= 0");
  if (!(c.coverage >= 0 && c.coverage <= 1)) throw ConfigError("synth: coverage must be in [0,1]");
  if (!(c.mv_outlier_rate >= 0 && c.mv_outlier_rate <= 1)) throw ConfigError("synth: mv_outlier_rate must be in [0,1]");
  if (c.mv_noise < 0 || c.image_noise < 0 || c.max_motion < 0 || c.prev_noise < 0)
    throw ConfigError("synth: noise levels and max_motion must be >= 0");
}

namespace detail {

struct Texture {
  struct Wave {
    double fx, fy, phase;
    std::array<double, 3> amp;
  };
  std::array<double, 3> base;
  std::vector<Wave> waves;

  double eval(int c, double x, double y) const {
    double v = base[c];
    for (const auto& w : waves) v += w.amp[c] * std::sin(w.fx * x + w.fy * y + w.phase);
    return v;
  }
};

inline Texture random_texture(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  Texture t;
  for (auto& b : t.base) b = 0.35 + 0.3 * uni(rng);
  constexpr int kWaves = 5;
  for (int k = 0; k < kWaves; ++k) {
    const double wavelength = 6.0 + 12.0 * uni(rng);
    const double angle = 2 * std::numbers::pi * uni(rng);
    const double f = 2 * std::numbers::pi / wavelength;
    Texture::Wave w{f * std::cos(angle), f * std::sin(angle), 2 * std::numbers::pi * uni(rng), {}};
    for (auto& a : w.amp) a = (0.25 / kWaves) * (0.3 + 0.7 * uni(rng));
    t.waves.push_back(w);
  }
  return t;
}

struct Layer {
  Texture tex;
  double ox, oy;  // origin in frame 1
  double w, h;    // infinite for the background
  double tx, ty;  // translation frame t -> t+1
  bool infinite;

  // frame_offset: -1 previous, 0 first, +1 second frame
  bool covers(double x, double y, int frame_offset) const {
    if (infinite) return true;
    const double lx = x - (ox + frame_offset * tx), ly = y - (oy + frame_offset * ty);
    return lx >= 0 && lx < w && ly >= 0 && ly < h;
  }
  double color(int c, double x, double y, int frame_offset) const {
    return tex.eval(c, x - (ox + frame_offset * tx), y - (oy + frame_offset * ty));
  }
};

inline int top_layer(const std::vector<Layer>& layers, double x, double y, int frame_offset) {
  for (int k = static_cast<int>(layers.size()) - 1; k >= 0; --k)
    if (layers[k].covers(x, y, frame_offset)) return k;
  return 0;
}

inline float median_of(std::vector<float> v) {
  auto mid = v.begin() + (v.size() - 1) / 2;
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace detail

inline Sample synth_sample(std::uint64_t seed, const SynthConfig& cfg) {
  validate(cfg);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto motion = [&] { return cfg.max_motion * (2 * uni(rng) - 1); };

  const int W = cfg.width, H = cfg.height;
  std::vector<detail::Layer> layers;
  {
    detail::Layer bg{detail::random_texture(rng), 0, 0, 0, 0, motion(), motion(), true};
    if (cfg.background_motion) {
      bg.tx = (*cfg.background_motion)[0];
      bg.ty = (*cfg.background_motion)[1];
    }
    layers.push_back(bg);
  }
  for (int k = 0; k < cfg.n_moving_objects; ++k) {
    const double w = W * (1.0 / 6 + uni(rng) / 6), h = H * (1.0 / 6 + uni(rng) / 6);
    const double ox = uni(rng) * (W - w), oy = uni(rng) * (H - h);
    layers.push_back({detail::random_texture(rng), ox, oy, w, h, motion(), motion(), false});
  }

  Sample s;
  s.image1 = Tensor<float>(Shape{3, H, W});
  s.image2 = Tensor<float>(Shape{3, H, W});
  s.gt_flow = FlowField(W, H);
  s.gt_valid = Mask(W, H);
  Mask noc(W, H);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int k1 = detail::top_layer(layers, x, y, 0);
      const int k2 = detail::top_layer(layers, x, y, 1);
      const auto& l1 = layers[k1];
      for (int c = 0; c < 3; ++c) {
        s.image1.at(c, y, x) = static_cast<float>(std::clamp(l1.color(c, x, y, 0), 0.0, 1.0));
        const double n = cfg.image_noise * gauss(rng);
        s.image2.at(c, y, x) = static_cast<float>(std::clamp(layers[k2].color(c, x, y, 1) + n, 0.0, 1.0));
      }
      s.gt_flow.u(y, x) = static_cast<float>(l1.tx);
      s.gt_flow.v(y, x) = static_cast<float>(l1.ty);
      const double tx = x + l1.tx, ty = y + l1.ty;
      const bool inside = tx >= 0 && tx <= W - 1 && ty >= 0 && ty <= H - 1;
      s.gt_valid(y, x) = inside ? 1.0f : 0.0f;
      noc(y, x) = inside && detail::top_layer(layers, tx, ty, 1) == k1 ? 1.0f : 0.0f;
    }
  s.gt_noc = noc;

  // Block MVs from the block median of the true flow.
  const int bw = W / cfg.block_size, bh = H / cfg.block_size;
  std::vector<MotionVectorRecord> blocks;
  for (int by = 0; by < bh; ++by)
    for (int bx = 0; bx < bw; ++bx) {
      std::vector<float> us, vs;
      for (int y = by * cfg.block_size; y < (by + 1) * cfg.block_size; ++y)
        for (int x = bx * cfg.block_size; x < (bx + 1) * cfg.block_size; ++x) {
          us.push_back(s.gt_flow.u(y, x));
          vs.push_back(s.gt_flow.v(y, x));
        }
      double u = detail::median_of(us), v = detail::median_of(vs);
      const double nu = gauss(rng), nv = gauss(rng), draw = uni(rng), ou = motion(), ov = motion();
      if (draw < cfg.mv_outlier_rate) {
        u = ou;
        v = ov;
      } else {
        u += cfg.mv_noise * nu;
        v += cfg.mv_noise * nv;
      }
      constexpr int kScale = 4;
      blocks.push_back({bx * cfg.block_size, by * cfg.block_size, cfg.block_size, cfg.block_size,
                        static_cast<int>(std::lround(u * kScale)), static_cast<int>(std::lround(v * kScale)), kScale});
    }
  const auto n_drop = static_cast<std::size_t>(std::lround((1.0 - cfg.coverage) * blocks.size()));
  std::vector<std::size_t> order(blocks.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<bool> keep(blocks.size(), true);
  for (std::size_t i = 0; i < n_drop; ++i) keep[order[i]] = false;

  MvSidecar sc;
  sc.frame_index = 0;
  sc.frame_w = W;
  sc.frame_h = H;
  sc.codec = "synthetic";
  sc.qp = 0;
  for (std::size_t i = 0; i < blocks.size(); ++i)
    if (keep[i]) sc.records.push_back(blocks[i]);
  std::tie(s.mv_flow, s.mv_mask) = rasterize(sc);
  s.sidecar = sc;

  if (cfg.with_prev) {
    // Constant velocity: the previous pair moved every layer by the same translation.
    FlowField prev(W, H);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const auto& l = layers[detail::top_layer(layers, x, y, -1)];
        prev.u(y, x) = static_cast<float>(l.tx + cfg.prev_noise * gauss(rng));
        prev.v(y, x) = static_cast<float>(l.ty + cfg.prev_noise * gauss(rng));
      }
    s.prev_flow = prev;
  }
  return s;
}

}  // namespace mvflow
