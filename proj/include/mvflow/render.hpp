#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mvflow/image_io.hpp"

namespace mvflow {

// HSV -> RGB with h in degrees [0,360), s and v in [0,1].
inline void hsv_to_rgb(double h, double s, double v, std::uint8_t* rgb) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1 - std::abs(std::fmod(hp, 2.0) - 1));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  rgb[0] = static_cast<std::uint8_t>(std::lround((r + m) * 255));
  rgb[1] = static_cast<std::uint8_t>(std::lround((g + m) * 255));
  rgb[2] = static_cast<std::uint8_t>(std::lround((b + m) * 255));
}

// Hue of an RGB pixel in degrees; 0 for achromatic pixels.
inline double rgb_hue(const std::uint8_t* rgb) {
  const double r = rgb[0], g = rgb[1], b = rgb[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b}), d = mx - mn;
  if (d == 0) return 0;
  double h;
  if (mx == r) h = std::fmod((g - b) / d, 6.0);
  else if (mx == g) h = (b - r) / d + 2;
  else h = (r - g) / d + 4;
  h *= 60;
  return h < 0 ? h + 360 : h;
}

// Color wheel: hue = flow angle, saturation = magnitude / max magnitude, value = 1.
// Zero flow renders white.
inline Image8 render_flow(const FlowField& flow, double max_magnitude = 0) {
  if (max_magnitude <= 0)
    for (int y = 0; y < flow.height(); ++y)
      for (int x = 0; x < flow.width(); ++x) max_magnitude = std::max(max_magnitude, double(std::hypot(flow.u(y, x), flow.v(y, x))));
  Image8 img(flow.width(), flow.height(), 3);
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      const double u = flow.u(y, x), v = flow.v(y, x);
      const double mag = std::hypot(u, v);
      double angle = std::atan2(v, u) * 180.0 / std::numbers::pi;
      if (angle < 0) angle += 360.0;
      const double sat = max_magnitude > 0 ? std::min(mag / max_magnitude, 1.0) : 0.0;
      hsv_to_rgb(angle, sat, 1.0, img.px(y, x));
    }
  return img;
}

// Grayscale endpoint error scaled by max_error (or the frame maximum); invalid pixels black.
inline Image8 render_error_map(const FlowField& pred, const FlowField& gt, const Mask& valid, double max_error = 0) {
  require_same_size(pred, gt, "render_error_map");
  require_same_size(gt, valid, "render_error_map");
  auto epe = [&](int y, int x) { return std::hypot(double(pred.u(y, x)) - gt.u(y, x), double(pred.v(y, x)) - gt.v(y, x)); };
  if (max_error <= 0)
    for (int y = 0; y < gt.height(); ++y)
      for (int x = 0; x < gt.width(); ++x)
        if (valid(y, x) > 0) max_error = std::max(max_error, epe(y, x));
  Image8 img(gt.width(), gt.height(), 1);
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (valid(y, x) <= 0 || max_error <= 0) continue;
      img.px(y, x)[0] = static_cast<std::uint8_t>(std::lround(std::min(epe(y, x) / max_error, 1.0) * 255));
    }
  return img;
}

}  // namespace mvflow
