#pragma once

#include <cmath>

#include "mvflow/flow.hpp"

namespace mvflow {

namespace detail {

inline void check_metric_inputs(const FlowField& pred, const FlowField& gt, const Mask& valid, const char* what) {
  require_same_size(pred, gt, what);
  require_same_size(gt, valid, what);
}

}  // namespace detail

// Mean endpoint error over pixels with valid > 0.
inline double aepe(const FlowField& pred, const FlowField& gt, const Mask& valid) {
  detail::check_metric_inputs(pred, gt, valid, "aepe");
  double sum = 0;
  std::size_t n = 0;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (valid(y, x) <= 0) continue;
      const double du = double(pred.u(y, x)) - gt.u(y, x), dv = double(pred.v(y, x)) - gt.v(y, x);
      sum += std::sqrt(du * du + dv * dv);
      ++n;
    }
  if (n == 0) throw ShapeError("aepe: validity mask is empty");
  return sum / static_cast<double>(n);
}

// KITTI outlier rule: EPE > 3 px and EPE > 5% of |gt|.
inline bool is_outlier(double epe, double gt_norm) { return epe > 3.0 && epe > 0.05 * gt_norm; }

// Fraction of valid pixels that are outliers, in [0,1].
inline double f1_outlier(const FlowField& pred, const FlowField& gt, const Mask& valid) {
  detail::check_metric_inputs(pred, gt, valid, "f1_outlier");
  std::size_t n = 0, bad = 0;
  for (int y = 0; y < gt.height(); ++y)
    for (int x = 0; x < gt.width(); ++x) {
      if (valid(y, x) <= 0) continue;
      const double du = double(pred.u(y, x)) - gt.u(y, x), dv = double(pred.v(y, x)) - gt.v(y, x);
      const double gu = gt.u(y, x), gv = gt.v(y, x);
      bad += is_outlier(std::sqrt(du * du + dv * dv), std::sqrt(gu * gu + gv * gv)) ? 1 : 0;
      ++n;
    }
  if (n == 0) throw ShapeError("f1_outlier: validity mask is empty");
  return static_cast<double>(bad) / static_cast<double>(n);
}

}  // namespace mvflow
