#pragma once

#include <optional>

#include "mvflow/flow.hpp"
#include "mvflow/sidecar.hpp"

namespace mvflow {

// One training/evaluation pair with its motion-vector prior.
struct Sample {
  Tensor<float> image1;  // [3,H,W] in [0,1]
  Tensor<float> image2;
  FlowField mv_flow;  // rasterized block MVs
  Mask mv_mask;
  FlowField gt_flow;
  Mask gt_valid;                   // ALL
  std::optional<Mask> gt_noc;      // non-occluded subset, when known
  std::optional<FlowField> prev_flow;  // previous pair's estimate, for warm start
  std::optional<MvSidecar> sidecar;

  int width() const { return image1.dim(2); }
  int height() const { return image1.dim(1); }
};

inline void validate(const Sample& s) {
  require_rank(s.image1, 3, "Sample image1");
  if (s.image1.dim(0) != 3) throw ShapeError("Sample: image1 must have 3 channels");
  require_shape(s.image2, s.image1.shape(), "Sample image2");
  const int w = s.width(), h = s.height();
  auto same = [&](int ww, int hh, const char* what) {
    if (ww != w || hh != h) throw ShapeError(std::string("Sample: ") + what + " size differs from images");
  };
  same(s.mv_flow.width(), s.mv_flow.height(), "mv_flow");
  same(s.mv_mask.width(), s.mv_mask.height(), "mv_mask");
  same(s.gt_flow.width(), s.gt_flow.height(), "gt_flow");
  same(s.gt_valid.width(), s.gt_valid.height(), "gt_valid");
  if (s.gt_noc) same(s.gt_noc->width(), s.gt_noc->height(), "gt_noc");
  if (s.prev_flow) same(s.prev_flow->width(), s.prev_flow->height(), "prev_flow");
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (s.gt_valid(y, x) > 0 && !(std::isfinite(s.gt_flow.u(y, x)) && std::isfinite(s.gt_flow.v(y, x))))
        throw NumericError("Sample: non-finite ground truth at a valid pixel");
}

}  // namespace mvflow
