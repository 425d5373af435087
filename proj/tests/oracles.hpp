#pragma once

// Brute-force references shared by unit tests and the acceptance binary.

#include <cmath>
#include <vector>

#include "mvflow/tensor.hpp"

namespace mvtest {

// Credibility-weighted window attention, one pixel at a time, written from the
// definition: s = softmax over in-frame neighbours of <q(p), k(p')>/sqrt(C),
// w = s * cred, out = sum w v / (sum w + eps). Sources are summed in the weights.
inline mvflow::Tensor<double> brute_aggregate(const mvflow::Tensor<double>& q, const mvflow::Tensor<double>& k,
                                              const std::vector<const mvflow::Tensor<double>*>& values,
                                              const std::vector<const mvflow::Tensor<double>*>& creds, int d,
                                              double eps) {
  const int C = q.dim(0), H = q.dim(1), W = q.dim(2), Cv = values[0]->dim(0);
  mvflow::Tensor<double> out(mvflow::Shape{Cv, H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      double z = 0, mx = -1e300;
      for (int yy = y - d; yy <= y + d; ++yy)
        for (int xx = x - d; xx <= x + d; ++xx) {
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          double dot = 0;
          for (int c = 0; c < C; ++c) dot += q.at(c, y, x) * k.at(c, yy, xx);
          mx = std::max(mx, dot / std::sqrt(double(C)));
        }
      for (int yy = y - d; yy <= y + d; ++yy)
        for (int xx = x - d; xx <= x + d; ++xx) {
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
          double dot = 0;
          for (int c = 0; c < C; ++c) dot += q.at(c, y, x) * k.at(c, yy, xx);
          z += std::exp(dot / std::sqrt(double(C)) - mx);
        }
      std::vector<double> num(Cv, 0.0);
      double den = 0;
      for (std::size_t j = 0; j < values.size(); ++j)
        for (int yy = y - d; yy <= y + d; ++yy)
          for (int xx = x - d; xx <= x + d; ++xx) {
            if (yy < 0 || yy >= H || xx < 0 || xx >= W) continue;
            double dot = 0;
            for (int c = 0; c < C; ++c) dot += q.at(c, y, x) * k.at(c, yy, xx);
            const double s = std::exp(dot / std::sqrt(double(C)) - mx) / z;
            const double w = s * creds[j]->at(0, yy, xx);
            for (int c = 0; c < Cv; ++c) num[c] += w * values[j]->at(c, yy, xx);
            den += w;
          }
      for (int c = 0; c < Cv; ++c) out.at(c, y, x) = num[c] / (den + eps);
    }
  return out;
}

// Total bilinear splat mass that lands inside the frame, one source pixel at a time.
inline double splat_mass(const mvflow::Tensor<float>& flow) {
  const int H = flow.dim(1), W = flow.dim(2);
  double mass = 0;
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double tx = x + flow.at(0, y, x), ty = y + flow.at(1, y, x);
      const int x0 = int(std::floor(tx)), y0 = int(std::floor(ty));
      const double ax = tx - x0, ay = ty - y0;
      for (int dy = 0; dy <= 1; ++dy)
        for (int dx = 0; dx <= 1; ++dx) {
          const int xx = x0 + dx, yy = y0 + dy;
          if (xx < 0 || xx >= W || yy < 0 || yy >= H) continue;
          mass += (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay);
        }
    }
  return mass;
}

}  // namespace mvtest
