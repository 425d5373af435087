#pragma once

// Credibility-weighted local window attention over one or more value sources.
//
// For pixel p and window offsets t in [-d,d]^2 (in-bounds only):
//   S_t   = softmax_t(<Q_p, K_{p+t}> / sqrt(C))
//   W_jt  = S_t * Cred_j(p+t)
//   F_p   = sum_{j,t} W_jt V_j(p+t) / (sum_{j,t} W_jt + eps)
// One source is the plain converter; two sources fuse motion vectors with a
// projected previous flow.

#include <cmath>
#include <limits>
#include <vector>

#include "mvflow/autodiff.hpp"

namespace mvflow {

template <class T>
struct AggregateSource {
  const Tensor<T>* value;        // [Cv,H,W]
  const Tensor<T>* credibility;  // [1,H,W]
};

namespace detail {

struct WindowGeom {
  int c, h, w, cv, d;
};

template <class T>
WindowGeom check_aggregate(const Tensor<T>& q, const Tensor<T>& k, const std::vector<AggregateSource<T>>& src,
                           int d) {
  if (d < 1) throw ShapeError("window aggregation: radius must be >= 1");
  require_rank(q, 3, "aggregate Q");
  require_shape(k, q.shape(), "aggregate K");
  if (src.empty()) throw ShapeError("window aggregation: no value sources");
  const int h = q.dim(1), w = q.dim(2);
  const int cv = src[0].value->dim(0);
  for (const auto& s : src) {
    require_shape(*s.value, Shape{cv, h, w}, "aggregate V");
    require_shape(*s.credibility, Shape{1, h, w}, "aggregate credibility");
  }
  return {q.dim(0), h, w, cv, d};
}

// Softmax weights over the in-bounds window of (y,x); taps listed row-major.
template <class T>
void window_softmax(const Tensor<T>& q, const Tensor<T>& k, const WindowGeom& g, int y, int x, std::vector<int>& ty,
                    std::vector<int>& tx, std::vector<T>& s) {
  ty.clear();
  tx.clear();
  s.clear();
  const T inv = T(1) / std::sqrt(T(g.c));
  T mx = -std::numeric_limits<T>::infinity();
  for (int dy = -g.d; dy <= g.d; ++dy)
    for (int dx = -g.d; dx <= g.d; ++dx) {
      const int yy = y + dy, xx = x + dx;
      if (yy < 0 || yy >= g.h || xx < 0 || xx >= g.w) continue;
      T dot = 0;
      for (int c = 0; c < g.c; ++c) dot += q.at(c, y, x) * k.at(c, yy, xx);
      dot *= inv;
      ty.push_back(yy);
      tx.push_back(xx);
      s.push_back(dot);
      mx = std::max(mx, dot);
    }
  T sum = 0;
  for (T& v : s) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (T& v : s) v /= sum;
}

}  // namespace detail

template <class T>
struct AggregateResult {
  Tensor<T> flow;          // [Cv,H,W]
  Tensor<T> weight_total;  // [1,H,W], sum of all window weights (confidence)
};

template <class T>
AggregateResult<T> aggregate_forward(const Tensor<T>& q, const Tensor<T>& k,
                                     const std::vector<AggregateSource<T>>& src, int d, T eps) {
  const auto g = detail::check_aggregate(q, k, src, d);
  AggregateResult<T> r{Tensor<T>(Shape{g.cv, g.h, g.w}), Tensor<T>(Shape{1, g.h, g.w})};
  std::vector<int> ty, tx;
  std::vector<T> s, num(g.cv);
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      detail::window_softmax(q, k, g, y, x, ty, tx, s);
      std::fill(num.begin(), num.end(), T(0));
      T den = 0;
      for (std::size_t t = 0; t < s.size(); ++t)
        for (const auto& sr : src) {
          const T wt = s[t] * sr.credibility->at(0, ty[t], tx[t]);
          for (int c = 0; c < g.cv; ++c) num[c] += wt * sr.value->at(c, ty[t], tx[t]);
          den += wt;
        }
      r.weight_total.at(0, y, x) = den;
      for (int c = 0; c < g.cv; ++c) r.flow.at(c, y, x) = num[c] / (den + eps);
    }
  require_finite(r.flow, "window aggregation");
  return r;
}

template <class T>
struct AggregateGrads {
  Tensor<T> q, k;
  std::vector<Tensor<T>> value, credibility;
};

template <class T>
AggregateGrads<T> aggregate_backward(const Tensor<T>& q, const Tensor<T>& k,
                                     const std::vector<AggregateSource<T>>& src, int d, T eps,
                                     const Tensor<T>& out, const Tensor<T>& grad_out) {
  const auto g = detail::check_aggregate(q, k, src, d);
  AggregateGrads<T> r{Tensor<T>(q.shape()), Tensor<T>(k.shape()), {}, {}};
  for (const auto& sr : src) {
    r.value.emplace_back(sr.value->shape());
    r.credibility.emplace_back(sr.credibility->shape());
  }
  const T inv = T(1) / std::sqrt(T(g.c));
  std::vector<int> ty, tx;
  std::vector<T> s, gs;
  for (int y = 0; y < g.h; ++y)
    for (int x = 0; x < g.w; ++x) {
      detail::window_softmax(q, k, g, y, x, ty, tx, s);
      T den = 0;
      for (std::size_t t = 0; t < s.size(); ++t)
        for (const auto& sr : src) den += s[t] * sr.credibility->at(0, ty[t], tx[t]);
      den += eps;
      gs.assign(s.size(), T(0));
      for (std::size_t t = 0; t < s.size(); ++t)
        for (std::size_t j = 0; j < src.size(); ++j) {
          const T cred = src[j].credibility->at(0, ty[t], tx[t]);
          const T wt = s[t] * cred;
          // dF/dW_jt = (V_j - F) / den
          T gw = 0;
          for (int c = 0; c < g.cv; ++c) {
            const T go = grad_out.at(c, y, x);
            gw += go * (src[j].value->at(c, ty[t], tx[t]) - out.at(c, y, x));
            r.value[j].at(c, ty[t], tx[t]) += go * wt / den;
          }
          gw /= den;
          gs[t] += gw * cred;
          r.credibility[j].at(0, ty[t], tx[t]) += gw * s[t];
        }
      T dot = 0;
      for (std::size_t t = 0; t < s.size(); ++t) dot += s[t] * gs[t];
      for (std::size_t t = 0; t < s.size(); ++t) {
        const T gl = s[t] * (gs[t] - dot) * inv;
        if (gl == T(0)) continue;
        for (int c = 0; c < g.c; ++c) {
          r.q.at(c, y, x) += gl * k.at(c, ty[t], tx[t]);
          r.k.at(c, ty[t], tx[t]) += gl * q.at(c, y, x);
        }
      }
    }
  return r;
}

// Tape op. sources: pairs of (value [Cv,H,W], credibility [1,H,W]).
template <class T>
Var<T> aggregate(Var<T> q, Var<T> k, const std::vector<std::pair<Var<T>, Var<T>>>& sources, int d, T eps) {
  std::vector<AggregateSource<T>> src;
  std::vector<Var<T>> inputs{q, k};
  for (auto& [v, c] : sources) {
    src.push_back({&v.value(), &c.value()});
    inputs.push_back(v);
    inputs.push_back(c);
  }
  auto res = aggregate_forward(q.value(), k.value(), src, d, eps);
  return q.tape->emit(std::move(res.flow), inputs, [q, k, sources, d, eps](Tape<T>& t, const Tensor<T>& g) {
    std::vector<AggregateSource<T>> src;
    for (auto& [v, c] : sources) src.push_back({&t.value(v), &t.value(c)});
    // Recompute the output rather than holding a second copy on the tape.
    const auto out = aggregate_forward(t.value(q), t.value(k), src, d, eps).flow;
    auto grads = aggregate_backward(t.value(q), t.value(k), src, d, eps, out, g);
    t.accumulate(q, grads.q);
    t.accumulate(k, grads.k);
    for (std::size_t j = 0; j < sources.size(); ++j) {
      t.accumulate(sources[j].first, grads.value[j]);
      t.accumulate(sources[j].second, grads.credibility[j]);
    }
  });
}

}  // namespace mvflow
