#pragma once

// Forward (and matching backward) kernels on plain tensors. All forward
// functions here are pure: they read their inputs and return a new tensor.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "mvflow/tensor.hpp"

namespace mvflow {

struct ConvSpec {
  int stride = 1;
  int dilation = 1;
  int padding = 0;

  // Padding that keeps H,W for a stride-1 conv with odd kernel size k.
  static ConvSpec same(int k, int dilation = 1) { return {1, dilation, dilation * (k - 1) / 2}; }
};

inline int conv_out_size(int in, int k, const ConvSpec& s) {
  return (in + 2 * s.padding - s.dilation * (k - 1) - 1) / s.stride + 1;
}

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeometry {
  int cin, h, w, cout, kh, kw, ho, wo;
  ConvSpec spec;
};

template <class T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec) {
  require_rank(input, 3, "conv2d input");
  require_rank(weight, 4, "conv2d weight");
  ConvGeometry g{input.dim(0), input.dim(1), input.dim(2), weight.dim(0), weight.dim(2), weight.dim(3), 0, 0, spec};
  if (weight.dim(1) != g.cin)
    throw ShapeError("conv2d: weight expects " + std::to_string(weight.dim(1)) + " input channels, got " +
                     std::to_string(g.cin));
  if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ShapeError("conv2d: kernel sizes must be odd");
  if (spec.stride < 1 || spec.dilation < 1 || spec.padding < 0) throw ShapeError("conv2d: invalid stride/dilation/padding");
  g.ho = conv_out_size(g.h, g.kh, spec);
  g.wo = conv_out_size(g.w, g.kw, spec);
  if (g.ho <= 0 || g.wo <= 0) throw ShapeError("conv2d: output would be empty for input " + shape_str(input.shape()));
  return g;
}

// cols[(ci*kh+ky)*kw+kx, oy*wo+ox]
template <class T>
std::vector<T> im2col(const Tensor<T>& input, const ConvGeometry& g) {
  const std::size_t n = static_cast<std::size_t>(g.ho) * g.wo;
  std::vector<T> cols(static_cast<std::size_t>(g.cin) * g.kh * g.kw * n, T(0));
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        T* row = cols.data() + ((static_cast<std::size_t>(ci) * g.kh + ky) * g.kw + kx) * n;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.spec.stride - g.spec.padding + ky * g.spec.dilation;
          if (iy < 0 || iy >= g.h) continue;
          const T* src = &input.at(ci, iy, 0);
          T* dst = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.spec.stride - g.spec.padding + kx * g.spec.dilation;
            if (ix >= 0 && ix < g.w) dst[ox] = src[ix];
          }
        }
      }
  return cols;
}

template <class T>
void col2im_add(const std::vector<T>& cols, const ConvGeometry& g, Tensor<T>& grad_input) {
  const std::size_t n = static_cast<std::size_t>(g.ho) * g.wo;
  for (int ci = 0; ci < g.cin; ++ci)
    for (int ky = 0; ky < g.kh; ++ky)
      for (int kx = 0; kx < g.kw; ++kx) {
        const T* row = cols.data() + ((static_cast<std::size_t>(ci) * g.kh + ky) * g.kw + kx) * n;
        for (int oy = 0; oy < g.ho; ++oy) {
          const int iy = oy * g.spec.stride - g.spec.padding + ky * g.spec.dilation;
          if (iy < 0 || iy >= g.h) continue;
          T* dst = &grad_input.at(ci, iy, 0);
          const T* src = row + static_cast<std::size_t>(oy) * g.wo;
          for (int ox = 0; ox < g.wo; ++ox) {
            const int ix = ox * g.spec.stride - g.spec.padding + kx * g.spec.dilation;
            if (ix >= 0 && ix < g.w) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation (no kernel flip) with zero padding. bias may be empty.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias, const ConvSpec& spec) {
  const auto g = detail::conv_geometry(input, weight, spec);
  if (!bias.empty()) require_shape(bias, Shape{g.cout}, "conv2d bias");
  const auto cols = detail::im2col(input, g);
  const int k = g.cin * g.kh * g.kw;
  const int n = g.ho * g.wo;
  Tensor<T> out(Shape{g.cout, g.ho, g.wo});
  detail::MapMat<T> o(out.data().data(), g.cout, n);
  detail::CMapMat<T> w(weight.data().data(), g.cout, k);
  detail::CMapMat<T> c(cols.data(), k, n);
  o.noalias() = w * c;
  if (!bias.empty())
    for (int co = 0; co < g.cout; ++co) o.row(co).array() += bias[co];
  require_finite(out, "conv2d");
  return out;
}

template <class T>
struct ConvGrads {
  Tensor<T> input, weight, bias;
};

template <class T>
ConvGrads<T> conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& grad_out,
                             const ConvSpec& spec, bool need_input = true) {
  const auto g = detail::conv_geometry(input, weight, spec);
  require_shape(grad_out, Shape{g.cout, g.ho, g.wo}, "conv2d_backward grad");
  const int k = g.cin * g.kh * g.kw;
  const int n = g.ho * g.wo;
  const auto cols = detail::im2col(input, g);
  detail::CMapMat<T> go(grad_out.data().data(), g.cout, n);
  detail::CMapMat<T> c(cols.data(), k, n);
  ConvGrads<T> r{Tensor<T>(), Tensor<T>(weight.shape()), Tensor<T>(Shape{g.cout})};
  detail::MapMat<T> gw(r.weight.data().data(), g.cout, k);
  gw.noalias() = go * c.transpose();
  for (int co = 0; co < g.cout; ++co) r.bias[co] = go.row(co).sum();
  if (need_input) {
    std::vector<T> gcols(static_cast<std::size_t>(k) * n);
    detail::MapMat<T> gc(gcols.data(), k, n);
    detail::CMapMat<T> w(weight.data().data(), g.cout, k);
    gc.noalias() = w.transpose() * go;
    r.input = Tensor<T>(input.shape());
    detail::col2im_add(gcols, g, r.input);
  }
  return r;
}

enum class Activation { relu, sigmoid };

template <class T>
T sigmoid_scalar(T x) {
  // Two branches so exp never overflows.
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
Tensor<T> activate(const Tensor<T>& input, Activation kind) {
  Tensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) {
    const T x = input[i];
    out[i] = kind == Activation::relu ? (x > T(0) ? x : T(0)) : sigmoid_scalar(x);
  }
  require_finite(out, "activate");
  return out;
}

// Numerically stable softmax (max-subtracted). Entries equal to -inf get zero weight.
template <class T>
std::vector<T> softmax(std::span<const T> logits) {
  if (logits.empty()) throw ShapeError("softmax: empty input");
  T mx = -std::numeric_limits<T>::infinity();
  for (T v : logits) mx = std::max(mx, v);
  if (!std::isfinite(mx)) throw NumericError("softmax: no finite logit");
  std::vector<T> out(logits.size());
  T sum = 0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - mx);
    sum += out[i];
  }
  for (T& v : out) v /= sum;
  return out;
}

template <class T>
std::vector<T> softmax(const std::vector<T>& logits) {
  return softmax(std::span<const T>(logits));
}

// Channel concatenation of [C_i,H,W] tensors.
template <class T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
  if (parts.empty()) throw ShapeError("concat_channels: no inputs");
  const int h = parts[0]->dim(1), w = parts[0]->dim(2);
  int c = 0;
  for (auto* p : parts) {
    require_rank(*p, 3, "concat_channels");
    if (p->dim(1) != h || p->dim(2) != w) throw ShapeError("concat_channels: spatial size mismatch");
    c += p->dim(0);
  }
  Tensor<T> out(Shape{c, h, w});
  std::size_t off = 0;
  for (auto* p : parts) {
    std::copy(p->data().begin(), p->data().end(), out.data().begin() + off);
    off += p->size();
  }
  return out;
}

// Average pooling by an integer factor; used to bring images to feature resolution.
template <class T>
Tensor<T> avg_pool(const Tensor<T>& input, int factor) {
  require_rank(input, 3, "avg_pool");
  const int c = input.dim(0), h = input.dim(1), w = input.dim(2);
  if (factor < 1 || h % factor || w % factor) throw ShapeError("avg_pool: factor must divide spatial dims");
  const int ho = h / factor, wo = w / factor;
  Tensor<T> out(Shape{c, ho, wo});
  const T inv = T(1) / T(factor * factor);
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int x = 0; x < wo; ++x) {
        T s = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) s += input.at(ci, y * factor + dy, x * factor + dx);
        out.at(ci, y, x) = s * inv;
      }
  return out;
}

}  // namespace mvflow
