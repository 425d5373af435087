#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "mvflow/autodiff.hpp"
#include "mvflow/tensor.hpp"

namespace mvflow {

// Per-pixel displacement in pixels, stored as a [2,H,W] tensor (u rightward, v downward).
struct FlowField {
  Tensor<float> t;

  FlowField() = default;
  FlowField(int width, int height) : t(Shape{2, height, width}) {}
  explicit FlowField(Tensor<float> tensor) : t(std::move(tensor)) {
    require_rank(t, 3, "FlowField");
    if (t.dim(0) != 2) throw ShapeError("FlowField: expected 2 channels, got " + shape_str(t.shape()));
  }

  int width() const { return t.dim(2); }
  int height() const { return t.dim(1); }
  float& u(int y, int x) { return t.at(0, y, x); }
  float& v(int y, int x) { return t.at(1, y, x); }
  float u(int y, int x) const { return t.at(0, y, x); }
  float v(int y, int x) const { return t.at(1, y, x); }

  friend bool operator==(const FlowField&, const FlowField&) = default;
};

// Values in [0,1], stored as [1,H,W].
struct Mask {
  Tensor<float> t;

  Mask() = default;
  Mask(int width, int height, float fill = 0.0f) : t(Shape{1, height, width}, fill) {}
  explicit Mask(Tensor<float> tensor) : t(std::move(tensor)) {
    require_rank(t, 3, "Mask");
    if (t.dim(0) != 1) throw ShapeError("Mask: expected 1 channel, got " + shape_str(t.shape()));
  }

  int width() const { return t.dim(2); }
  int height() const { return t.dim(1); }
  float& operator()(int y, int x) { return t.at(0, y, x); }
  float operator()(int y, int x) const { return t.at(0, y, x); }

  double mean() const {
    double s = 0;
    for (float v : t.data()) s += v;
    return s / static_cast<double>(t.size());
  }
  double sum() const {
    double s = 0;
    for (float v : t.data()) s += v;
    return s;
  }

  friend bool operator==(const Mask&, const Mask&) = default;
};

inline void require_same_size(const FlowField& f, const Mask& m, const char* what) {
  if (f.width() != m.width() || f.height() != m.height())
    throw ShapeError(std::string(what) + ": flow and mask sizes differ");
}

inline void require_same_size(const FlowField& a, const FlowField& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) throw ShapeError(std::string(what) + ": flow sizes differ");
}

// ---- Middlebury .flo ---------------------------------------------------------

inline constexpr float kFloMagic = 202021.25f;

namespace detail {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <class V>
void put_le(std::string& buf, V v) {
  char b[sizeof(V)];
  std::memcpy(b, &v, sizeof(V));
  buf.append(b, sizeof(V));
}

template <class V>
V get_le(const std::string& buf, std::size_t off) {
  V v;
  std::memcpy(&v, buf.data() + off, sizeof(V));
  return v;
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed: " + path.string());
}

}  // namespace detail

inline std::string encode_flo(const FlowField& flow) {
  std::string buf;
  buf.reserve(12 + 8 * static_cast<std::size_t>(flow.width()) * flow.height());
  detail::put_le(buf, kFloMagic);
  detail::put_le(buf, static_cast<std::int32_t>(flow.width()));
  detail::put_le(buf, static_cast<std::int32_t>(flow.height()));
  for (int y = 0; y < flow.height(); ++y)
    for (int x = 0; x < flow.width(); ++x) {
      detail::put_le(buf, flow.u(y, x));
      detail::put_le(buf, flow.v(y, x));
    }
  return buf;
}

inline FlowField decode_flo(const std::string& buf) {
  if (buf.size() < 12) throw FormatError(".flo: truncated header");
  if (detail::get_le<float>(buf, 0) != kFloMagic) throw FormatError(".flo: wrong magic number");
  const auto w = detail::get_le<std::int32_t>(buf, 4);
  const auto h = detail::get_le<std::int32_t>(buf, 8);
  if (w <= 0 || h <= 0 || w > (1 << 16) || h > (1 << 16)) throw FormatError(".flo: implausible dimensions");
  const std::size_t expected = 12 + 8 * static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (buf.size() < expected)
    throw FormatError(".flo: truncated data (header says " + std::to_string(w) + "x" + std::to_string(h) + ", " +
                      std::to_string((buf.size() - 12) / 8) + " pairs present)");
  if (buf.size() > expected) throw FormatError(".flo: trailing bytes after " + std::to_string(w * h) + " pairs");
  FlowField flow(w, h);
  std::size_t off = 12;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      flow.u(y, x) = detail::get_le<float>(buf, off);
      flow.v(y, x) = detail::get_le<float>(buf, off + 4);
      off += 8;
    }
  return flow;
}

inline void write_flo(const FlowField& flow, const std::filesystem::path& path) {
  detail::write_file_bytes(path, encode_flo(flow));
}

inline FlowField read_flo(const std::filesystem::path& path) { return decode_flo(detail::read_file_bytes(path)); }

// ---- resampling --------------------------------------------------------------

// Mask-weighted average pooling, then displacements divided by factor.
inline std::pair<FlowField, Mask> downsample_flow(const FlowField& flow, const Mask& mask, int factor) {
  require_same_size(flow, mask, "downsample_flow");
  if (factor < 1 || flow.width() % factor || flow.height() % factor)
    throw ShapeError("downsample_flow: factor " + std::to_string(factor) + " does not divide " +
                     std::to_string(flow.width()) + "x" + std::to_string(flow.height()));
  const int wo = flow.width() / factor, ho = flow.height() / factor;
  FlowField out(wo, ho);
  Mask mout(wo, ho);
  for (int y = 0; y < ho; ++y)
    for (int x = 0; x < wo; ++x) {
      double su = 0, sv = 0, sm = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) {
          const int yy = y * factor + dy, xx = x * factor + dx;
          const double m = mask(yy, xx);
          su += m * flow.u(yy, xx);
          sv += m * flow.v(yy, xx);
          sm += m;
        }
      if (sm > 0) {
        out.u(y, x) = static_cast<float>(su / sm / factor);
        out.v(y, x) = static_cast<float>(sv / sm / factor);
      }
      mout(y, x) = static_cast<float>(sm / (factor * factor));
    }
  return {out, mout};
}

namespace detail {

struct Tap {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1-w1
};

// Half-pixel-centred bilinear taps with edge clamping.
inline std::vector<Tap> upsample_taps(int coarse, int factor) {
  std::vector<Tap> taps(static_cast<std::size_t>(coarse) * factor);
  for (int x = 0; x < coarse * factor; ++x) {
    double s = (x + 0.5) / factor - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(coarse - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, coarse - 1);
    taps[x] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace detail

// Bilinear x factor upsampling of a [C,h,w] field; values multiplied by value_scale.
template <class T>
Tensor<T> upsample_bilinear(const Tensor<T>& in, int factor, T value_scale) {
  require_rank(in, 3, "upsample_bilinear");
  const int c = in.dim(0), h = in.dim(1), w = in.dim(2);
  const auto ty = detail::upsample_taps(h, factor);
  const auto tx = detail::upsample_taps(w, factor);
  Tensor<T> out(Shape{c, h * factor, w * factor});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h * factor; ++y)
      for (int x = 0; x < w * factor; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        const T wy1 = T(a.w1), wx1 = T(b.w1);
        const T v = (T(1) - wy1) * ((T(1) - wx1) * in.at(ci, a.i0, b.i0) + wx1 * in.at(ci, a.i0, b.i1)) +
                    wy1 * ((T(1) - wx1) * in.at(ci, a.i1, b.i0) + wx1 * in.at(ci, a.i1, b.i1));
        out.at(ci, y, x) = v * value_scale;
      }
  return out;
}

template <class T>
Var<T> upsample_bilinear(Var<T> in, int factor, T value_scale) {
  auto out = upsample_bilinear(in.value(), factor, value_scale);
  return in.tape->emit(std::move(out), {in}, [in, factor, value_scale](Tape<T>& t, const Tensor<T>& g) {
    const auto& iv = t.value(in);
    const int c = iv.dim(0), h = iv.dim(1), w = iv.dim(2);
    const auto ty = detail::upsample_taps(h, factor);
    const auto tx = detail::upsample_taps(w, factor);
    Tensor<T> gi(iv.shape());
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < h * factor; ++y)
        for (int x = 0; x < w * factor; ++x) {
          const auto& a = ty[y];
          const auto& b = tx[x];
          const T go = g.at(ci, y, x) * value_scale;
          const T wy1 = T(a.w1), wx1 = T(b.w1);
          gi.at(ci, a.i0, b.i0) += go * (T(1) - wy1) * (T(1) - wx1);
          gi.at(ci, a.i0, b.i1) += go * (T(1) - wy1) * wx1;
          gi.at(ci, a.i1, b.i0) += go * wy1 * (T(1) - wx1);
          gi.at(ci, a.i1, b.i1) += go * wy1 * wx1;
        }
    t.accumulate(in, gi);
  });
}

// Flow at 1/factor scale (displacements in coarse pixels) -> full resolution in pixels.
inline FlowField upsample_flow(const FlowField& coarse, int factor) {
  return FlowField(upsample_bilinear(coarse.t, factor, static_cast<float>(factor)));
}

}  // namespace mvflow
