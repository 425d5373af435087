#pragma once

// Motion-vector converter: two context encoders give per-pixel queries and
// keys from the first frame, a credibility block scores the motion-vector
// prior, and a local window attention turns the block MVs into a smooth flow.

#include <random>
#include <string>
#include <vector>

#include "mvflow/aggregate.hpp"
#include "mvflow/flow.hpp"
#include "mvflow/layers.hpp"

namespace mvflow {

struct MvcmConfig {
  std::vector<int> encoder_widths{32, 32, 64, 64, 64, 64};
  int ceb_width = 32;
  std::vector<int> ceb_dilations{1, 2, 4, 8, 4, 2};
  int window_radius = 3;
  double eps = 1e-8;

  int feature_dim() const { return encoder_widths.back(); }
};

inline void validate(const MvcmConfig& c) {
  if (c.encoder_widths.size() != 6) throw ConfigError("mvcm: encoder must have six layers");
  if (c.ceb_dilations.size() != 6) throw ConfigError("mvcm: credibility block must have six dilated layers");
  if (c.window_radius < 1) throw ConfigError("mvcm: window_radius must be >= 1");
  if (c.ceb_width < 1) throw ConfigError("mvcm: ceb_width must be >= 1");
  for (int w : c.encoder_widths)
    if (w < 1) throw ConfigError("mvcm: encoder widths must be positive");
}

inline ConvStack encoder_stack(const std::string& prefix, const MvcmConfig& c) {
  ConvStack s;
  int cin = 3;
  for (std::size_t i = 0; i < c.encoder_widths.size(); ++i) {
    s.push_back({prefix + "." + std::to_string(i), cin, c.encoder_widths[i], 3, ConvSpec::same(3), Activation::relu});
    cin = c.encoder_widths[i];
  }
  return s;
}

// Six plain 3x3 convs then six dilated 3x3 convs; ReLU between, sigmoid on the head.
inline ConvStack credibility_stack(const std::string& prefix, const MvcmConfig& c, int in_channels, int heads) {
  ConvStack s;
  int cin = in_channels;
  for (int i = 0; i < 6; ++i) {
    s.push_back({prefix + "." + std::to_string(i), cin, c.ceb_width, 3, ConvSpec::same(3), Activation::relu});
    cin = c.ceb_width;
  }
  for (std::size_t i = 0; i < c.ceb_dilations.size(); ++i) {
    const bool last = i + 1 == c.ceb_dilations.size();
    s.push_back({prefix + "." + std::to_string(6 + i), cin, last ? heads : c.ceb_width, 3,
                 ConvSpec::same(3, c.ceb_dilations[i]), last ? Activation::sigmoid : Activation::relu});
  }
  return s;
}

// Radius of the credibility block's receptive field, in pixels.
inline int credibility_receptive_radius(const MvcmConfig& c) {
  int r = 6;
  for (int d : c.ceb_dilations) r += d;
  return r;
}

struct MvcmLayout {
  ConvStack enc_a, enc_b, ceb;
};

inline MvcmLayout mvcm_layout(const MvcmConfig& c, const std::string& prefix = "mvcm") {
  return {encoder_stack(prefix + ".enc_a", c), encoder_stack(prefix + ".enc_b", c),
          credibility_stack(prefix + ".ceb", c, 4, 1)};
}

template <class T>
void init_mvcm(ParamSet<T>& params, const MvcmConfig& c, std::mt19937_64& rng, const std::string& prefix = "mvcm") {
  validate(c);
  const auto l = mvcm_layout(c, prefix);
  init_stack(params, l.enc_a, rng);
  init_stack(params, l.enc_b, rng);
  init_stack(params, l.ceb, rng);
}

// ---- tape-level pieces -------------------------------------------------------

template <class T>
std::pair<Var<T>, Var<T>> encode_qk(const Bound<T>& b, Var<T> image, const MvcmConfig& c,
                                    const std::string& prefix = "mvcm") {
  require_rank(image.value(), 3, "encode_qk image");
  if (image.value().dim(0) != 3) throw ShapeError("encode_qk: image must have 3 channels");
  const auto l = mvcm_layout(c, prefix);
  return {apply_stack(b, l.enc_a, image), apply_stack(b, l.enc_b, image)};
}

template <class T>
Var<T> estimate_credibility(const Bound<T>& b, Var<T> image, Var<T> mv_mask, const MvcmConfig& c,
                            const std::string& prefix = "mvcm") {
  const auto& iv = image.value();
  require_shape(mv_mask.value(), Shape{1, iv.dim(1), iv.dim(2)}, "estimate_credibility mask");
  const auto l = mvcm_layout(c, prefix);
  return apply_stack(b, l.ceb, concat<T>({image, mv_mask}));
}

template <class T>
struct MvcmVars {
  Var<T> flow;
  Var<T> credibility;
};

template <class T>
MvcmVars<T> mvcm_forward(const Bound<T>& b, Var<T> image, Var<T> mv_flow, Var<T> mv_mask, const MvcmConfig& c,
                         const std::string& prefix = "mvcm") {
  auto [q, k] = encode_qk(b, image, c, prefix);
  auto cred = estimate_credibility(b, image, mv_mask, c, prefix);
  auto flow = aggregate<T>(q, k, {{mv_flow, cred}}, c.window_radius, static_cast<T>(c.eps));
  return {flow, cred};
}

// ---- plain API -----------------------------------------------------------------

inline std::pair<Tensor<float>, Tensor<float>> encode_qk(const Tensor<float>& image, const ParamSet<float>& params,
                                                         const MvcmConfig& c) {
  Tape<float> tape(false);
  Bound<float> b{tape, params};
  auto [q, k] = encode_qk(b, tape.constant(image), c);
  return {q.value(), k.value()};
}

// Values strictly inside (0,1).
using CredibilityMap = Tensor<float>;

inline CredibilityMap estimate_credibility(const Tensor<float>& image, const Mask& mv_mask,
                                           const ParamSet<float>& params, const MvcmConfig& c) {
  Tape<float> tape(false);
  Bound<float> b{tape, params};
  return estimate_credibility(b, tape.constant(image), tape.constant(mv_mask.t), c).value();
}

inline FlowField window_aggregate(const Tensor<float>& q, const Tensor<float>& k, const FlowField& v,
                                  const CredibilityMap& cred, int radius, double eps = 1e-8) {
  return FlowField(aggregate_forward<float>(q, k, {{&v.t, &cred}}, radius, static_cast<float>(eps)).flow);
}

struct MvcmResult {
  FlowField flow;
  CredibilityMap credibility;
  Tensor<float> confidence;  // total window weight per pixel, in (0,1]
  bool low_confidence = false;  // no motion-vector coverage at all
};

inline MvcmResult mvcm_forward(const Tensor<float>& image, const FlowField& mv_flow, const Mask& mv_mask,
                               const ParamSet<float>& params, const MvcmConfig& c) {
  require_same_size(mv_flow, mv_mask, "mvcm_forward");
  if (image.rank() != 3 || image.dim(1) != mv_flow.height() || image.dim(2) != mv_flow.width())
    throw ShapeError("mvcm_forward: image and motion field sizes differ");
  const auto [q, k] = encode_qk(image, params, c);
  auto cred = estimate_credibility(image, mv_mask, params, c);
  auto agg = aggregate_forward<float>(q, k, {{&mv_flow.t, &cred}}, c.window_radius, static_cast<float>(c.eps));
  return {FlowField(std::move(agg.flow)), std::move(cred), std::move(agg.weight_total), mv_mask.sum() == 0.0};
}

}  // namespace mvflow
