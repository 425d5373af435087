#pragma once

// Full estimator: an initialization strategy (zero, warm start, converted
// motion vectors, or the fused warm-start converter) feeding the refiner.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvflow/mvcm.hpp"
#include "mvflow/refiner.hpp"
#include "mvflow/sample.hpp"
#include "mvflow/warmstart.hpp"

namespace mvflow {

enum class MvcmResolution { full, feature };

struct ModelConfig {
  MvcmConfig mvcm;
  RefinerConfig refiner;
  MvcmResolution mvcm_resolution = MvcmResolution::feature;

  int scale() const { return refiner.feature_scale; }
};

inline void validate(const ModelConfig& c) {
  validate(c.mvcm);
  validate(c.refiner);
}

enum class InitStrategy { zero, warm_start, mvcm, mvcm_warm_start, raw_mv };

inline std::string to_string(InitStrategy s) {
  switch (s) {
    case InitStrategy::zero: return "zero";
    case InitStrategy::warm_start: return "warm_start";
    case InitStrategy::mvcm: return "mvcm";
    case InitStrategy::mvcm_warm_start: return "mvcm_warm_start";
    case InitStrategy::raw_mv: return "raw_mv";
  }
  return "?";
}

inline InitStrategy parse_strategy(const std::string& s) {
  for (auto v : {InitStrategy::zero, InitStrategy::warm_start, InitStrategy::mvcm, InitStrategy::mvcm_warm_start,
                 InitStrategy::raw_mv})
    if (to_string(v) == s) return v;
  throw ConfigError("unknown init strategy '" + s + "'");
}

inline bool needs_prev_flow(InitStrategy s) {
  return s == InitStrategy::warm_start || s == InitStrategy::mvcm_warm_start;
}
inline bool needs_mv(InitStrategy s) {
  return s == InitStrategy::mvcm || s == InitStrategy::mvcm_warm_start || s == InitStrategy::raw_mv;
}

inline ParamSet<float> init_model_params(const ModelConfig& c, std::uint64_t seed) {
  validate(c);
  ParamSet<float> p;
  std::mt19937_64 rng(seed);
  init_mvcm(p, c.mvcm, rng);
  init_warm(p, c.mvcm, rng);
  init_refiner(p, c.refiner, rng);
  return p;
}

// Checks that a parameter set has exactly the names and shapes this config builds.
inline void check_compatible(const ParamSet<float>& params, const ModelConfig& c) {
  const auto ref = init_model_params(c, 0);
  if (ref.size() != params.size())
    throw ConfigError("parameters incompatible with model config: expected " + std::to_string(ref.size()) +
                      " tensors, got " + std::to_string(params.size()));
  for (const auto& [name, t] : ref) {
    if (!params.contains(name)) throw ConfigError("parameters incompatible with model config: missing " + name);
    if (params.at(name).shape() != t.shape())
      throw ConfigError("parameters incompatible with model config: " + name + " has shape " +
                        shape_str(params.at(name).shape()) + ", expected " + shape_str(t.shape()));
  }
}

// Network input range.
template <class T>
Tensor<T> normalize_image(const Tensor<float>& img) {
  Tensor<T> out(img.shape());
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = static_cast<T>(2.0 * img[i] - 1.0);
  return out;
}

template <class T>
struct ModelVars {
  Var<T> init;                 // 1/R units
  std::optional<Var<T>> mvcm_full;  // converter output at full resolution, pixels
  RefinerVars<T> refined;
};

namespace detail {

inline void require_inputs(const Sample& s, InitStrategy strategy) {
  if (needs_prev_flow(strategy) && !s.prev_flow)
    throw ConfigError("init strategy " + to_string(strategy) + " requires a previous flow");
  if (needs_mv(strategy) && s.mv_flow.t.empty())
    throw ConfigError("init strategy " + to_string(strategy) + " requires motion vectors");
}

template <class T>
Var<T> constant_flow(Tape<T>& tape, const FlowField& f) {
  return tape.constant(f.t.template cast<T>());
}

}  // namespace detail

template <class T>
ModelVars<T> model_forward(const Bound<T>& b, const Sample& s, InitStrategy strategy, int n_iters,
                           const ModelConfig& c) {
  detail::require_inputs(s, strategy);
  const int R = c.scale();
  if (s.width() % R || s.height() % R)
    throw ShapeError("model: image size must be divisible by feature scale " + std::to_string(R));
  auto& tape = b.tape;
  auto image1 = tape.constant(normalize_image<T>(s.image1));
  auto image2 = tape.constant(normalize_image<T>(s.image2));
  const int hc = s.height() / R, wc = s.width() / R;
  const bool at_feature = c.mvcm_resolution == MvcmResolution::feature;

  ModelVars<T> out;
  auto mvcm_inputs = [&]() {
    // Image, MV flow and MV mask at the converter's resolution.
    if (!at_feature) return std::tuple{image1, detail::constant_flow(tape, s.mv_flow), tape.constant(s.mv_mask.t.template cast<T>())};
    auto [f, m] = downsample_flow(s.mv_flow, s.mv_mask, R);
    return std::tuple{avg_pool(image1, R), detail::constant_flow(tape, f), tape.constant(m.t.template cast<T>())};
  };
  auto projected = [&]() {
    auto prj = forward_warp(*s.prev_flow);
    if (!at_feature) return std::pair{detail::constant_flow(tape, prj.flow), tape.constant(prj.mask.t.template cast<T>())};
    auto [f, m] = downsample_flow(prj.flow, prj.mask, R);
    return std::pair{detail::constant_flow(tape, f), tape.constant(m.t.template cast<T>())};
  };
  auto finish_mvcm = [&](Var<T> flow) {
    if (at_feature) {
      out.mvcm_full = upsample_bilinear(flow, R, static_cast<T>(R));
      out.init = flow;
    } else {
      out.mvcm_full = flow;
      out.init = scale(avg_pool(flow, R), T(1) / T(R));
    }
  };

  switch (strategy) {
    case InitStrategy::zero:
      out.init = tape.constant(Tensor<T>(Shape{2, hc, wc}));
      break;
    case InitStrategy::warm_start: {
      auto prj = forward_warp(*s.prev_flow);
      out.init = detail::constant_flow(tape, downsample_flow(prj.flow, prj.mask, R).first);
      break;
    }
    case InitStrategy::raw_mv:
      out.init = detail::constant_flow(tape, downsample_flow(s.mv_flow, s.mv_mask, R).first);
      break;
    case InitStrategy::mvcm: {
      auto [img, f, m] = mvcm_inputs();
      finish_mvcm(mvcm_forward(b, img, f, m, c.mvcm).flow);
      break;
    }
    case InitStrategy::mvcm_warm_start: {
      auto [img, f, m] = mvcm_inputs();
      auto [pf, pm] = projected();
      finish_mvcm(warm_mvcm_forward(b, img, f, m, pf, pm, c.mvcm));
      break;
    }
  }
  out.refined = refine(b, image1, image2, out.init, n_iters, c.refiner);
  return out;
}

// ---- plain API -----------------------------------------------------------------

// Initial flow at 1/R scale (displacements in 1/R pixels).
inline FlowField make_init(const Sample& s, InitStrategy strategy, const ParamSet<float>& params,
                           const ModelConfig& c) {
  Tape<float> tape(false);
  return FlowField(model_forward(Bound<float>{tape, params}, s, strategy, 0, c).init.value());
}

struct RefineResult {
  std::vector<FlowField> coarse;  // per iteration, 1/R scale
  FlowField full;                 // pixels, full resolution
};

inline RefineResult iterate(const Sample& s, const FlowField& init, int n_iters, const ParamSet<float>& params,
                            const ModelConfig& c) {
  if (n_iters < 0) throw ConfigError("iterate: n_iters must be >= 0");
  Tape<float> tape(false);
  Bound<float> b{tape, params};
  auto r = refine(b, tape.constant(normalize_image<float>(s.image1)), tape.constant(normalize_image<float>(s.image2)),
                  tape.constant(init.t), n_iters, c.refiner);
  RefineResult out{{}, FlowField(r.full.value())};
  for (auto& v : r.coarse) out.coarse.emplace_back(v.value());
  return out;
}

struct EstimateResult {
  FlowField init;  // 1/R scale
  std::optional<FlowField> mvcm_full;
  RefineResult refined;
};

inline EstimateResult estimate(const Sample& s, InitStrategy strategy, int n_iters, const ParamSet<float>& params,
                               const ModelConfig& c) {
  Tape<float> tape(false);
  auto v = model_forward(Bound<float>{tape, params}, s, strategy, n_iters, c);
  EstimateResult out{FlowField(v.init.value()), std::nullopt, {{}, FlowField(v.refined.full.value())}};
  if (v.mvcm_full) out.mvcm_full = FlowField(v.mvcm_full->value());
  for (auto& f : v.refined.coarse) out.refined.coarse.emplace_back(f.value());
  return out;
}

}  // namespace mvflow
