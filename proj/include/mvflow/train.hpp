#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvflow/benchmark.hpp"
#include "mvflow/checkpoint.hpp"
#include "mvflow/config.hpp"
#include "mvflow/synth.hpp"

namespace mvflow {

// ---- loss ----------------------------------------------------------------------

// Σ valid · (|du| + |dv|) / Σ valid
template <class T>
Var<T> masked_l1_mean(Var<T> pred, const Tensor<T>& gt, const Tensor<T>& valid) {
  const auto& p = pred.value();
  require_shape(gt, p.shape(), "masked_l1_mean gt");
  require_shape(valid, Shape{1, p.dim(1), p.dim(2)}, "masked_l1_mean valid");
  const std::size_t plane = static_cast<std::size_t>(p.dim(1)) * p.dim(2);
  T n = 0;
  for (T v : valid.data()) n += v;
  if (n <= T(0)) throw ShapeError("masked_l1_mean: validity mask is empty");
  auto& tape = *pred.tape;
  T s = 0;
  std::uint64_t signs = 0;
  for (int c = 0; c < p.dim(0); ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const T d = p[c * plane + i] - gt[c * plane + i];
      s += valid[i] * std::abs(d);
      if (tape.tracking_branches()) {
        signs = signs * 3 + (d > 0 ? 2 : d < 0 ? 1 : 0);
        tape.note_kink_distance(d);
      }
    }
  if (tape.tracking_branches()) tape.note_branch(signs);
  return tape.emit(Tensor<T>::scalar(s / n), {pred}, [pred, gt, valid, n, plane](Tape<T>& t, const Tensor<T>& g) {
    const auto& p = t.value(pred);
    Tensor<T> gp(p.shape());
    for (int c = 0; c < p.dim(0); ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const T d = p[c * plane + i] - gt[c * plane + i];
        const T sgn = d > 0 ? T(1) : d < 0 ? T(-1) : T(0);
        gp[c * plane + i] = g[0] * valid[i] * sgn / n;
      }
    t.accumulate(pred, gp);
  });
}

inline std::vector<double> sequence_weights(std::size_t n, double gamma) {
  std::vector<double> w(n);
  for (std::size_t k = 0; k < n; ++k) w[k] = std::pow(gamma, static_cast<double>(n - 1 - k));
  return w;
}

// Σ_k gamma^(N-1-k) · L1(flows[k]); the last element is the final prediction.
template <class T>
Var<T> sequence_loss(const std::vector<Var<T>>& flows, const Tensor<T>& gt, const Tensor<T>& valid, double gamma) {
  if (flows.empty()) throw ShapeError("sequence_loss: no predictions");
  std::vector<Var<T>> terms;
  for (const auto& f : flows) terms.push_back(masked_l1_mean(f, gt, valid));
  std::vector<T> coeffs;
  for (double w : sequence_weights(flows.size(), gamma)) coeffs.push_back(static_cast<T>(w));
  return weighted_sum(terms, coeffs);
}

inline double sequence_loss(const std::vector<FlowField>& flows, const FlowField& gt, const Mask& valid, double gamma) {
  if (flows.empty()) throw ShapeError("sequence_loss: no predictions");
  Tape<double> tape(false);
  std::vector<Var<double>> vars;
  for (const auto& f : flows) {
    require_same_size(f, gt, "sequence_loss");
    vars.push_back(tape.constant(f.t.cast<double>()));
  }
  require_same_size(gt, valid, "sequence_loss");
  return sequence_loss(vars, gt.t.cast<double>(), valid.t.cast<double>(), gamma).value()[0];
}

// ---- optimizer -----------------------------------------------------------------

inline double learning_rate(const TrainConfig& c, int step) {
  if (step < 0 || step > c.total_steps)
    throw ConfigError("learning_rate: step " + std::to_string(step) + " outside [0," + std::to_string(c.total_steps) + "]");
  if (c.total_steps == 0) return c.lr_start;
  return c.lr_start + (c.lr_end - c.lr_start) * static_cast<double>(step) / c.total_steps;
}

inline bool is_frozen(const std::string& name, const std::vector<std::string>& frozen_prefixes) {
  for (const auto& p : frozen_prefixes)
    if (name.rfind(p, 0) == 0) return true;
  return false;
}

// One AdamW update with decoupled weight decay; step counts completed updates
// (0 for the first call). Moments missing from m/v start at zero.
template <class T>
void adamw_step(ParamSet<T>& params, const std::map<std::string, Tensor<T>>& grads, ParamSet<T>& m, ParamSet<T>& v,
                int step, const TrainConfig& c, const std::vector<std::string>& frozen_prefixes = {}) {
  if (step > c.total_steps)
    throw ConfigError("adamw_step: step " + std::to_string(step) + " exceeds total_steps " + std::to_string(c.total_steps));
  const double lr = learning_rate(c, step);
  const double t = step + 1;
  const double bc1 = 1 - std::pow(c.beta1, t), bc2 = 1 - std::pow(c.beta2, t);
  for (auto& [name, p] : params) {
    if (is_frozen(name, frozen_prefixes)) continue;
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const auto& g = git->second;
    require_shape(g, p.shape(), "adamw_step gradient");
    if (!m.contains(name)) m.add(name, Tensor<T>(p.shape()));
    if (!v.contains(name)) v.add(name, Tensor<T>(p.shape()));
    auto& mm = m.at(name);
    auto& vv = v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * mm[i] + (1 - c.beta1) * gi;
      const double vi = c.beta2 * vv[i] + (1 - c.beta2) * gi * gi;
      mm[i] = static_cast<T>(mi);
      vv[i] = static_cast<T>(vi);
      double pi = p[i];
      pi -= lr * c.weight_decay * pi;
      pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + c.adam_eps);
      p[i] = static_cast<T>(pi);
    }
  }
}

// Rescales all gradients together so their joint L2 norm is at most max_norm; returns the norm before clipping.
template <class T>
double clip_grad_norm(std::map<std::string, Tensor<T>>& grads, double max_norm) {
  double sq = 0;
  for (const auto& [n, g] : grads)
    for (T v : g.data()) sq += double(v) * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto& [n, g] : grads)
      for (auto& v : g.vec()) v *= s;
  }
  return norm;
}

// ---- data ------------------------------------------------------------------------

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Sample crop_sample(const Sample& s, int y0, int x0, int h, int w) {
  if (y0 < 0 || x0 < 0 || y0 + h > s.height() || x0 + w > s.width()) throw ShapeError("crop outside sample");
  auto crop = [&](const Tensor<float>& t) {
    Tensor<float> out(Shape{t.dim(0), h, w});
    for (int c = 0; c < t.dim(0); ++c)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) out.at(c, y, x) = t.at(c, y0 + y, x0 + x);
    return out;
  };
  Sample o;
  o.image1 = crop(s.image1);
  o.image2 = crop(s.image2);
  o.mv_flow = FlowField(crop(s.mv_flow.t));
  o.mv_mask = Mask(crop(s.mv_mask.t));
  o.gt_flow = FlowField(crop(s.gt_flow.t));
  o.gt_valid = Mask(crop(s.gt_valid.t));
  if (s.gt_noc) o.gt_noc = Mask(crop(s.gt_noc->t));
  if (s.prev_flow) o.prev_flow = FlowField(crop(s.prev_flow->t));
  return o;
}

inline Sample hflip_sample(const Sample& s) {
  auto flip = [](const Tensor<float>& t, bool negate_u) {
    Tensor<float> out(t.shape());
    const int w = t.dim(2);
    for (int c = 0; c < t.dim(0); ++c)
      for (int y = 0; y < t.dim(1); ++y)
        for (int x = 0; x < w; ++x) out.at(c, y, x) = (negate_u && c == 0 ? -1.0f : 1.0f) * t.at(c, y, w - 1 - x);
    return out;
  };
  Sample o;
  o.image1 = flip(s.image1, false);
  o.image2 = flip(s.image2, false);
  o.mv_flow = FlowField(flip(s.mv_flow.t, true));
  o.mv_mask = Mask(flip(s.mv_mask.t, false));
  o.gt_flow = FlowField(flip(s.gt_flow.t, true));
  o.gt_valid = Mask(flip(s.gt_valid.t, false));
  if (s.gt_noc) o.gt_noc = Mask(flip(s.gt_noc->t, false));
  if (s.prev_flow) o.prev_flow = FlowField(flip(s.prev_flow->t, true));
  return o;
}

inline std::vector<Sample> synth_eval_set(const Config& cfg, int n) {
  std::vector<Sample> out;
  for (int i = 0; i < n; ++i) out.push_back(synth_sample(mix_seed(cfg.train.eval_seed, i), cfg.synth));
  return out;
}

// ---- training loop ---------------------------------------------------------------

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<double> losses;                  // per step
  std::vector<std::pair<int, double>> evals;   // (step, mean AEPE) when eval_every > 0
};

struct TrainHooks {
  std::function<void(int step, double loss)> on_step;
  std::filesystem::path checkpoint_dir;  // periodic checkpoints when checkpoint_every > 0
};

inline std::vector<std::string> frozen_prefixes(const TrainConfig& c) {
  if (c.mode == TrainMode::warm_finetune) return {"mvcm."};
  return {};
}

// Builds and differentiates the loss of one batch; returns the loss value.
inline double batch_gradients(const std::vector<Sample>& batch, const std::vector<InitStrategy>& strategies,
                              const ParamSet<float>& params, const Config& cfg,
                              std::map<std::string, Tensor<float>>& grads) {
  Tape<float> tape(true);
  Bound<float> b{tape, params, frozen_prefixes(cfg.train)};
  std::vector<Var<float>> losses;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    auto out = model_forward(b, s, strategies[i], cfg.train.train_iters, cfg.model);
    std::vector<Var<float>> flows;
    if (out.mvcm_full) flows.push_back(*out.mvcm_full);
    for (auto& f : out.refined.coarse)
      flows.push_back(upsample_bilinear(f, cfg.model.scale(), static_cast<float>(cfg.model.scale())));
    losses.push_back(sequence_loss(flows, s.gt_flow.t, s.gt_valid.t, cfg.train.loss_gamma));
  }
  auto total = weighted_sum(losses, std::vector<float>(losses.size(), 1.0f / static_cast<float>(losses.size())));
  const double value = total.value()[0];
  if (!std::isfinite(value)) throw NumericError("non-finite training loss");
  tape.backward(total);
  grads = tape.param_grads();
  return value;
}

inline TrainResult train(const Config& cfg, const std::vector<Sample>* dataset = nullptr,
                         std::optional<ParamSet<float>> init_params = std::nullopt, const TrainHooks& hooks = {}) {
  validate(cfg);
  const auto& tc = cfg.train;
  TrainResult res;
  auto& ck = res.checkpoint;
  ck.config_text = to_text(cfg);
  ck.params = init_params ? *init_params : init_model_params(cfg.model, tc.seed);
  check_compatible(ck.params, cfg.model);
  const auto frozen = frozen_prefixes(tc);
  const InitStrategy learned =
      tc.mode == TrainMode::warm_finetune ? InitStrategy::mvcm_warm_start : InitStrategy::mvcm;

  std::vector<Sample> eval_set;
  if (tc.eval_every > 0) eval_set = synth_eval_set(cfg, tc.eval_samples);
  auto evaluate = [&](int step) {
    if (tc.eval_every > 0 && (step % tc.eval_every == 0 || step == tc.total_steps))
      res.evals.emplace_back(step, mean_aepe(eval_set, learned, tc.eval_iters, ck.params, cfg.model));
  };

  for (int step = 0; step < tc.total_steps; ++step) {
    evaluate(step);
    std::mt19937_64 rng(mix_seed(tc.seed, 0x5eed0000ULL + step));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Sample> batch;
    std::vector<InitStrategy> strategies;
    for (int bi = 0; bi < tc.batch_size; ++bi) {
      Sample s = dataset ? (*dataset)[rng() % dataset->size()]
                         : synth_sample(mix_seed(tc.seed, static_cast<std::uint64_t>(step) * tc.batch_size + bi), cfg.synth);
      if (s.height() < tc.crop_h || s.width() < tc.crop_w)
        throw ConfigError("train: sample smaller than crop size");
      const int y0 = static_cast<int>(rng() % static_cast<std::uint64_t>(s.height() - tc.crop_h + 1));
      const int x0 = static_cast<int>(rng() % static_cast<std::uint64_t>(s.width() - tc.crop_w + 1));
      if (y0 != 0 || x0 != 0 || s.height() != tc.crop_h || s.width() != tc.crop_w)
        s = crop_sample(s, y0, x0, tc.crop_h, tc.crop_w);
      const bool flip = uni(rng) < 0.5;
      if (tc.hflip && flip) s = hflip_sample(s);
      const bool zero = uni(rng) < tc.zero_init_fraction;
      strategies.push_back(tc.mode == TrainMode::joint && zero ? InitStrategy::zero : learned);
      batch.push_back(std::move(s));
    }
    std::map<std::string, Tensor<float>> grads;
    double loss;
    try {
      loss = batch_gradients(batch, strategies, ck.params, cfg, grads);
    } catch (const NumericError& e) {
      throw NumericError("training aborted at step " + std::to_string(step) + ": " + e.what());
    }
    if (tc.grad_clip > 0) clip_grad_norm(grads, tc.grad_clip);
    adamw_step(ck.params, grads, ck.adam_m, ck.adam_v, step, tc, frozen);
    ck.step = static_cast<std::uint64_t>(step + 1);
    res.losses.push_back(loss);
    if (hooks.on_step) hooks.on_step(step, loss);
    if (tc.checkpoint_every > 0 && !hooks.checkpoint_dir.empty() && (step + 1) % tc.checkpoint_every == 0)
      save_checkpoint(ck, hooks.checkpoint_dir / ("checkpoint_step" + std::to_string(step + 1) + ".bin"));
  }
  evaluate(tc.total_steps);
  return res;
}

// Model config recorded in a checkpoint.
inline Config checkpoint_config(const Checkpoint& ck) { return parse_config(ck.config_text); }

}  // namespace mvflow
