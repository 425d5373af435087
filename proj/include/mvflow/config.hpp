#pragma once

// Key-value configuration text:
//
//   # comment
//   key = value
//
// Unknown keys are errors. to_text() writes every key in a fixed order with
// shortest round-trip number formatting, so a config survives text round trips
// byte for byte.

#include <charconv>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "mvflow/model.hpp"
#include "mvflow/synth.hpp"

namespace mvflow {

enum class TrainMode { joint, warm_finetune };

struct TrainConfig {
  double lr_start = 6e-4;
  double lr_end = 5.1e-4;
  double weight_decay = 5e-5;
  double adam_eps = 1e-8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  int batch_size = 2;
  int total_steps = 2000;
  int train_iters = 4;
  int eval_iters = 16;
  int crop_h = 64;
  int crop_w = 64;
  double loss_gamma = 0.8;
  std::uint64_t seed = 1;
  bool hflip = false;
  double zero_init_fraction = 0.5;  // share of training samples refined from a zero init
  double grad_clip = 1.0;           // global gradient-norm limit; 0 disables
  TrainMode mode = TrainMode::joint;
  int eval_every = 0;     // 0 disables periodic evaluation
  int eval_samples = 16;  // size of the periodic eval set
  std::uint64_t eval_seed = 1000003;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
};

inline void validate(const TrainConfig& c) {
  if (!(c.lr_start > 0 && c.lr_end > 0)) throw ConfigError("config: learning rates must be positive");
  if (c.lr_end > c.lr_start) throw ConfigError("config: lr_end must be <= lr_start");
  if (c.weight_decay < 0 || !(c.adam_eps > 0)) throw ConfigError("config: weight_decay >= 0 and adam_eps > 0 required");
  if (!(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1)) throw ConfigError("config: betas must be in [0,1)");
  if (c.batch_size < 1 || c.total_steps < 0 || c.train_iters < 1 || c.eval_iters < 0)
    throw ConfigError("config: batch_size >= 1, total_steps >= 0, train_iters >= 1 required");
  if (c.crop_h < 1 || c.crop_w < 1) throw ConfigError("config: crop sizes must be positive");
  if (!(c.loss_gamma > 0 && c.loss_gamma <= 1)) throw ConfigError("config: loss_gamma must be in (0,1]");
  if (!(c.zero_init_fraction >= 0 && c.zero_init_fraction <= 1))
    throw ConfigError("config: zero_init_fraction must be in [0,1]");
  if (c.grad_clip < 0) throw ConfigError("config: grad_clip must be >= 0");
  if (c.eval_every < 0 || c.eval_samples < 1 || c.checkpoint_every < 0)
    throw ConfigError("config: eval_every/checkpoint_every >= 0 and eval_samples >= 1 required");
}

struct Config {
  TrainConfig train;
  ModelConfig model;
  SynthConfig synth;
};

namespace detail {

inline std::string fmt_num(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, r.ptr);
}

inline std::string fmt_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

inline double parse_double(const std::string& key, const std::string& v) {
  double out;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects a number, got '" + v + "'");
  return out;
}

template <class I>
I parse_int(const std::string& key, const std::string& v) {
  I out;
  auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError("config: key '" + key + "' expects an integer, got '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("config: key '" + key + "' expects true/false, got '" + v + "'");
}

inline std::vector<int> parse_ints(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_int<int>(key, item));
  if (out.empty()) throw ConfigError("config: key '" + key + "' expects a comma-separated list");
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct Field {
  std::string key;
  std::function<std::string(const Config&)> get;
  std::function<void(Config&, const std::string&)> set;
};

#define MVFLOW_NUM(path, name)                                                                   \
  Field {                                                                                        \
    name, [](const Config& c) { return fmt_num(c.path); },                                      \
        [](Config& c, const std::string& v) { c.path = parse_double(name, v); }                 \
  }
#define MVFLOW_INT(path, name)                                                                   \
  Field {                                                                                        \
    name, [](const Config& c) { return std::to_string(c.path); },                               \
        [](Config& c, const std::string& v) { c.path = parse_int<decltype(c.path)>(name, v); }  \
  }
#define MVFLOW_BOOL(path, name)                                                                  \
  Field {                                                                                        \
    name, [](const Config& c) { return std::string(c.path ? "true" : "false"); },               \
        [](Config& c, const std::string& v) { c.path = parse_bool(name, v); }                   \
  }

inline const std::vector<Field>& config_fields() {
  static const std::vector<Field> fields = {
      MVFLOW_NUM(train.lr_start, "lr_start"),
      MVFLOW_NUM(train.lr_end, "lr_end"),
      MVFLOW_NUM(train.weight_decay, "weight_decay"),
      MVFLOW_NUM(train.adam_eps, "adam_eps"),
      MVFLOW_NUM(train.beta1, "beta1"),
      MVFLOW_NUM(train.beta2, "beta2"),
      MVFLOW_INT(train.batch_size, "batch_size"),
      MVFLOW_INT(train.total_steps, "total_steps"),
      MVFLOW_INT(train.train_iters, "train_iters"),
      MVFLOW_INT(train.eval_iters, "eval_iters"),
      MVFLOW_INT(train.crop_h, "crop_h"),
      MVFLOW_INT(train.crop_w, "crop_w"),
      MVFLOW_NUM(train.loss_gamma, "loss_gamma"),
      MVFLOW_INT(train.seed, "seed"),
      MVFLOW_BOOL(train.hflip, "hflip"),
      MVFLOW_NUM(train.zero_init_fraction, "zero_init_fraction"),
      MVFLOW_NUM(train.grad_clip, "grad_clip"),
      Field{"mode", [](const Config& c) { return std::string(c.train.mode == TrainMode::joint ? "joint" : "warm_finetune"); },
            [](Config& c, const std::string& v) {
              if (v == "joint") c.train.mode = TrainMode::joint;
              else if (v == "warm_finetune") c.train.mode = TrainMode::warm_finetune;
              else throw ConfigError("config: mode must be joint or warm_finetune, got '" + v + "'");
            }},
      MVFLOW_INT(train.eval_every, "eval_every"),
      MVFLOW_INT(train.eval_samples, "eval_samples"),
      MVFLOW_INT(train.eval_seed, "eval_seed"),
      MVFLOW_INT(train.checkpoint_every, "checkpoint_every"),
      Field{"mvcm_resolution",
            [](const Config& c) { return std::string(c.model.mvcm_resolution == MvcmResolution::full ? "full" : "feature"); },
            [](Config& c, const std::string& v) {
              if (v == "full") c.model.mvcm_resolution = MvcmResolution::full;
              else if (v == "feature") c.model.mvcm_resolution = MvcmResolution::feature;
              else throw ConfigError("config: mvcm_resolution must be full or feature, got '" + v + "'");
            }},
      Field{"encoder_widths", [](const Config& c) { return fmt_ints(c.model.mvcm.encoder_widths); },
            [](Config& c, const std::string& v) { c.model.mvcm.encoder_widths = parse_ints("encoder_widths", v); }},
      MVFLOW_INT(model.mvcm.ceb_width, "ceb_width"),
      Field{"ceb_dilations", [](const Config& c) { return fmt_ints(c.model.mvcm.ceb_dilations); },
            [](Config& c, const std::string& v) { c.model.mvcm.ceb_dilations = parse_ints("ceb_dilations", v); }},
      MVFLOW_INT(model.mvcm.window_radius, "window_radius"),
      MVFLOW_NUM(model.mvcm.eps, "aggregate_eps"),
      MVFLOW_INT(model.refiner.feature_scale, "feature_scale"),
      MVFLOW_INT(model.refiner.feature_dim, "feature_dim"),
      MVFLOW_INT(model.refiner.corr_radius, "corr_radius"),
      MVFLOW_INT(model.refiner.update_width, "update_width"),
      MVFLOW_INT(synth.width, "synth_width"),
      MVFLOW_INT(synth.height, "synth_height"),
      MVFLOW_INT(synth.block_size, "synth_block_size"),
      MVFLOW_INT(synth.n_moving_objects, "synth_objects"),
      MVFLOW_NUM(synth.mv_noise, "synth_mv_noise"),
      MVFLOW_NUM(synth.coverage, "synth_coverage"),
      MVFLOW_NUM(synth.mv_outlier_rate, "synth_mv_outlier_rate"),
      MVFLOW_NUM(synth.image_noise, "synth_image_noise"),
      MVFLOW_NUM(synth.max_motion, "synth_max_motion"),
      MVFLOW_NUM(synth.prev_noise, "synth_prev_noise"),
  };
  return fields;
}

#undef MVFLOW_NUM
#undef MVFLOW_INT
#undef MVFLOW_BOOL

}  // namespace detail

inline void validate(const Config& c) {
  validate(c.train);
  validate(c.model);
  validate(c.synth);
}

inline std::string to_text(const Config& c) {
  std::string out;
  for (const auto& f : detail::config_fields()) out += f.key + " = " + f.get(c) + "\n";
  return out;
}

// Applies key = value lines on top of base.
inline Config parse_config(const std::string& text, Config base = {}) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: line " + std::to_string(lineno) + " is not 'key = value'");
    const auto key = detail::trim(line.substr(0, eq));
    const auto value = detail::trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : detail::config_fields())
      if (f.key == key) {
        f.set(base, value);
        found = true;
      }
    if (!found) throw ConfigError("config: unknown key '" + key + "' on line " + std::to_string(lineno));
  }
  validate(base);
  return base;
}

inline Config load_config(const std::filesystem::path& path) { return parse_config(detail::read_file_bytes(path)); }

}  // namespace mvflow
