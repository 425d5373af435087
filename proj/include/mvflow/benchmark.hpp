#pragma once

// Strategy x iteration-count evaluation grid.

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "mvflow/metrics.hpp"
#include "mvflow/model.hpp"
#include "mvflow/render.hpp"

namespace mvflow {

struct BenchmarkCell {
  InitStrategy strategy = InitStrategy::zero;
  int iterations = 0;
  std::vector<double> aepe;  // per sample
  std::vector<double> f1;
  double mean_aepe = 0;
  double mean_f1 = 0;
  double median_ms = 0;  // wall clock per inference
};

struct EvalReport {
  std::size_t n_samples = 0;
  std::vector<BenchmarkCell> cells;

  const BenchmarkCell& cell(InitStrategy s, int iters) const {
    for (const auto& c : cells)
      if (c.strategy == s && c.iterations == iters) return c;
    throw ConfigError("report has no cell for " + to_string(s) + " at " + std::to_string(iters) + " iterations");
  }

  // One JSON object per cell; timing excluded when with_timing is false.
  std::string to_jsonl(bool with_timing = true) const {
    std::string out;
    for (const auto& c : cells) {
      nlohmann::json j = {{"strategy", to_string(c.strategy)}, {"iterations", c.iterations},
                          {"samples", n_samples},            {"aepe", c.mean_aepe},
                          {"f1", c.mean_f1},                 {"per_sample_aepe", c.aepe}};
      if (with_timing) j["median_ms"] = c.median_ms;
      out += j.dump() + "\n";
    }
    return out;
  }

  std::string to_table() const {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof(line), "%-16s %6s %10s %8s %10s\n", "strategy", "iters", "AEPE", "F1", "ms");
    os << line;
    for (const auto& c : cells) {
      std::snprintf(line, sizeof(line), "%-16s %6d %10.4f %8.4f %10.2f\n", to_string(c.strategy).c_str(), c.iterations,
                    c.mean_aepe, c.mean_f1, c.median_ms);
      os << line;
    }
    return os.str();
  }
};

struct BenchmarkOptions {
  int timing_runs = 5;
  std::filesystem::path render_dir;  // empty: no renders
};

inline EvalReport run_benchmark(const std::vector<Sample>& samples, const std::vector<InitStrategy>& strategies,
                                const std::vector<int>& iteration_counts, const ParamSet<float>& params,
                                const ModelConfig& cfg, const BenchmarkOptions& opt = {}) {
  if (samples.empty()) throw FormatError("benchmark: no samples");
  if (strategies.empty() || iteration_counts.empty()) throw ConfigError("benchmark: empty strategy or iteration grid");
  for (int n : iteration_counts)
    if (n < 0) throw ConfigError("benchmark: iteration counts must be >= 0");
  check_compatible(params, cfg);
  const int max_iters = *std::max_element(iteration_counts.begin(), iteration_counts.end());
  const int R = cfg.scale();

  EvalReport rep;
  rep.n_samples = samples.size();
  for (auto s : strategies)
    for (int n : iteration_counts) rep.cells.push_back(BenchmarkCell{s, n, {}, {}, 0, 0, 0});

  for (auto strategy : strategies) {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& sample = samples[i];
      // Iteration k's output does not depend on how many follow, so one run covers every count.
      auto est = estimate(sample, strategy, max_iters, params, cfg);
      for (auto& c : rep.cells) {
        if (c.strategy != strategy) continue;
        const FlowField pred = c.iterations == 0 ? upsample_flow(est.init, R) : upsample_flow(est.refined.coarse[c.iterations - 1], R);
        c.aepe.push_back(aepe(pred, sample.gt_flow, sample.gt_valid));
        c.f1.push_back(f1_outlier(pred, sample.gt_flow, sample.gt_valid));
        if (i == 0 && !opt.render_dir.empty()) {
          const auto stem = to_string(strategy) + "_it" + std::to_string(c.iterations);
          write_png(render_flow(pred), opt.render_dir / (stem + "_flow.png"));
          write_png(render_error_map(pred, sample.gt_flow, sample.gt_valid), opt.render_dir / (stem + "_error.png"));
        }
      }
    }
  }
  for (auto& c : rep.cells) {
    double sa = 0, sf = 0;
    for (std::size_t i = 0; i < c.aepe.size(); ++i) {
      sa += c.aepe[i];
      sf += c.f1[i];
    }
    c.mean_aepe = sa / static_cast<double>(c.aepe.size());
    c.mean_f1 = sf / static_cast<double>(c.f1.size());
    std::vector<double> ms;
    for (int r = 0; r < std::max(opt.timing_runs, 1); ++r) {
      const auto t0 = std::chrono::steady_clock::now();
      auto est = estimate(samples[0], c.strategy, c.iterations, params, cfg);
      const auto t1 = std::chrono::steady_clock::now();
      ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
    c.median_ms = ms[ms.size() / 2];
  }
  return rep;
}

// Mean AEPE of one strategy at one iteration count.
inline double mean_aepe(const std::vector<Sample>& samples, InitStrategy strategy, int iters,
                        const ParamSet<float>& params, const ModelConfig& cfg) {
  double s = 0;
  for (const auto& sample : samples)
    s += aepe(estimate(sample, strategy, iters, params, cfg).refined.full, sample.gt_flow, sample.gt_valid);
  return s / static_cast<double>(samples.size());
}

}  // namespace mvflow
