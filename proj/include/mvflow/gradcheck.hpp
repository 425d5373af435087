#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mvflow/autodiff.hpp"

namespace mvflow {

struct DeterminismError : NumericError {
  using NumericError::NumericError;
};

struct GradCheckOptions {
  double tolerance = 1e-6;
  double step = 1e-3;
  // Five-point stencil: truncation error O(step^4), so a larger step keeps round-off down.
  bool five_point = true;
  // Denominator floor for the relative error, multiplied by max(1, |loss|) since
  // finite-difference round-off grows with the loss magnitude.
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise a seeded subset per tensor plus its largest-gradient entry.
  std::size_t max_checks_per_param = 0;
  std::uint64_t seed = 0;
};

struct ParamCheck {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;
  std::size_t excluded = 0;  // perturbation crossed a kink
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0;
  double tolerance = 0;
  std::size_t near_kinks = 0;  // |preactivation| below the kink threshold at the base point
  std::size_t excluded = 0;
  bool passed = false;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "PASS" : "FAIL") << " max_rel_err=" << max_rel_error << " tol=" << tolerance
       << " params=" << params.size() << " excluded=" << excluded << " near_kinks=" << near_kinks;
    return os.str();
  }
};

// The closure builds the loss on the given tape, registering parameters through tape.param().
using LossClosure = std::function<Var<double>(Tape<double>&, const ParamSet<double>&)>;

namespace detail {

struct Eval {
  double loss;
  std::uint64_t signature;
  std::size_t near_kinks;
};

inline Eval eval_loss(const LossClosure& fn, const ParamSet<double>& params) {
  Tape<double> tape(false);
  tape.track_branches(true);
  auto loss = fn(tape, params);
  if (loss.value().size() != 1) throw ShapeError("grad_check: closure must return a scalar");
  return {loss.value()[0], tape.signature(), tape.near_kink_count()};
}

}  // namespace detail

inline GradCheckReport grad_check(const LossClosure& fn, const ParamSet<double>& params,
                                  const GradCheckOptions& opt = {}) {
  std::map<std::string, Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    auto loss = fn(tape, params);
    tape.backward(loss);
    analytic = tape.param_grads();
  }
  const auto base = detail::eval_loss(fn, params);
  const auto again = detail::eval_loss(fn, params);
  if (base.loss != again.loss || base.signature != again.signature)
    throw DeterminismError("grad_check: two forward passes of the closure disagree");

  GradCheckReport report;
  report.tolerance = opt.tolerance;
  report.near_kinks = base.near_kinks;
  const double floor = opt.abs_floor * std::max(1.0, std::abs(base.loss));
  std::mt19937_64 rng(opt.seed);
  ParamSet<double> work = params;

  for (auto& [name, value] : params) {
    ParamCheck pc{name};
    auto git = analytic.find(name);
    const Tensor<double> zeros(value.shape());
    const Tensor<double>& grad = git == analytic.end() ? zeros : git->second;

    std::vector<std::size_t> idx(value.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opt.max_checks_per_param != 0 && idx.size() > opt.max_checks_per_param) {
      std::size_t largest = 0;
      for (std::size_t i = 1; i < grad.size(); ++i)
        if (std::abs(grad[i]) > std::abs(grad[largest])) largest = i;
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opt.max_checks_per_param);
      if (std::find(idx.begin(), idx.end(), largest) == idx.end()) idx.back() = largest;
      std::sort(idx.begin(), idx.end());
    }

    auto& w = work.at(name);
    for (std::size_t i : idx) {
      const double orig = w[i];
      auto at = [&](double off) {
        w[i] = orig + off;
        auto e = detail::eval_loss(fn, work);
        w[i] = orig;
        return e;
      };
      const double h = opt.step;
      const auto plus = at(h), minus = at(-h);
      bool kink = plus.signature != base.signature || minus.signature != base.signature;
      double numeric = (plus.loss - minus.loss) / (2 * h);
      if (opt.five_point && !kink) {
        const auto plus2 = at(2 * h), minus2 = at(-2 * h);
        kink = plus2.signature != base.signature || minus2.signature != base.signature;
        numeric = (8 * (plus.loss - minus.loss) - (plus2.loss - minus2.loss)) / (12 * h);
      }
      if (kink) {
        ++pc.excluded;
        continue;
      }
      const double a = grad[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), floor});
      pc.max_rel_error = std::max(pc.max_rel_error, std::abs(a - numeric) / denom);
      ++pc.checked;
    }
    report.max_rel_error = std::max(report.max_rel_error, pc.max_rel_error);
    report.excluded += pc.excluded;
    report.params.push_back(pc);
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace mvflow
