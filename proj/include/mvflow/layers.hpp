#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mvflow/autodiff.hpp"

namespace mvflow {

struct ConvLayer {
  std::string name;  // parameter prefix; weights at name + ".weight", bias at name + ".bias"
  int cin = 0;
  int cout = 0;
  int kernel = 3;
  ConvSpec spec;
  std::optional<Activation> act;
};

using ConvStack = std::vector<ConvLayer>;

// He-normal weights, zero bias.
template <class T>
void init_stack(ParamSet<T>& params, const ConvStack& stack, std::mt19937_64& rng, double gain = 1.0) {
  for (const auto& l : stack) {
    Tensor<T> w(Shape{l.cout, l.cin, l.kernel, l.kernel});
    std::normal_distribution<double> dist(0.0, gain * std::sqrt(2.0 / (l.cin * l.kernel * l.kernel)));
    for (auto& v : w.vec()) v = static_cast<T>(dist(rng));
    params.add(l.name + ".weight", std::move(w));
    params.add(l.name + ".bias", Tensor<T>(Shape{l.cout}));
  }
}

// Parameters as seen by one tape. Names under a frozen prefix enter as constants.
template <class T>
struct Bound {
  Tape<T>& tape;
  const ParamSet<T>& params;
  std::vector<std::string> frozen_prefixes = {};

  Var<T> get(const std::string& name) const {
    bool trainable = true;
    for (const auto& p : frozen_prefixes)
      if (name.rfind(p, 0) == 0) trainable = false;
    return tape.param(name, params.at(name), trainable);
  }
};

template <class T>
Var<T> apply_layer(const Bound<T>& b, const ConvLayer& l, Var<T> x) {
  auto y = conv2d(x, b.get(l.name + ".weight"), b.get(l.name + ".bias"), l.spec);
  return l.act ? activation(y, *l.act) : y;
}

template <class T>
Var<T> apply_stack(const Bound<T>& b, const ConvStack& stack, Var<T> x) {
  for (const auto& l : stack) x = apply_layer(b, l, x);
  return x;
}

// Plain-tensor version of apply_stack, no tape involved.
template <class T>
Tensor<T> run_stack(const ParamSet<T>& params, const ConvStack& stack, Tensor<T> x) {
  for (const auto& l : stack) {
    x = conv2d(x, params.at(l.name + ".weight"), params.at(l.name + ".bias"), l.spec);
    if (l.act) x = activate(x, *l.act);
  }
  return x;
}

}  // namespace mvflow
