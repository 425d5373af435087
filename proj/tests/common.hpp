#pragma once

#include <random>

#include "mvflow/mvflow.hpp"

namespace mvtest {

template <class T = float>
mvflow::Tensor<T> random_tensor(const mvflow::Shape& s, std::mt19937_64& rng, double lo = -1, double hi = 1) {
  std::uniform_real_distribution<double> u(lo, hi);
  mvflow::Tensor<T> t(s);
  for (auto& v : t.vec()) v = static_cast<T>(u(rng));
  return t;
}

template <class T>
double max_abs_diff(const mvflow::Tensor<T>& a, const mvflow::Tensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

inline mvflow::SynthConfig synth_config(int w, int h, int block) {
  mvflow::SynthConfig c;
  c.width = w;
  c.height = h;
  c.block_size = block;
  return c;
}

// Small model config for fast tests.
inline mvflow::ModelConfig small_model() {
  mvflow::ModelConfig c;
  c.mvcm.encoder_widths = {4, 4, 4, 4, 4, 4};
  c.mvcm.ceb_width = 4;
  c.mvcm.ceb_dilations = {1, 2, 1, 1, 1, 1};
  c.mvcm.window_radius = 2;
  c.refiner.feature_scale = 2;
  c.refiner.feature_dim = 4;
  c.refiner.corr_radius = 1;
  c.refiner.update_width = 6;
  return c;
}

}  // namespace mvtest
