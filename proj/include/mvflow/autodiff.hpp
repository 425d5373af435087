#pragma once

// Reverse-mode differentiation over Tensor<T>. A Tape records every op as a
// node holding its value and a backward closure; Var is a handle into it.
// A tape created with record=false runs the same model code forward-only.

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "mvflow/tensor.hpp"
#include "mvflow/tensor_ops.hpp"

namespace mvflow {

template <class T>
class Tape;

template <class T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(*this); }
  const Shape& shape() const { return value().shape(); }
};

template <class T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, const Tensor<T>& grad_out)>;

  explicit Tape(bool record = true) : record_(record) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var<T> constant(Tensor<T> v) { return push(std::move(v), false, {}, ""); }

  // Registers a named leaf. Registering the same name twice returns the first handle,
  // so shared weights (e.g. an update block used every iteration) accumulate one gradient.
  Var<T> param(const std::string& name, const Tensor<T>& v, bool trainable = true) {
    if (auto it = param_ids_.find(name); it != param_ids_.end()) return {this, it->second};
    auto var = push(v, record_ && trainable, {}, name);
    param_ids_.emplace(name, var.id);
    return var;
  }

  // Adds an op output. fn is only kept when some input needs a gradient.
  Var<T> emit(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, "");
  }
  Var<T> emit(Tensor<T> value, const std::vector<Var<T>>& inputs, BackwardFn fn) {
    bool needs = false;
    if (record_)
      for (const auto& in : inputs) needs = needs || nodes_.at(in.id).needs_grad;
    return push(std::move(value), needs, needs ? std::move(fn) : BackwardFn{}, "");
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  bool needs_grad(Var<T> v) const { return nodes_.at(v.id).needs_grad; }

  // Called from backward closures.
  void accumulate(Var<T> v, const Tensor<T>& g) {
    auto& n = nodes_.at(v.id);
    if (!n.needs_grad) return;
    if (n.grad.empty()) {
      n.grad = g;
    } else {
      require_shape(g, n.grad.shape(), "gradient accumulation");
      for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }
  }

  void backward(Var<T> loss) {
    if (!record_) throw ConfigError("backward on a forward-only tape");
    const auto& lv = value(loss);
    if (lv.size() != 1) throw ShapeError("backward: loss must be a scalar, got " + shape_str(lv.shape()));
    for (auto& n : nodes_) n.grad = Tensor<T>();
    if (!nodes_.at(loss.id).needs_grad) return;
    nodes_[loss.id].grad = Tensor<T>(lv.shape(), T(1));
    for (int i = loss.id; i >= 0; --i) {
      auto& n = nodes_[i];
      if (n.grad.empty() || !n.back) continue;
      n.back(*this, n.grad);
    }
  }

  // Gradient for every registered parameter; unreachable or frozen parameters get zeros.
  std::map<std::string, Tensor<T>> param_grads() const {
    std::map<std::string, Tensor<T>> out;
    for (auto& [name, id] : param_ids_) {
      const auto& n = nodes_[id];
      out.emplace(name, n.grad.empty() ? Tensor<T>(n.value.shape()) : n.grad);
    }
    return out;
  }

  // Branch bookkeeping for gradient checking: ops with kinks (ReLU, |x|, bilinear
  // cell selection) fold their discrete decisions into a signature when enabled.
  void track_branches(bool on, T kink_eps = T(1e-7)) {
    track_ = on;
    kink_eps_ = kink_eps;
  }
  bool tracking_branches() const { return track_; }
  void note_branch(std::uint64_t bits) { signature_ = (signature_ ^ bits) * 0x100000001b3ULL; }
  void note_kink_distance(T d) {
    if (std::abs(d) < kink_eps_) ++near_kinks_;
  }
  std::uint64_t signature() const { return signature_; }
  std::size_t near_kink_count() const { return near_kinks_; }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackwardFn back;
    bool needs_grad = false;
    std::string name;
  };

  Var<T> push(Tensor<T> value, bool needs_grad, BackwardFn fn, std::string name) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), std::move(fn), needs_grad, std::move(name)});
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool record_;
  std::vector<Node> nodes_;
  std::unordered_map<std::string, int> param_ids_;
  bool track_ = false;
  T kink_eps_ = T(1e-7);
  std::uint64_t signature_ = 0xcbf29ce484222325ULL;
  std::size_t near_kinks_ = 0;
};

// ---- differentiable ops ------------------------------------------------------

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, const ConvSpec& spec) {
  auto& tape = *x.tape;
  auto out = conv2d(x.value(), w.value(), b.valid() ? b.value() : Tensor<T>(), spec);
  std::vector<Var<T>> inputs{x, w};
  if (b.valid()) inputs.push_back(b);
  return tape.emit(std::move(out), inputs, [x, w, b, spec](Tape<T>& t, const Tensor<T>& g) {
    auto grads = conv2d_backward(t.value(x), t.value(w), g, spec, t.needs_grad(x));
    if (t.needs_grad(x)) t.accumulate(x, grads.input);
    t.accumulate(w, grads.weight);
    if (b.valid()) t.accumulate(b, grads.bias);
  });
}

template <class T>
Var<T> relu(Var<T> x) {
  auto& tape = *x.tape;
  const auto& xv = x.value();
  if (tape.tracking_branches()) {
    std::uint64_t h = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      h = h * 31 + (xv[i] > T(0) ? 1 : 0);
      tape.note_kink_distance(xv[i]);
    }
    tape.note_branch(h);
  }
  return tape.emit(activate(xv, Activation::relu), {x}, [x](Tape<T>& t, const Tensor<T>& g) {
    const auto& xv = t.value(x);
    Tensor<T> gx(xv.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = xv[i] > T(0) ? g[i] : T(0);
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  auto& tape = *x.tape;
  auto out = activate(x.value(), Activation::sigmoid);
  auto y = out;
  return tape.emit(std::move(out), {x}, [x, y = std::move(y)](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(y.shape());
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * y[i] * (T(1) - y[i]);
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> activation(Var<T> x, Activation kind) {
  return kind == Activation::relu ? relu(x) : sigmoid(x);
}

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  require_shape(b.value(), a.value().shape(), "add");
  Tensor<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  require_finite(out, "add");
  return a.tape->emit(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, g);
    t.accumulate(b, g);
  });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  Tensor<T> out(a.value());
  for (auto& v : out.vec()) v *= s;
  require_finite(out, "scale");
  return a.tape->emit(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> ga(g);
    for (auto& v : ga.vec()) v *= s;
    t.accumulate(a, ga);
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_shape(b.value(), a.value().shape(), "mul");
  Tensor<T> out(a.value());
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  require_finite(out, "mul");
  return a.tape->emit(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    const auto& av = t.value(a);
    const auto& bv = t.value(b);
    Tensor<T> ga(g.shape()), gb(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] = g[i] * bv[i];
      gb[i] = g[i] * av[i];
    }
    t.accumulate(a, ga);
    t.accumulate(b, gb);
  });
}

template <class T>
Var<T> sum(Var<T> a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.tape->emit(Tensor<T>::scalar(s), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    t.accumulate(a, Tensor<T>(t.value(a).shape(), g[0]));
  });
}

// Σ_k coeffs[k] · scalars[k]
template <class T>
Var<T> weighted_sum(const std::vector<Var<T>>& scalars, const std::vector<T>& coeffs) {
  if (scalars.empty() || scalars.size() != coeffs.size()) throw ShapeError("weighted_sum: size mismatch");
  T s = 0;
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    if (scalars[k].value().size() != 1) throw ShapeError("weighted_sum: inputs must be scalars");
    s += coeffs[k] * scalars[k].value()[0];
  }
  return scalars[0].tape->emit(Tensor<T>::scalar(s), scalars, [scalars, coeffs](Tape<T>& t, const Tensor<T>& g) {
    for (std::size_t k = 0; k < scalars.size(); ++k) t.accumulate(scalars[k], Tensor<T>::scalar(g[0] * coeffs[k]));
  });
}

template <class T>
Var<T> concat(const std::vector<Var<T>>& parts) {
  std::vector<const Tensor<T>*> ptrs;
  for (auto& p : parts) ptrs.push_back(&p.value());
  auto out = concat_channels(ptrs);
  return parts.at(0).tape->emit(std::move(out), parts, [parts](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (auto& p : parts) {
      const auto& pv = t.value(p);
      if (t.needs_grad(p)) {
        Tensor<T> gp(pv.shape());
        std::copy(g.data().begin() + off, g.data().begin() + off + pv.size(), gp.data().begin());
        t.accumulate(p, gp);
      }
      off += pv.size();
    }
  });
}

// Channels [begin, begin+count) of a [C,H,W] tensor.
template <class T>
Var<T> slice_channels(Var<T> x, int begin, int count) {
  const auto& xv = x.value();
  require_rank(xv, 3, "slice_channels");
  if (begin < 0 || count < 1 || begin + count > xv.dim(0)) throw ShapeError("slice_channels: range out of bounds");
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out(Shape{count, xv.dim(1), xv.dim(2)});
  std::copy(xv.data().begin() + begin * plane, xv.data().begin() + (begin + count) * plane, out.data().begin());
  return x.tape->emit(std::move(out), {x}, [x, begin, plane](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x).shape());
    std::copy(g.data().begin(), g.data().end(), gx.data().begin() + begin * plane);
    t.accumulate(x, gx);
  });
}

template <class T>
Var<T> avg_pool(Var<T> x, int factor) {
  auto out = avg_pool(x.value(), factor);
  return x.tape->emit(std::move(out), {x}, [x, factor](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T> gx(t.value(x).shape());
    const T inv = T(1) / T(factor * factor);
    for (int c = 0; c < gx.dim(0); ++c)
      for (int y = 0; y < gx.dim(1); ++y)
        for (int xx = 0; xx < gx.dim(2); ++xx) gx.at(c, y, xx) = g.at(c, y / factor, xx / factor) * inv;
    t.accumulate(x, gx);
  });
}

}  // namespace mvflow
