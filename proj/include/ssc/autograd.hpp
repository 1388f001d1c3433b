#pragma once

// Minimal reverse-mode differentiation over CHW tensors. A Tape records every
// op of one forward pass; backward() replays the recorded closures in reverse
// creation order. Nodes whose inputs need no gradient store no closure, so a
// pass over frozen weights (loss network, inference) costs only the forward.

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "ssc/errors.hpp"
#include "ssc/tensor.hpp"

namespace ssc::ag {

template <typename T>
class Tape;

template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<T>& value() const { return tape->value(id); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape->requires_grad(id); }
  // Gradient accumulated by the last backward(); empty when none reached it.
  const Tensor<T>& grad() const { return tape->grad(id); }
  T item() const { return value()[0]; }
};

template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> constant(Tensor<T> v) { return push(std::move(v), nullptr, false, nullptr); }
  Var<T> leaf(Tensor<T> v) { return push(std::move(v), nullptr, true, nullptr); }
  // Leaf referencing caller-owned storage; the tensor must outlive the tape.
  Var<T> external_leaf(const Tensor<T>& v, bool requires_grad) {
    return push(Tensor<T>(), &v, requires_grad, nullptr);
  }

  // Records the result of an op. The closure is dropped when no input needs a
  // gradient.
  Var<T> record(Tensor<T> v, std::initializer_list<Var<T>> inputs, Backward bw) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || requires_grad(in.id);
    return push(std::move(v), nullptr, rg, rg ? std::move(bw) : nullptr);
  }
  Var<T> record(Tensor<T> v, const std::vector<Var<T>>& inputs, Backward bw) {
    bool rg = false;
    for (const auto& in : inputs) rg = rg || requires_grad(in.id);
    return push(std::move(v), nullptr, rg, rg ? std::move(bw) : nullptr);
  }

  const Tensor<T>& value(int id) const {
    const Node& n = *nodes_[static_cast<std::size_t>(id)];
    return n.external ? *n.external : n.own;
  }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)]->requires_grad; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)]->grad; }

  // Gradient slot for accumulation, zero-initialised on first touch.
  Tensor<T>& grad_slot(int id) {
    Node& n = *nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty()) n.grad = Tensor<T>(value(id).shape(), T(0));
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  void backward(Var<T> root, T seed = T(1)) {
    if (root.tape != this) throw ArgumentError("backward: variable from another tape");
    if (value(root.id).size() != 1) throw ArgumentError("backward: root must be a scalar");
    if (!requires_grad(root.id)) return;
    grad_slot(root.id)[0] += seed;
    for (int id = root.id; id >= 0; --id) {
      Node& n = *nodes_[static_cast<std::size_t>(id)];
      if (n.backward && !n.grad.empty()) n.backward(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* external = nullptr;
    bool requires_grad = false;
    Backward backward;
    Tensor<T> grad;
  };

  Var<T> push(Tensor<T> v, const Tensor<T>* ext, bool rg, Backward bw) {
    auto n = std::make_unique<Node>();
    n->own = std::move(v);
    n->external = ext;
    n->requires_grad = rg;
    n->backward = std::move(bw);
    nodes_.push_back(std::move(n));
    return Var<T>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<std::unique_ptr<Node>> nodes_;
};

// ---------------------------------------------------------------------------
// Elementwise and reduction ops.

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  a.value().check_same(b.value(), "add");
  Tensor<T> out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad_slot(a.id) += g;
    if (t.requires_grad(b.id)) t.grad_slot(b.id) += g;
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  a.value().check_same(b.value(), "sub");
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    if (t.requires_grad(a.id)) t.grad_slot(a.id) += g;
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

// y = scale * x + shift
template <typename T>
Var<T> affine(Var<T> x, T scale, T shift = T(0)) {
  Tensor<T> out = x.value();
  for (auto& v : out) v = scale * v + shift;
  return x.tape->record(std::move(out), {x}, [x, scale](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += scale * g[i];
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out) v = v > T(0) ? v : T(0);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xv[i] > T(0)) gx[i] += g[i];
  });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out) v = std::tanh(v);
  return x.tape->record(std::move(out), {x}, [x](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& y = t.value(self);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (T(1) - y[i] * y[i]);
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  acc_t<T> s = 0;
  for (T v : x.value()) s += v;
  return x.tape->record(Tensor<T>::scalar(static_cast<T>(s)), {x}, [x](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    for (auto& v : t.grad_slot(x.id)) v += g;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  return affine(sum(x), T(1) / static_cast<T>(x.value().size()));
}

// Sum of scalars with fixed weights: sum_i w_i * terms_i.
template <typename T>
Var<T> weighted_sum(const std::vector<Var<T>>& terms, const std::vector<T>& weights) {
  if (terms.empty() || terms.size() != weights.size())
    throw ArgumentError("weighted_sum: terms/weights mismatch");
  acc_t<T> s = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    if (terms[i].value().size() != 1) throw ArgumentError("weighted_sum: terms must be scalars");
    s += static_cast<acc_t<T>>(weights[i]) * terms[i].item();
  }
  return terms.front().tape->record(Tensor<T>::scalar(static_cast<T>(s)), terms,
                                    [terms, weights](Tape<T>& t, int self) {
                                      const T g = t.grad(self)[0];
                                      for (std::size_t i = 0; i < terms.size(); ++i)
                                        if (t.requires_grad(terms[i].id))
                                          t.grad_slot(terms[i].id)[0] += weights[i] * g;
                                    });
}

// mean |a - b| over all elements.
template <typename T>
Var<T> mean_abs_diff(Var<T> a, Var<T> b) {
  a.value().check_same(b.value(), "mean_abs_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  acc_t<T> s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += std::abs(av[i] - bv[i]);
  const T n = static_cast<T>(av.size());
  return a.tape->record(Tensor<T>::scalar(static_cast<T>(s / n)), {a, b}, [a, b, n](Tape<T>& t, int self) {
    const T g = t.grad(self)[0] / n;
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    for (int side = 0; side < 2; ++side) {
      const int id = side == 0 ? a.id : b.id;
      if (!t.requires_grad(id)) continue;
      auto& gs = t.grad_slot(id);
      const T dir = side == 0 ? T(1) : T(-1);
      for (std::size_t i = 0; i < av.size(); ++i) {
        const T d = av[i] - bv[i];
        if (d > T(0)) gs[i] += dir * g;
        else if (d < T(0)) gs[i] -= dir * g;
      }
    }
  });
}

// mean (a - b)^2 over all elements.
template <typename T>
Var<T> mean_sq_diff(Var<T> a, Var<T> b) {
  a.value().check_same(b.value(), "mean_sq_diff");
  const auto& av = a.value();
  const auto& bv = b.value();
  acc_t<T> s = 0;
  for (std::size_t i = 0; i < av.size(); ++i) s += static_cast<acc_t<T>>(av[i] - bv[i]) * (av[i] - bv[i]);
  const T n = static_cast<T>(av.size());
  return a.tape->record(Tensor<T>::scalar(static_cast<T>(s / n)), {a, b}, [a, b, n](Tape<T>& t, int self) {
    const T g = T(2) * t.grad(self)[0] / n;
    const auto& av = t.value(a.id);
    const auto& bv = t.value(b.id);
    if (t.requires_grad(a.id)) {
      auto& ga = t.grad_slot(a.id);
      for (std::size_t i = 0; i < av.size(); ++i) ga[i] += g * (av[i] - bv[i]);
    }
    if (t.requires_grad(b.id)) {
      auto& gb = t.grad_slot(b.id);
      for (std::size_t i = 0; i < av.size(); ++i) gb[i] -= g * (av[i] - bv[i]);
    }
  });
}

// sum (x - target)^2 with a constant target.
template <typename T>
Var<T> sum_sq_to(Var<T> x, const Tensor<T>& target) {
  x.value().check_same(target, "sum_sq_to");
  const auto& xv = x.value();
  acc_t<T> s = 0;
  for (std::size_t i = 0; i < xv.size(); ++i) s += static_cast<acc_t<T>>(xv[i] - target[i]) * (xv[i] - target[i]);
  return x.tape->record(Tensor<T>::scalar(static_cast<T>(s)), {x}, [x, target](Tape<T>& t, int self) {
    const T g = T(2) * t.grad(self)[0];
    const auto& xv = t.value(x.id);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < xv.size(); ++i) gx[i] += g * (xv[i] - target[i]);
  });
}

// Channel c of a CHW tensor as a 1xHxW tensor.
template <typename T>
Var<T> channel(Var<T> x, int c) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || c < 0 || c >= xv.dim(0)) throw ArgumentError("channel: index out of range");
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out(Shape{1, xv.dim(1), xv.dim(2)});
  std::copy_n(xv.data() + c * plane, plane, out.data());
  return x.tape->record(std::move(out), {x}, [x, c, plane](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t i = 0; i < plane; ++i) gx[c * plane + i] += g[i];
  });
}

}  // namespace ssc::ag
