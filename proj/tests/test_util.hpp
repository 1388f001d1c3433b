#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/dataset.hpp"
#include "ssc/params.hpp"
#include "ssc/tensor.hpp"

namespace ssc::testing {

inline Tensor<double> random_tensor(const Shape& shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (auto& v : t) v = uniform(rng, lo, hi);
  return t;
}

// Max relative error between the tape gradient of f at x and central
// differences, coordinate by coordinate.
inline double max_grad_error(const std::function<ag::Var<double>(ag::Var<double>)>& f, const Tensor<double>& x,
                             double eps = 1e-6) {
  ag::Tape<double> tape;
  auto in = tape.leaf(x);
  auto out = f(in);
  tape.backward(out);
  const Tensor<double> g = tape.grad(in.id).empty() ? Tensor<double>(x.shape(), 0.0) : tape.grad(in.id);
  auto eval = [&](const Tensor<double>& p) {
    ag::Tape<double> t2;
    return f(t2.leaf(p)).item();
  };
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor<double> up = x, dn = x;
    up[i] += eps;
    dn[i] -= eps;
    const double num = (eval(up) - eval(dn)) / (2 * eps);
    const double err = std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6});
    worst = std::max(worst, err);
  }
  return worst;
}

// Same check for a named parameter of a store; loss builds the graph through
// a Binder over the (possibly perturbed) store.
template <typename Store, typename Loss>
double max_param_grad_error(Store& store, const std::string& name, Loss loss, double eps = 1e-6) {
  store.zero_grad();
  {
    ag::Tape<double> tape;
    Binder<double> p(tape, store, true);
    tape.backward(loss(tape, p));
    p.accumulate_grads(1.0);
  }
  const Tensor<double> g = store.grad(name);
  auto eval = [&] {
    ag::Tape<double> tape;
    Binder<double> p(tape, store, false);
    return loss(tape, p).item();
  };
  double worst = 0;
  auto& w = store.value(name);
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double w0 = w[i];
    w[i] = w0 + eps;
    const double up = eval();
    w[i] = w0 - eps;
    const double dn = eval();
    w[i] = w0;
    const double num = (up - dn) / (2 * eps);
    worst = std::max(worst, std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6}));
  }
  return worst;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("ssc_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace ssc::testing
