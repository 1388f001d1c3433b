#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "ssc/dataset.hpp"
#include "ssc/model.hpp"
#include "ssc/superpixel.hpp"

namespace ssc {

// Finite-difference verification of the analytic gradients on a miniature
// model. Each probe compares the directional derivative <grad, d> against a
// central difference evaluated in extended precision at the same (already
// rounded) parameters. The network is piecewise smooth (ReLU, max pooling,
// DRS, L1), so the step is kept small enough not to cross a kink.

using RefScalar = long double;

struct GradCheckOptions {
  std::uint64_t seed = 7;
  double eps = 1e-6;
  int global_probes = 4;
};

struct ProbeResult {
  std::string loss;       // "toy", "cls", "p" or "a"
  std::string direction;  // parameter name or "global<i>"
  double analytic = 0, numeric = 0, rel_err = 0;
};

// |a - n| / max(|a|, |n|, floor). The floor covers directions whose true
// derivative is zero (scale invariances under normalisation, biases feeding a
// norm), where only rounding noise of the working precision remains.
inline double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

template <typename T>
constexpr double gradient_floor() {
  return sizeof(T) >= 8 ? 1e-6 : 1e-4;
}

struct GradCheckReport {
  std::string precision;
  std::size_t num_params = 0;
  std::vector<ProbeResult> probes;

  double max_rel(const std::string& loss) const {
    double m = 0;
    for (const auto& p : probes)
      if (p.loss == loss) m = std::max(m, p.rel_err);
    return m;
  }
  double worst() const {
    double m = 0;
    for (const auto& p : probes) m = std::max(m, p.rel_err);
    return m;
  }
};

struct MiniProblem {
  ModelSpec spec;
  LossNetworkSpec loss_net;
  Tensor<float> image;
  std::vector<int> labels;
  LabelRaster superpixels;
  LossSwitches switches;
};

// 16 x 16 image, two classes (both present), two backbone stages of widths
// 3 and 4 (stride 4), width-3 decoder with two up blocks.
inline MiniProblem mini_problem(std::uint64_t seed) {
  MiniProblem mp;
  mp.spec.backbone.widths = {3, 4};
  mp.spec.backbone.num_classes = 2;
  mp.spec.backbone.drs_stages = 2;
  mp.spec.drs_enabled = true;
  mp.spec.decoder = mp.spec.decoder_for(3);
  mp.loss_net.widths = {3, 4};

  std::mt19937_64 rng(seed);
  mp.image = Tensor<float>(Shape{3, 16, 16});
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool blob = (x - 5) * (x - 5) + (y - 6) * (y - 6) < 16 || (x > 9 && y > 8);
        mp.image.at(c, y, x) = static_cast<float>((blob ? 0.6 : 0.2) + 0.1 * c + 0.2 * uniform01(rng));
      }
  mp.labels = {1, 1};
  mp.superpixels = compute_superpixels(mp.image, SuperpixelParams{20.0, 4, 0.5, 8}).labels;
  mp.switches.modulation = ModulationConfig{0.3, 3, 2};
  return mp;
}

namespace gc_detail {

inline const std::vector<std::string>& loss_names() {
  static const std::vector<std::string> n{"cls", "p", "a"};
  return n;
}

template <typename T>
ag::Var<T> pick(const SampleTerms<T>& t, const std::string& loss) {
  if (loss == "cls") return t.l_cls;
  if (loss == "p") return t.l_p;
  return t.l_a;
}

using Direction = std::map<std::string, Tensor<RefScalar>>;

}  // namespace gc_detail

template <typename T>
GradCheckReport grad_check(const GradCheckOptions& opt = {}) {
  using gc_detail::Direction;
  GradCheckReport report;
  report.precision = sizeof(T) == 4 ? "float32" : "float64";
  std::mt19937_64 rng(opt.seed ^ 0x6a09e667f3bcc909ULL);

  // Quadratic toy: L = sum (1.5 theta + 0.2 - t)^2.
  {
    Tensor<T> theta(Shape{5}), target(Shape{5});
    for (std::size_t i = 0; i < 5; ++i) {
      theta[i] = static_cast<T>(uniform(rng, -1, 1));
      target[i] = static_cast<T>(uniform(rng, -1, 1));
    }
    ag::Tape<T> tape;
    auto th = tape.leaf(theta);
    auto loss = ag::sum_sq_to(ag::affine(th, T(1.5), T(0.2)), target);
    tape.backward(loss);
    auto f = [&](const std::vector<RefScalar>& v) {
      RefScalar s = 0;
      for (std::size_t i = 0; i < 5; ++i) {
        const RefScalar r = RefScalar(1.5) * v[i] + RefScalar(T(0.2)) - target[i];
        s += r * r;
      }
      return s;
    };
    for (std::size_t i = 0; i < 5; ++i) {
      std::vector<RefScalar> up(theta.begin(), theta.end()), dn = up;
      up[i] += opt.eps;
      dn[i] -= opt.eps;
      const double num = static_cast<double>((f(up) - f(dn)) / (2 * RefScalar(opt.eps)));
      const double ana = static_cast<double>(tape.grad(th.id)[i]);
      report.probes.push_back({"toy", "theta[" + std::to_string(i) + "]", ana, num, relative_error(ana, num, gradient_floor<T>())});
    }
  }

  const MiniProblem mp = mini_problem(opt.seed);
  Model<T> model = build_model<T>(mp.spec, opt.seed);
  LossNetwork<T> net(mp.loss_net);
  const Tensor<T> image = mp.image.template cast<T>();
  report.num_params = model.params.num_scalars();

  using R = RefScalar;
  ParamStore<R> pref = model.params.template cast<R>();
  LossNetwork<R> net_ref(mp.loss_net);
  net_ref.mutable_params() = net.params().template cast<R>();
  const Tensor<R> image_ref = mp.image.template cast<R>();

  // Directions: one Rademacher vector per parameter tensor, then a few dense ones.
  std::vector<std::pair<std::string, Direction>> directions;
  for (const auto& e : pref.entries()) {
    Direction d;
    for (const auto& o : pref.entries()) {
      Tensor<R> t(o.value.shape(), R(0));
      if (o.name == e.name)
        for (auto& v : t) v = uniform01(rng) < 0.5 ? R(-1) : R(1);
      d.emplace(o.name, std::move(t));
    }
    directions.emplace_back(e.name, std::move(d));
  }
  for (int g = 0; g < opt.global_probes; ++g) {
    Direction d;
    for (const auto& o : pref.entries()) {
      Tensor<R> t(o.value.shape());
      for (auto& v : t) v = uniform01(rng) < 0.5 ? R(-1) : R(1);
      d.emplace(o.name, std::move(t));
    }
    directions.emplace_back("global" + std::to_string(g), std::move(d));
  }

  for (const auto& loss : gc_detail::loss_names()) {
    // Analytic gradient at working precision; alignment targets recorded here
    // stay fixed for the finite differences.
    model.params.zero_grad();
    std::vector<Tensor<T>> targets;
    {
      ag::Tape<T> tape;
      Binder<T> binder(tape, model.params, true);
      SampleData<T> sd{&image, &mp.labels, &mp.superpixels};
      auto terms = sample_losses(tape, binder, mp.spec, &net, sd, mp.switches,
                                 static_cast<const std::vector<Tensor<T>>*>(nullptr), &targets);
      tape.backward(gc_detail::pick(terms, loss));
      binder.accumulate_grads();
    }
    std::vector<Tensor<R>> targets_ref;
    for (const auto& t : targets) targets_ref.push_back(t.template cast<R>());

    auto eval = [&]() {
      ag::Tape<R> tape;
      Binder<R> binder(tape, pref, false);
      SampleData<R> sd{&image_ref, &mp.labels, &mp.superpixels};
      auto terms = sample_losses(tape, binder, mp.spec, &net_ref, sd, mp.switches, &targets_ref,
                                 static_cast<std::vector<Tensor<R>>*>(nullptr));
      return gc_detail::pick(terms, loss).item();
    };

    for (const auto& [dname, d] : directions) {
      double ana = 0;
      for (const auto& e : model.params.entries()) {
        const auto& dv = d.at(e.name);
        for (std::size_t i = 0; i < dv.size(); ++i) ana += static_cast<double>(e.grad[i] * dv[i]);
      }
      auto shift = [&](R s) {
        for (auto& e : pref.entries()) {
          const auto& dv = d.at(e.name);
          for (std::size_t i = 0; i < dv.size(); ++i) e.value[i] += s * dv[i];
        }
      };
      const ParamStore<R> base = pref;
      shift(R(opt.eps));
      const R fp = eval();
      pref = base;
      shift(-R(opt.eps));
      const R fm = eval();
      pref = base;
      const double num = static_cast<double>((fp - fm) / (2 * R(opt.eps)));
      report.probes.push_back({loss, dname, ana, num, relative_error(ana, num, gradient_floor<T>())});
    }
  }
  model.params.zero_grad();
  return report;
}

}  // namespace ssc
