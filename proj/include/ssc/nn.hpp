#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

#include "ssc/autograd.hpp"
#include "ssc/tensor.hpp"

namespace ssc::nn {

using ag::Tape;
using ag::Var;

namespace detail {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

struct ConvGeom {
  int channels, in_h, in_w, kernel, stride, pad, out_h, out_w;
};

// cols[(c*K + ky)*K + kx][oy*out_w + ox] = src[c][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* src, const ConvGeom& g, T* cols) {
  const int ohw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    const T* plane = src + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ohw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= g.in_h) {
            std::fill_n(dst, g.out_w, T(0));
            continue;
          }
          const T* srow = plane + static_cast<std::size_t>(iy) * g.in_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            dst[ox] = (ix >= 0 && ix < g.in_w) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add columns back onto the source grid.
template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* dst) {
  const int ohw = g.out_h * g.out_w;
  for (int c = 0; c < g.channels; ++c) {
    T* plane = dst + static_cast<std::size_t>(c) * g.in_h * g.in_w;
    for (int ky = 0; ky < g.kernel; ++ky) {
      for (int kx = 0; kx < g.kernel; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * ohw;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          T* drow = plane + static_cast<std::size_t>(iy) * g.in_w;
          const T* srow = row + oy * g.out_w;
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.in_w) drow[ix] += srow[ox];
          }
        }
      }
    }
  }
}

// Bilinear sampling taps for one axis (half-pixel centres, edge clamped).
struct Taps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

inline Taps bilinear_taps(int in, int out) {
  Taps t;
  t.lo.resize(static_cast<std::size_t>(out));
  t.hi.resize(static_cast<std::size_t>(out));
  t.frac.resize(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const int i1 = std::min(i0 + 1, in - 1);
    t.lo[static_cast<std::size_t>(o)] = i0;
    t.hi[static_cast<std::size_t>(o)] = i1;
    t.frac[static_cast<std::size_t>(o)] = src - i0;
  }
  return t;
}

}  // namespace detail

// 2-D convolution. x: Cin x H x W, w: Cout x Cin x K x K, bias: Cout (optional).
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(1) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ArgumentError("conv2d: input " + shape_str(xv.shape()) + " incompatible with weight " +
                        shape_str(wv.shape()));
  }
  const int cout = wv.dim(0), k = wv.dim(2);
  detail::ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), k, stride, pad, 0, 0};
  g.out_h = (g.in_h + 2 * pad - k) / stride + 1;
  g.out_w = (g.in_w + 2 * pad - k) / stride + 1;
  if (g.out_h <= 0 || g.out_w <= 0) throw ArgumentError("conv2d: empty output");
  const int ckk = g.channels * k * k, ohw = g.out_h * g.out_w;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(ckk) * ohw);
  detail::im2col(xv.data(), g, cols->data());
  Tensor<T> out(Shape{cout, g.out_h, g.out_w});
  detail::MapMat<T> y(out.data(), cout, ohw);
  y.noalias() = detail::CMapMat<T>(wv.data(), cout, ckk) * detail::CMapMat<T>(cols->data(), ckk, ohw);
  const bool has_bias = bias.valid();
  if (has_bias) {
    const auto& bv = bias.value();
    for (int c = 0; c < cout; ++c) y.row(c).array() += bv[static_cast<std::size_t>(c)];
  }

  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape->record(std::move(out), inputs, [x, w, bias, has_bias, g, cols, cout, ckk, ohw](Tape<T>& t, int self) {
    detail::CMapMat<T> gy(t.grad(self).data(), cout, ohw);
    if (t.requires_grad(w.id)) {
      detail::MapMat<T>(t.grad_slot(w.id).data(), cout, ckk).noalias() +=
          gy * detail::CMapMat<T>(cols->data(), ckk, ohw).transpose();
    }
    if (has_bias && t.requires_grad(bias.id)) {
      auto& gb = t.grad_slot(bias.id);
      for (int c = 0; c < cout; ++c) gb[static_cast<std::size_t>(c)] += static_cast<T>(gy.row(c).template cast<acc_t<T>>().sum());
    }
    if (t.requires_grad(x.id)) {
      std::vector<T> gcols(static_cast<std::size_t>(ckk) * ohw);
      detail::MapMat<T>(gcols.data(), ckk, ohw).noalias() =
          detail::CMapMat<T>(t.value(w.id).data(), cout, ckk).transpose() * gy;
      detail::col2im(gcols.data(), g, t.grad_slot(x.id).data());
    }
  });
}

// Transposed convolution. x: Cin x H x W, w: Cin x Cout x K x K.
// Output side = (H - 1) * stride - 2 * pad + K.
template <typename T>
Var<T> conv_transpose2d(Var<T> x, Var<T> w, Var<T> bias, int stride, int pad) {
  const auto& xv = x.value();
  const auto& wv = w.value();
  if (xv.rank() != 3 || wv.rank() != 4 || wv.dim(0) != xv.dim(0) || wv.dim(2) != wv.dim(3)) {
    throw ArgumentError("conv_transpose2d: input " + shape_str(xv.shape()) +
                        " incompatible with weight " + shape_str(wv.shape()));
  }
  const int cin = xv.dim(0), cout = wv.dim(1), k = wv.dim(2);
  const int oh = (xv.dim(1) - 1) * stride - 2 * pad + k;
  const int ow = (xv.dim(2) - 1) * stride - 2 * pad + k;
  // Geometry of the forward conv that maps the output grid back onto x.
  detail::ConvGeom g{cout, oh, ow, k, stride, pad, xv.dim(1), xv.dim(2)};
  const int ckk = cout * k * k, hw = xv.dim(1) * xv.dim(2);

  std::vector<T> cols(static_cast<std::size_t>(ckk) * hw);
  detail::MapMat<T>(cols.data(), ckk, hw).noalias() =
      detail::CMapMat<T>(wv.data(), cin, ckk).transpose() * detail::CMapMat<T>(xv.data(), cin, hw);
  Tensor<T> out(Shape{cout, oh, ow});
  detail::col2im(cols.data(), g, out.data());
  const bool has_bias = bias.valid();
  if (has_bias) {
    const auto& bv = bias.value();
    const std::size_t plane = static_cast<std::size_t>(oh) * ow;
    for (int c = 0; c < cout; ++c)
      for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] += bv[static_cast<std::size_t>(c)];
  }

  std::vector<Var<T>> inputs{x, w};
  if (has_bias) inputs.push_back(bias);
  return x.tape->record(std::move(out), inputs, [x, w, bias, has_bias, g, cin, cout, ckk, hw](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    if (has_bias && t.requires_grad(bias.id)) {
      auto& gb = t.grad_slot(bias.id);
      const std::size_t plane = static_cast<std::size_t>(g.in_h) * g.in_w;
      for (int c = 0; c < cout; ++c) {
        acc_t<T> s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += gy[c * plane + i];
        gb[static_cast<std::size_t>(c)] += static_cast<T>(s);
      }
    }
    if (!t.requires_grad(x.id) && !t.requires_grad(w.id)) return;
    std::vector<T> gcols(static_cast<std::size_t>(ckk) * hw);
    detail::im2col(gy.data(), g, gcols.data());
    detail::CMapMat<T> gc(gcols.data(), ckk, hw);
    if (t.requires_grad(x.id)) {
      detail::MapMat<T>(t.grad_slot(x.id).data(), cin, hw).noalias() +=
          detail::CMapMat<T>(t.value(w.id).data(), cin, ckk) * gc;
    }
    if (t.requires_grad(w.id)) {
      detail::MapMat<T>(t.grad_slot(w.id).data(), cin, ckk).noalias() +=
          detail::CMapMat<T>(t.value(x.id).data(), cin, hw) * gc.transpose();
    }
  });
}

// Group normalisation with per-channel affine. groups = 1 normalises over the
// whole C x H x W sample (layer norm); groups = C normalises each channel
// (instance norm).
template <typename T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps = T(1e-5)) {
  const auto& xv = x.value();
  if (xv.rank() != 3 || xv.dim(0) % groups != 0) throw ArgumentError("group_norm: bad shape");
  const int c = xv.dim(0);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  const int cpg = c / groups;
  const std::size_t n = plane * cpg;
  auto xhat = std::make_shared<std::vector<T>>(xv.size());
  auto inv_std = std::make_shared<std::vector<T>>(static_cast<std::size_t>(groups));
  Tensor<T> out(xv.shape());
  const auto& gv = gamma.value();
  const auto& bv = beta.value();
  for (int gi = 0; gi < groups; ++gi) {
    const std::size_t off = static_cast<std::size_t>(gi) * n;
    using A = acc_t<T>;
    A m = 0;
    for (std::size_t i = 0; i < n; ++i) m += xv[off + i];
    m /= static_cast<A>(n);
    A var = 0;
    for (std::size_t i = 0; i < n; ++i) var += (xv[off + i] - m) * (xv[off + i] - m);
    var /= static_cast<A>(n);
    const A is = A(1) / std::sqrt(var + static_cast<A>(eps));
    (*inv_std)[static_cast<std::size_t>(gi)] = static_cast<T>(is);
    for (std::size_t i = 0; i < n; ++i) (*xhat)[off + i] = static_cast<T>((xv[off + i] - m) * is);
  }
  for (int ch = 0; ch < c; ++ch)
    for (std::size_t i = 0; i < plane; ++i) {
      const std::size_t k = ch * plane + i;
      out[k] = (*xhat)[k] * gv[static_cast<std::size_t>(ch)] + bv[static_cast<std::size_t>(ch)];
    }
  return x.tape->record(std::move(out), {x, gamma, beta},
                        [x, gamma, beta, groups, c, plane, n, xhat, inv_std](Tape<T>& t, int self) {
    const auto& gy = t.grad(self);
    const auto& gv = t.value(gamma.id);
    if (t.requires_grad(gamma.id) || t.requires_grad(beta.id)) {
      for (int ch = 0; ch < c; ++ch) {
        acc_t<T> sg = 0, sb = 0;
        for (std::size_t i = 0; i < plane; ++i) {
          sg += static_cast<acc_t<T>>(gy[ch * plane + i]) * (*xhat)[ch * plane + i];
          sb += gy[ch * plane + i];
        }
        if (t.requires_grad(gamma.id)) t.grad_slot(gamma.id)[static_cast<std::size_t>(ch)] += static_cast<T>(sg);
        if (t.requires_grad(beta.id)) t.grad_slot(beta.id)[static_cast<std::size_t>(ch)] += static_cast<T>(sb);
      }
    }
    if (!t.requires_grad(x.id)) return;
    auto& gx = t.grad_slot(x.id);
    const int cpg = c / groups;
    std::vector<acc_t<T>> gxh(n);
    for (int gi = 0; gi < groups; ++gi) {
      const std::size_t off = static_cast<std::size_t>(gi) * n;
      using A = acc_t<T>;
      A mean_g = 0, mean_gx = 0;
      for (int cc = 0; cc < cpg; ++cc) {
        const int ch = gi * cpg + cc;
        for (std::size_t i = 0; i < plane; ++i) {
          const std::size_t k = ch * plane + i;
          const A v = static_cast<A>(gy[k]) * gv[static_cast<std::size_t>(ch)];
          gxh[k - off] = v;
          mean_g += v;
          mean_gx += v * (*xhat)[k];
        }
      }
      mean_g /= static_cast<A>(n);
      mean_gx /= static_cast<A>(n);
      const A is = (*inv_std)[static_cast<std::size_t>(gi)];
      for (std::size_t i = 0; i < n; ++i) gx[off + i] += static_cast<T>(is * (gxh[i] - mean_g - (*xhat)[off + i] * mean_gx));
    }
  });
}

// 2x2 max pooling, stride 2. Ties route the gradient to the first maximum.
template <typename T>
Var<T> max_pool2(Var<T> x) {
  const auto& xv = x.value();
  const int c = xv.dim(0), h = xv.dim(1) / 2, w = xv.dim(2) / 2;
  Tensor<T> out(Shape{c, h, w});
  auto arg = std::make_shared<std::vector<std::size_t>>(out.size());
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) {
        std::size_t best = 0;
        T bv = -std::numeric_limits<T>::infinity();
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t k = (static_cast<std::size_t>(ch) * xv.dim(1) + 2 * y + dy) * xv.dim(2) + 2 * xx + dx;
            if (xv[k] > bv) {
              bv = xv[k];
              best = k;
            }
          }
        const std::size_t o = (static_cast<std::size_t>(ch) * h + y) * w + xx;
        out[o] = bv;
        (*arg)[o] = best;
      }
  return x.tape->record(std::move(out), {x}, [x, arg](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    for (std::size_t o = 0; o < g.size(); ++o) gx[(*arg)[o]] += g[o];
  });
}

// 2x2 average pooling, stride 2.
template <typename T>
Var<T> avg_pool2(Var<T> x) {
  const auto& xv = x.value();
  const int c = xv.dim(0), ih = xv.dim(1), iw = xv.dim(2), h = ih / 2, w = iw / 2;
  Tensor<T> out(Shape{c, h, w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        out.at(ch, y, xx) = T(0.25) * (xv.at(ch, 2 * y, 2 * xx) + xv.at(ch, 2 * y, 2 * xx + 1) +
                                       xv.at(ch, 2 * y + 1, 2 * xx) + xv.at(ch, 2 * y + 1, 2 * xx + 1));
  return x.tape->record(std::move(out), {x}, [x, c, h, w](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    const int iw = 2 * w, ih = 2 * h;
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx) {
          const T v = T(0.25) * g[(static_cast<std::size_t>(ch) * h + y) * w + xx];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx)
              gx[(static_cast<std::size_t>(ch) * ih + 2 * y + dy) * iw + 2 * xx + dx] += v;
        }
  });
}

// Discriminative region suppression: per channel k, min(x, delta * max(x_k)).
// The bound depends on the channel maximum, so clipped entries pass their
// gradient to the (first) argmax.
template <typename T>
Var<T> drs_suppress(Var<T> x, T delta = T(0.55)) {
  const auto& xv = x.value();
  if (xv.rank() != 3) throw ArgumentError("drs_suppress: expected C x H x W");
  const int c = xv.dim(0);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out = xv;
  auto argmax = std::make_shared<std::vector<std::size_t>>(static_cast<std::size_t>(c));
  for (int ch = 0; ch < c; ++ch) {
    const std::size_t off = ch * plane;
    std::size_t best = off;
    for (std::size_t i = 1; i < plane; ++i)
      if (xv[off + i] > xv[best]) best = off + i;
    (*argmax)[static_cast<std::size_t>(ch)] = best;
    const T bound = delta * xv[best];
    for (std::size_t i = 0; i < plane; ++i) out[off + i] = std::min(xv[off + i], bound);
  }
  return x.tape->record(std::move(out), {x}, [x, c, plane, argmax, delta](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    auto& gx = t.grad_slot(x.id);
    for (int ch = 0; ch < c; ++ch) {
      const std::size_t off = ch * plane;
      const std::size_t am = (*argmax)[static_cast<std::size_t>(ch)];
      const T bound = delta * xv[am];
      acc_t<T> to_max = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        if (xv[off + i] < bound) gx[off + i] += g[off + i];
        else to_max += g[off + i];
      }
      gx[am] += delta * static_cast<T>(to_max);
    }
  });
}

// Global average pooling: C x H x W -> C.
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const auto& xv = x.value();
  const int c = xv.dim(0);
  const std::size_t plane = static_cast<std::size_t>(xv.dim(1)) * xv.dim(2);
  Tensor<T> out(Shape{c});
  for (int ch = 0; ch < c; ++ch) {
    acc_t<T> s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += xv[ch * plane + i];
    out[static_cast<std::size_t>(ch)] = static_cast<T>(s / static_cast<acc_t<T>>(plane));
  }
  return x.tape->record(std::move(out), {x}, [x, c, plane](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    for (int ch = 0; ch < c; ++ch) {
      const T v = g[static_cast<std::size_t>(ch)] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gx[ch * plane + i] += v;
    }
  });
}

// Bilinear resize of every channel (half-pixel centres, clamped borders).
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& x, int out_h, int out_w) {
  const int c = x.dim(0), ih = x.dim(1), iw = x.dim(2);
  const auto ty = detail::bilinear_taps(ih, out_h);
  const auto tx = detail::bilinear_taps(iw, out_w);
  Tensor<T> out(Shape{c, out_h, out_w});
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y < out_h; ++y) {
      const T fy = static_cast<T>(ty.frac[static_cast<std::size_t>(y)]);
      const int y0 = ty.lo[static_cast<std::size_t>(y)], y1 = ty.hi[static_cast<std::size_t>(y)];
      for (int xx = 0; xx < out_w; ++xx) {
        const T fx = static_cast<T>(tx.frac[static_cast<std::size_t>(xx)]);
        const int x0 = tx.lo[static_cast<std::size_t>(xx)], x1 = tx.hi[static_cast<std::size_t>(xx)];
        const T top = x.at(ch, y0, x0) * (T(1) - fx) + x.at(ch, y0, x1) * fx;
        const T bot = x.at(ch, y1, x0) * (T(1) - fx) + x.at(ch, y1, x1) * fx;
        out.at(ch, y, xx) = top * (T(1) - fy) + bot * fy;
      }
    }
  return out;
}

template <typename T>
Var<T> upsample_bilinear(Var<T> x, int out_h, int out_w) {
  Tensor<T> out = resize_bilinear(x.value(), out_h, out_w);
  return x.tape->record(std::move(out), {x}, [x, out_h, out_w](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    auto& gx = t.grad_slot(x.id);
    const int c = gx.dim(0), ih = gx.dim(1), iw = gx.dim(2);
    const auto ty = detail::bilinear_taps(ih, out_h);
    const auto tx = detail::bilinear_taps(iw, out_w);
    for (int ch = 0; ch < c; ++ch)
      for (int y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ty.frac[static_cast<std::size_t>(y)]);
        const int y0 = ty.lo[static_cast<std::size_t>(y)], y1 = ty.hi[static_cast<std::size_t>(y)];
        for (int xx = 0; xx < out_w; ++xx) {
          const T fx = static_cast<T>(tx.frac[static_cast<std::size_t>(xx)]);
          const int x0 = tx.lo[static_cast<std::size_t>(xx)], x1 = tx.hi[static_cast<std::size_t>(xx)];
          const T v = g[(static_cast<std::size_t>(ch) * out_h + y) * out_w + xx];
          gx.at(ch, y0, x0) += v * (T(1) - fy) * (T(1) - fx);
          gx.at(ch, y0, x1) += v * (T(1) - fy) * fx;
          gx.at(ch, y1, x0) += v * fy * (T(1) - fx);
          gx.at(ch, y1, x1) += v * fy * fx;
        }
      }
  });
}

// relu(x) / max(relu(x)) over the whole tensor; the all-zero map when no entry
// is positive.
template <typename T>
Tensor<T> normalize_cam(const Tensor<T>& x) {
  Tensor<T> out(x.shape(), T(0));
  T m = T(0);
  for (T v : x) m = std::max(m, v);
  if (!(m > T(0))) return out;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] / m : T(0);
  return out;
}

template <typename T>
Var<T> normalize_cam(Var<T> x) {
  const auto& xv = x.value();
  std::size_t am = 0;
  for (std::size_t i = 1; i < xv.size(); ++i)
    if (xv[i] > xv[am]) am = i;
  const T m = xv[am];
  Tensor<T> out = normalize_cam(xv);
  if (!(m > T(0))) return x.tape->record(std::move(out), {x}, nullptr);
  return x.tape->record(std::move(out), {x}, [x, am, m](Tape<T>& t, int self) {
    const auto& g = t.grad(self);
    const auto& xv = t.value(x.id);
    const auto& y = t.value(self);
    auto& gx = t.grad_slot(x.id);
    acc_t<T> gm = 0;
    for (std::size_t i = 0; i < xv.size(); ++i) {
      if (xv[i] > T(0)) {
        gx[i] += g[i] / m;
        gm -= static_cast<acc_t<T>>(g[i]) * y[i] / m;
      }
    }
    gx[am] += static_cast<T>(gm);
  });
}

// Replace every entry by the mean of its region. x: 1 x h x w, labels h x w.
template <typename T>
Tensor<T> regional_average(const Tensor<T>& x, const LabelRaster& labels) {
  if (x.rank() != 3 || x.dim(0) != 1 || x.dim(1) != labels.height || x.dim(2) != labels.width) {
    throw ArgumentError("regional_average: map " + shape_str(x.shape()) + " vs labels " +
                        std::to_string(labels.height) + "x" + std::to_string(labels.width));
  }
  const int k = labels.data.empty() ? 0 : *std::max_element(labels.data.begin(), labels.data.end()) + 1;
  std::vector<acc_t<T>> sums(static_cast<std::size_t>(k), 0);
  std::vector<int> counts(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = static_cast<std::size_t>(labels.data[i]);
    sums[r] += x[i];
    ++counts[r];
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const auto r = static_cast<std::size_t>(labels.data[i]);
    out[i] = static_cast<T>(sums[r] / counts[r]);
  }
  return out;
}

template <typename T>
Var<T> regional_average(Var<T> x, const LabelRaster& labels) {
  Tensor<T> out = regional_average(x.value(), labels);
  return x.tape->record(std::move(out), {x}, [x, labels](Tape<T>& t, int self) {
    // d out_j / d x_i = 1/|S| for i, j in the same region, so the input
    // gradient is the regional mean of the output gradient.
    Tensor<T> gavg = regional_average(t.grad(self), labels);
    t.grad_slot(x.id) += gavg;
  });
}

// Multi-label soft margin loss over logits q and binary labels y:
// -(1/C) sum_c [ y log s(q) + (1 - y) log(1 - s(q)) ], logs clamped at 1e-12.
template <typename T>
T log_sigmoid(T q) {
  return q >= T(0) ? -std::log1p(std::exp(-q)) : q - std::log1p(std::exp(q));
}

template <typename T>
Var<T> soft_margin_loss(Var<T> q, const std::vector<int>& y) {
  const auto& qv = q.value();
  if (qv.size() != y.size()) throw ArgumentError("soft_margin_loss: logits/labels size mismatch");
  const T floor = std::log(T(1e-12));
  const auto c = static_cast<T>(y.size());
  T s = T(0);
  for (std::size_t i = 0; i < y.size(); ++i) {
    const T lp = std::max(log_sigmoid(qv[i]), floor);
    const T ln = std::max(log_sigmoid(-qv[i]), floor);
    s += y[i] ? lp : ln;
  }
  return q.tape->record(Tensor<T>::scalar(-s / c), {q}, [q, y, c, floor](Tape<T>& t, int self) {
    const T g = t.grad(self)[0];
    const auto& qv = t.value(q.id);
    auto& gq = t.grad_slot(q.id);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const T sig = T(1) / (T(1) + std::exp(-qv[i]));
      if (y[i]) {
        if (log_sigmoid(qv[i]) > floor) gq[i] += g * -(T(1) - sig) / c;
      } else {
        if (log_sigmoid(-qv[i]) > floor) gq[i] += g * sig / c;
      }
    }
  });
}

}  // namespace ssc::nn
