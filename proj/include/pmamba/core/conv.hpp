// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>
#include <vector>

#include "pmamba/core/ops.hpp"

namespace pmamba {

struct Conv2dOptions {
  Index stride = 1;
  Index padding = 0;
  Index groups = 1;
};

namespace detail {

struct ConvGeom {
  Index batch, cin, h, w, cout, k, stride, pad, groups, oh, ow;
  Index cin_g() const { return cin / groups; }
  Index cout_g() const { return cout / groups; }
  Index col_rows() const { return cin_g() * k * k; }
  Index col_cols() const { return oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// cols[(c*k + ky)*k + kx, oy*ow + ox] = x[c, oy*s - p + ky, ox*s - p + kx]
template <class T>
void im2col(const T* x, const ConvGeom& g, T* cols) {
  const Index n = g.col_cols();
  for (Index c = 0; c < g.cin_g(); ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((c * g.k + ky) * g.k + kx) * n;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            row[oy * g.ow + ox] = (iy >= 0 && iy < g.h && ix >= 0 && ix < g.w) ? x[(c * g.h + iy) * g.w + ix] : T{0};
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, const ConvGeom& g, T* dx) {
  const Index n = g.col_cols();
  for (Index c = 0; c < g.cin_g(); ++c)
    for (Index ky = 0; ky < g.k; ++ky)
      for (Index kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((c * g.k + ky) * g.k + kx) * n;
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.h) continue;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kx;
            if (ix >= 0 && ix < g.w) dx[(c * g.h + iy) * g.w + ix] += row[oy * g.ow + ox];
          }
        }
      }
}

}  // namespace detail

/// 2D cross-correlation over [C,H,W] or [B,C,H,W]. Kernel sizes 1 and 3;
/// output size floor((H + 2p - k) / stride) + 1.
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias = {},
                 Conv2dOptions opt = {}) {
  const Index axis = detail::channel_axis(input.shape());
  if (weight.rank() != 4 || weight.dim(2) != weight.dim(3)) throw ShapeError("conv2d weight must be [Cout,Cin/g,k,k]");
  detail::ConvGeom g{};
  g.batch = axis == 1 ? input.dim(0) : 1;
  g.cin = input.dim(axis);
  g.h = input.dim(axis + 1);
  g.w = input.dim(axis + 2);
  g.cout = weight.dim(0);
  g.k = weight.dim(2);
  g.stride = opt.stride;
  g.pad = opt.padding;
  g.groups = opt.groups;
  if (g.k != 1 && g.k != 3) throw ConfigError("conv2d supports kernel sizes 1 and 3");
  if (g.groups < 1 || g.cin % g.groups || g.cout % g.groups || weight.dim(1) != g.cin / g.groups)
    throw ShapeError("conv2d: channels " + std::to_string(g.cin) + " incompatible with weight " +
                     to_string(weight.shape()) + " and groups " + std::to_string(g.groups));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != g.cout)) throw ShapeError("conv2d: bias shape");
  if (g.stride < 1 || g.pad < 0) throw ConfigError("conv2d: stride must be >= 1 and padding >= 0");
  const Index span_h = g.h + 2 * g.pad - g.k, span_w = g.w + 2 * g.pad - g.k;
  if (span_h < 0 || span_w < 0) throw ShapeError("conv2d: kernel larger than padded input");
  g.oh = span_h / g.stride + 1;
  g.ow = span_w / g.stride + 1;

  Shape shape = axis == 1 ? Shape{g.batch, g.cout, g.oh, g.ow} : Shape{g.cout, g.oh, g.ow};
  auto out = Tensor<T>::empty(shape);
  const Index n = g.col_cols();
  AlignedVector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * n));
  const T* x = input.data().data();
  const T* wt = weight.data().data();
  T* y = out.data().data();
  for (Index b = 0; b < g.batch; ++b) {
    for (Index gi = 0; gi < g.groups; ++gi) {
      const T* xg = x + (b * g.cin + gi * g.cin_g()) * g.h * g.w;
      const T* colp = xg;
      if (!g.pointwise()) {
        detail::im2col(xg, g, cols.data());
        colp = cols.data();
      }
      MatMap<T> yg(y + (b * g.cout + gi * g.cout_g()) * n, g.cout_g(), n);
      yg.noalias() = ConstMatMap<T>(wt + gi * g.cout_g() * g.col_rows(), g.cout_g(), g.col_rows()) *
                     ConstMatMap<T>(colp, g.col_rows(), n);
      if (bias.defined())
        for (Index o = 0; o < g.cout_g(); ++o) yg.row(o).array() += bias[gi * g.cout_g() + o];
    }
  }
  detail::check_finite(out, "conv2d");

  if (detail::any_requires_grad(input, weight, bias)) {
    detail::attach(out, {input, weight, bias}, [input, weight, bias, g](TensorNode<T>& self) {
      const Index n = g.col_cols();
      AlignedVector<T> cols(g.pointwise() ? 0 : static_cast<std::size_t>(g.col_rows() * n));
      AlignedVector<T> dcols(cols.size());
      const T* x = input.data().data();
      const T* wt = weight.data().data();
      T* dx = input.requires_grad() ? detail::grad_of(input).data() : nullptr;
      T* dw = weight.requires_grad() ? detail::grad_of(weight).data() : nullptr;
      T* db = bias.defined() && bias.requires_grad() ? detail::grad_of(bias).data() : nullptr;
      for (Index b = 0; b < g.batch; ++b) {
        for (Index gi = 0; gi < g.groups; ++gi) {
          ConstMatMap<T> gy(self.grad.data() + (b * g.cout + gi * g.cout_g()) * n, g.cout_g(), n);
          ConstMatMap<T> wg(wt + gi * g.cout_g() * g.col_rows(), g.cout_g(), g.col_rows());
          const T* xg = x + (b * g.cin + gi * g.cin_g()) * g.h * g.w;
          if (dw) {
            const T* colp = xg;
            if (!g.pointwise()) {
              detail::im2col(xg, g, cols.data());
              colp = cols.data();
            }
            MatMap<T>(dw + gi * g.cout_g() * g.col_rows(), g.cout_g(), g.col_rows()).noalias() +=
                gy * ConstMatMap<T>(colp, g.col_rows(), n).transpose();
          }
          if (dx) {
            T* dxg = dx + (b * g.cin + gi * g.cin_g()) * g.h * g.w;
            if (g.pointwise()) {
              MatMap<T>(dxg, g.col_rows(), n).noalias() += wg.transpose() * gy;
            } else {
              MatMap<T>(dcols.data(), g.col_rows(), n).noalias() = wg.transpose() * gy;
              detail::col2im_add(dcols.data(), g, dxg);
            }
          }
          if (db)
            for (Index o = 0; o < g.cout_g(); ++o) db[gi * g.cout_g() + o] += gy.row(o).sum();
        }
      }
    });
  }
  return out;
}

/// 1D convolution over [C,L] or [B,C,L]. Width 1 is a per-position linear
/// map; width 4 must be causal (left pad 3, output t sees inputs <= t).
template <class T>
Tensor<T> conv1d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias = {}, Index groups = 1,
                 bool causal = false) {
  if (input.rank() != 2 && input.rank() != 3) throw ShapeError("conv1d input must be [C,L] or [B,C,L]");
  if (weight.rank() != 3) throw ShapeError("conv1d weight must be [Cout,Cin/g,w]");
  const Index kw = weight.dim(2);
  if (!((kw == 1 && !causal) || (kw == 4 && causal)))
    throw ConfigError("conv1d: supported configurations are width 1 (non-causal) and width 4 (causal)");
  const bool batched = input.rank() == 3;
  const Index batch = batched ? input.dim(0) : 1;
  const Index cin = input.dim(-2), len = input.dim(-1), cout = weight.dim(0);
  if (groups < 1 || cin % groups || cout % groups || weight.dim(1) != cin / groups)
    throw ShapeError("conv1d: channel/group mismatch");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != cout)) throw ShapeError("conv1d: bias shape");
  const Index cin_g = cin / groups, cout_g = cout / groups;
  auto out = Tensor<T>::empty(batched ? Shape{batch, cout, len} : Shape{cout, len});
  auto xs = input.data();
  auto ws = weight.data();
  auto ys = out.data();
  const Index shift = kw - 1;
  for (Index b = 0; b < batch; ++b)
    for (Index o = 0; o < cout; ++o) {
      const Index gi = o / cout_g;
      T* yrow = ys.data() + (b * cout + o) * len;
      const T bv = bias.defined() ? bias[o] : T{0};
      for (Index t = 0; t < len; ++t) yrow[t] = bv;
      for (Index ic = 0; ic < cin_g; ++ic) {
        const T* xrow = xs.data() + (b * cin + gi * cin_g + ic) * len;
        for (Index j = 0; j < kw; ++j) {
          const T wv = ws[(o * cin_g + ic) * kw + j];
          for (Index t = std::max<Index>(0, shift - j); t < len; ++t) yrow[t] += wv * xrow[t - shift + j];
        }
      }
    }
  detail::check_finite(out, "conv1d");
  if (detail::any_requires_grad(input, weight, bias)) {
    detail::attach(out, {input, weight, bias},
                   [input, weight, bias, batch, cin, cout, cin_g, cout_g, len, kw, shift](TensorNode<T>& self) {
                     auto xs = input.data();
                     auto ws = weight.data();
                     T* dx = input.requires_grad() ? detail::grad_of(input).data() : nullptr;
                     T* dw = weight.requires_grad() ? detail::grad_of(weight).data() : nullptr;
                     T* db = bias.defined() && bias.requires_grad() ? detail::grad_of(bias).data() : nullptr;
                     for (Index b = 0; b < batch; ++b)
                       for (Index o = 0; o < cout; ++o) {
                         const Index gi = o / cout_g;
                         const T* gy = self.grad.data() + (b * cout + o) * len;
                         if (db)
                           for (Index t = 0; t < len; ++t) db[o] += gy[t];
                         for (Index ic = 0; ic < cin_g; ++ic) {
                           const Index xoff = (b * cin + gi * cin_g + ic) * len;
                           for (Index j = 0; j < kw; ++j) {
                             const Index widx = (o * cin_g + ic) * kw + j;
                             for (Index t = std::max<Index>(0, shift - j); t < len; ++t) {
                               if (dw) dw[widx] += gy[t] * xs[xoff + t - shift + j];
                               if (dx) dx[xoff + t - shift + j] += gy[t] * ws[widx];
                             }
                           }
                         }
                       }
                   });
  }
  return out;
}

}  // namespace pmamba
