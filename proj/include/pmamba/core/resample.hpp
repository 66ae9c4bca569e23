// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "pmamba/core/ops.hpp"

namespace pmamba {

namespace detail {

struct MapDims {
  Index planes, h, w;  // planes = batch * channels
};

inline MapDims map_dims(const Shape& s) {
  const Index axis = channel_axis(s);
  const Index batch = axis == 1 ? s[0] : 1;
  return {batch * s[static_cast<std::size_t>(axis)], s[static_cast<std::size_t>(axis + 1)],
          s[static_cast<std::size_t>(axis + 2)]};
}

inline Shape with_spatial(Shape s, Index h, Index w) {
  s[s.size() - 2] = h;
  s[s.size() - 1] = w;
  return s;
}

struct Tap {
  Index i0, i1;
  double w0, w1;
};

// Half-pixel source coordinates: src = (dst + 0.5) * in / out - 0.5, clamped at 0.
inline std::vector<Tap> bilinear_taps(Index in, Index out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  for (Index o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * ratio - 0.5;
    if (src < 0) src = 0;
    Index i0 = static_cast<Index>(std::floor(src));
    if (i0 > in - 1) i0 = in - 1;
    const Index i1 = std::min(i0 + 1, in - 1);
    const double l = i1 == i0 ? 0.0 : src - static_cast<double>(i0);
    taps[static_cast<std::size_t>(o)] = {i0, i1, 1.0 - l, l};
  }
  return taps;
}

}  // namespace detail

/// Adaptive average pooling of each channel to out x out cells. Cell r covers
/// rows [floor(r*H/out), ceil((r+1)*H/out)); same for columns.
template <class T>
Tensor<T> avg_pool_to(const Tensor<T>& x, Index out) {
  const auto d = detail::map_dims(x.shape());
  if (out < 1 || out > d.h || out > d.w)
    throw ScaleError("avg_pool_to: scale " + std::to_string(out) + " outside [1, " + std::to_string(std::min(d.h, d.w)) + "]");
  if (out == d.h && out == d.w) return x;
  auto bounds = [out](Index n) {
    std::vector<std::pair<Index, Index>> b(static_cast<std::size_t>(out));
    for (Index r = 0; r < out; ++r) b[static_cast<std::size_t>(r)] = {(r * n) / out, ((r + 1) * n + out - 1) / out};
    return b;
  };
  const auto rows = bounds(d.h), cols = bounds(d.w);
  auto y = Tensor<T>::empty(detail::with_spatial(x.shape(), out, out));
  auto xs = x.data();
  auto ys = y.data();
  for (Index p = 0; p < d.planes; ++p)
    for (Index r = 0; r < out; ++r)
      for (Index c = 0; c < out; ++c) {
        const auto [r0, r1] = rows[static_cast<std::size_t>(r)];
        const auto [c0, c1] = cols[static_cast<std::size_t>(c)];
        // Shifted by the window's first value so constant windows average
        // to exactly that value.
        const T pivot = xs[(p * d.h + r0) * d.w + c0];
        long double acc = 0;
        for (Index i = r0; i < r1; ++i)
          for (Index j = c0; j < c1; ++j) acc += xs[(p * d.h + i) * d.w + j] - pivot;
        ys[(p * out + r) * out + c] = pivot + static_cast<T>(acc / static_cast<long double>((r1 - r0) * (c1 - c0)));
      }
  if (detail::any_requires_grad(x)) {
    detail::attach(y, {x}, [x, d, out, rows, cols](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index p = 0; p < d.planes; ++p)
        for (Index r = 0; r < out; ++r)
          for (Index c = 0; c < out; ++c) {
            const auto [r0, r1] = rows[static_cast<std::size_t>(r)];
            const auto [c0, c1] = cols[static_cast<std::size_t>(c)];
            const T share = self.grad[(p * out + r) * out + c] / static_cast<T>((r1 - r0) * (c1 - c0));
            for (Index i = r0; i < r1; ++i)
              for (Index j = c0; j < c1; ++j) g[(p * d.h + i) * d.w + j] += share;
          }
    });
  }
  return y;
}

/// Bilinear resize with half-pixel centers (align_corners = false), no
/// antialiasing. Returns the input unchanged when sizes already match.
template <class T>
Tensor<T> resize_bilinear(const Tensor<T>& x, Index out_h, Index out_w) {
  const auto d = detail::map_dims(x.shape());
  if (out_h < 1 || out_w < 1) throw ShapeError("resize_bilinear: output dims must be >= 1");
  if (out_h == d.h && out_w == d.w) return x;
  const auto ty = detail::bilinear_taps(d.h, out_h);
  const auto tx = detail::bilinear_taps(d.w, out_w);
  auto y = Tensor<T>::empty(detail::with_spatial(x.shape(), out_h, out_w));
  auto xs = x.data();
  auto ys = y.data();
  for (Index p = 0; p < d.planes; ++p) {
    const T* src = xs.data() + p * d.h * d.w;
    T* dst = ys.data() + p * out_h * out_w;
    for (Index oy = 0; oy < out_h; ++oy) {
      const auto& a = ty[static_cast<std::size_t>(oy)];
      const T* r0 = src + a.i0 * d.w;
      const T* r1 = src + a.i1 * d.w;
      for (Index ox = 0; ox < out_w; ++ox) {
        const auto& b = tx[static_cast<std::size_t>(ox)];
        // Lerp form keeps constant regions exactly constant.
        const T top = r0[b.i0] + static_cast<T>(b.w1) * (r0[b.i1] - r0[b.i0]);
        const T bottom = r1[b.i0] + static_cast<T>(b.w1) * (r1[b.i1] - r1[b.i0]);
        dst[oy * out_w + ox] = top + static_cast<T>(a.w1) * (bottom - top);
      }
    }
  }
  if (detail::any_requires_grad(x)) {
    detail::attach(y, {x}, [x, d, out_h, out_w, ty, tx](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index p = 0; p < d.planes; ++p) {
        T* dst = g.data() + p * d.h * d.w;
        const T* gy = self.grad.data() + p * out_h * out_w;
        for (Index oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[static_cast<std::size_t>(oy)];
          for (Index ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[static_cast<std::size_t>(ox)];
            const double v = gy[oy * out_w + ox];
            dst[a.i0 * d.w + b.i0] += static_cast<T>(v * a.w0 * b.w0);
            dst[a.i0 * d.w + b.i1] += static_cast<T>(v * a.w0 * b.w1);
            dst[a.i1 * d.w + b.i0] += static_cast<T>(v * a.w1 * b.w0);
            dst[a.i1 * d.w + b.i1] += static_cast<T>(v * a.w1 * b.w1);
          }
        }
      }
    });
  }
  return y;
}

/// Upsampling-only front end of `resize_bilinear`.
template <class T>
Tensor<T> bilinear_upsample(const Tensor<T>& x, Index out_h, Index out_w) {
  const auto d = detail::map_dims(x.shape());
  if (out_h < d.h || out_w < d.w) throw ShapeError("bilinear_upsample: output smaller than input");
  return resize_bilinear(x, out_h, out_w);
}

}  // namespace pmamba
