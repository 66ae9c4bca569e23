// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "pmamba/train/loop.hpp"

namespace pmamba::pipeline {

using train::LabelMap;
using train::Sample;

struct Window {
  Index y = 0;
  Index x = 0;
  Index h = 0;
  Index w = 0;
  bool operator==(const Window&) const = default;
};

/// Offsets along one axis: 0, stride, 2*stride, ... while the window fits,
/// plus a final offset snapped to `extent - patch` when the grid falls short.
inline std::vector<Index> crop_offsets(Index extent, Index patch, Index stride) {
  if (patch < 1 || stride < 1) throw ConfigError("crop: patch and stride must be >= 1");
  if (stride > patch) throw ConfigError("crop: stride larger than the patch would leave gaps");
  if (patch > extent)
    throw ConfigError("crop: patch " + std::to_string(patch) + " exceeds tile extent " + std::to_string(extent));
  std::vector<Index> out;
  for (Index o = 0; o + patch <= extent; o += stride) out.push_back(o);
  if (out.back() + patch < extent) out.push_back(extent - patch);
  return out;
}

/// Row-major grid of square windows covering a height x width tile.
inline std::vector<Window> crop_patches(Index height, Index width, Index patch, Index stride) {
  std::vector<Window> out;
  for (Index y : crop_offsets(height, patch, stride))
    for (Index x : crop_offsets(width, patch, stride)) out.push_back({y, x, patch, patch});
  return out;
}

/// Reflect index into [0, n) without repeating the edge sample (…2 1 0 1 2…).
inline Index reflect_index(Index i, Index n) {
  if (n == 1) return 0;
  const Index period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

/// Window of a [C,H,W] tensor. Out-of-range coordinates reflect.
template <class T>
Tensor<T> crop_image(const Tensor<T>& img, const Window& w) {
  const Index c = img.dim(0), h = img.dim(1), wd = img.dim(2);
  auto out = Tensor<T>::empty({c, w.h, w.w});
  const auto src = img.data();
  auto dst = out.data();
  for (Index ch = 0; ch < c; ++ch)
    for (Index y = 0; y < w.h; ++y) {
      const Index sy = reflect_index(w.y + y, h);
      for (Index x = 0; x < w.w; ++x)
        dst[(ch * w.h + y) * w.w + x] = src[(ch * h + sy) * wd + reflect_index(w.x + x, wd)];
    }
  return out;
}

/// Window of an [H,W] mask. Out-of-range pixels become `fill`.
inline LabelMap crop_mask(const LabelMap& m, const Window& w, std::uint8_t fill = train::kIgnoreLabel) {
  const Index h = m.height(), wd = m.width();
  auto out = LabelMap::filled({w.h, w.w}, fill);
  for (Index y = 0; y < w.h; ++y) {
    const Index sy = w.y + y;
    if (sy < 0 || sy >= h) continue;
    for (Index x = 0; x < w.w; ++x) {
      const Index sx = w.x + x;
      if (sx >= 0 && sx < wd)
        out.values[static_cast<std::size_t>(y * w.w + x)] = m.values[static_cast<std::size_t>(sy * wd + sx)];
    }
  }
  return out;
}

/// Mirror along the last axis (horizontal) or the second to last (vertical)
/// of a [...,H,W] tensor.
template <class T>
Tensor<T> flip_tensor(const Tensor<T>& x, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return x;
  const Index h = x.dim(-2), w = x.dim(-1);
  const Index planes = x.numel() / (h * w);
  auto out = Tensor<T>::empty(x.shape());
  const auto src = x.data();
  auto dst = out.data();
  for (Index p = 0; p < planes; ++p)
    for (Index y = 0; y < h; ++y) {
      const Index sy = vertical ? h - 1 - y : y;
      for (Index xx = 0; xx < w; ++xx)
        dst[(p * h + y) * w + xx] = src[(p * h + sy) * w + (horizontal ? w - 1 - xx : xx)];
    }
  return out;
}

inline LabelMap flip_mask(const LabelMap& m, bool horizontal, bool vertical) {
  const Index h = m.height(), w = m.width();
  LabelMap out = m;
  for (Index y = 0; y < h; ++y) {
    const Index sy = vertical ? h - 1 - y : y;
    for (Index x = 0; x < w; ++x)
      out.values[static_cast<std::size_t>(y * w + x)] =
          m.values[static_cast<std::size_t>(sy * w + (horizontal ? w - 1 - x : x))];
  }
  return out;
}

/// Nearest-neighbour resize with half-pixel centres.
inline LabelMap resize_mask_nearest(const LabelMap& m, Index out_h, Index out_w) {
  const Index h = m.height(), w = m.width();
  if (out_h == h && out_w == w) return m;
  auto src_index = [](Index o, Index in, Index out) {
    return std::min(in - 1, static_cast<Index>(std::floor((static_cast<double>(o) + 0.5) * static_cast<double>(in) /
                                                          static_cast<double>(out))));
  };
  auto out = LabelMap::filled({out_h, out_w}, 0);
  for (Index y = 0; y < out_h; ++y) {
    const Index sy = src_index(y, h, out_h);
    for (Index x = 0; x < out_w; ++x)
      out.values[static_cast<std::size_t>(y * out_w + x)] = m.values[static_cast<std::size_t>(sy * w + src_index(x, w, out_w))];
  }
  return out;
}

/// Class histogram of a mask; the ignore label is counted in the last slot.
inline std::vector<std::uint64_t> class_histogram(const LabelMap& m, Index k) {
  std::vector<std::uint64_t> h(static_cast<std::size_t>(k + 1), 0);
  for (auto v : m.values) {
    if (v != train::kIgnoreLabel && v >= k) throw DataError("histogram: class " + std::to_string(v) + " out of range");
    ++h[v == train::kIgnoreLabel ? static_cast<std::size_t>(k) : v];
  }
  return h;
}

}  // namespace pmamba::pipeline
