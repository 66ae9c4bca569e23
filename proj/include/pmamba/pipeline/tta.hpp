// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "pmamba/core/resample.hpp"
#include "pmamba/pipeline/geometry.hpp"

namespace pmamba::pipeline {

enum class Flip { none, h, v, hv };

inline std::string_view flip_name(Flip f) {
  switch (f) {
    case Flip::none: return "none";
    case Flip::h: return "h";
    case Flip::v: return "v";
    case Flip::hv: return "hv";
  }
  return "?";
}

inline Flip parse_flip(std::string_view s) {
  for (Flip f : {Flip::none, Flip::h, Flip::v, Flip::hv})
    if (flip_name(f) == s) return f;
  throw ConfigError("tta: unknown flip '" + std::string(s) + "' (expected none, h, v or hv)");
}

struct TtaConfig {
  std::vector<Flip> flips{Flip::none, Flip::h, Flip::v, Flip::hv};
  std::vector<double> scales{0.75, 1.0, 1.25};

  static TtaConfig singleton() { return {{Flip::none}, {1.0}}; }

  /// Every scale must map the native size to a multiple of 16.
  void validate(Index native_h, Index native_w) const {
    if (flips.empty() || scales.empty()) throw ConfigError("tta: flips and scales must be non-empty");
    for (double s : scales) {
      if (!(s > 0.0)) throw ConfigError("tta: scales must be positive");
      for (Index d : {native_h, native_w}) {
        const auto r = std::lround(static_cast<double>(d) * s);
        if (r < 16 || r % 16 != 0)
          throw ConfigError("tta: scale " + std::to_string(s) + " maps " + std::to_string(d) + " to " + std::to_string(r) +
                            ", not a multiple of 16");
      }
    }
  }
};

/// Counters for instrumenting inference cost.
struct TtaStats {
  Index branches = 0;
  Index forwards = 0;
};

/// Eval-mode logits [K,H,W] for an image [3,H,W] of any size. Images at the
/// model's input size take one forward pass; others are reflect-padded up to
/// at least the input size and covered by overlapping windows (stride half
/// the input size) whose logits are averaged.
template <class T>
Tensor<T> window_forward(net::Model<T>& model, const Tensor<T>& image, TtaStats* stats = nullptr) {
  NoGradGuard ng;
  const ForwardCtx ctx{StatsMode::eval, nullptr};
  const Index p = model.config().input_size;
  const Index h = image.dim(1), w = image.dim(2);
  if (h == p && w == p) {
    if (stats) ++stats->forwards;
    return model(image, ctx);
  }
  const Index ph = std::max(h, p), pw = std::max(w, p);
  const auto canvas = crop_image(image, Window{0, 0, ph, pw});
  const Index k = model.config().num_classes;
  std::vector<double> sum(static_cast<std::size_t>(k * ph * pw), 0.0);
  std::vector<int> hits(static_cast<std::size_t>(ph * pw), 0);
  for (const auto& win : crop_patches(ph, pw, p, std::max<Index>(1, p / 2))) {
    const auto logits = model(crop_image(canvas, win), ctx);
    if (stats) ++stats->forwards;
    const auto l = logits.data();
    for (Index y = 0; y < p; ++y)
      for (Index x = 0; x < p; ++x) {
        const auto at = static_cast<std::size_t>((win.y + y) * pw + win.x + x);
        ++hits[at];
        for (Index c = 0; c < k; ++c) sum[static_cast<std::size_t>(c * ph * pw) + at] += l[(c * p + y) * p + x];
      }
  }
  auto out = Tensor<T>::empty({k, h, w});
  auto o = out.data();
  for (Index c = 0; c < k; ++c)
    for (Index y = 0; y < h; ++y)
      for (Index x = 0; x < w; ++x) {
        const auto at = static_cast<std::size_t>(y * pw + x);
        o[(c * h + y) * w + x] = static_cast<T>(sum[static_cast<std::size_t>(c * ph * pw) + at] / hits[at]);
      }
  return out;
}

/// One TTA branch: flip and rescale the image, forward, resize the logits back
/// to the native size and undo the flip.
template <class T>
Tensor<T> tta_branch(net::Model<T>& model, const Tensor<T>& image, Flip flip, double scale, TtaStats* stats = nullptr) {
  const bool fh = flip == Flip::h || flip == Flip::hv;
  const bool fv = flip == Flip::v || flip == Flip::hv;
  const Index h = image.dim(1), w = image.dim(2);
  const Index sh = std::lround(static_cast<double>(h) * scale), sw = std::lround(static_cast<double>(w) * scale);
  const auto x = resize_bilinear(flip_tensor(image, fh, fv), sh, sw);
  const auto logits = resize_bilinear(window_forward(model, x, stats), h, w);
  if (stats) ++stats->branches;
  return flip_tensor(logits, fh, fv);
}

/// Arithmetic mean of the logits of every (flip, scale) branch.
template <class T>
Tensor<T> tta_infer(net::Model<T>& model, const Tensor<T>& image, const TtaConfig& cfg, TtaStats* stats = nullptr) {
  if (image.rank() != 3) throw ShapeError("tta_infer: expected an image [3,H,W]");
  cfg.validate(image.dim(1), image.dim(2));
  std::vector<Tensor<T>> branches;
  for (Flip f : cfg.flips)
    for (double s : cfg.scales) branches.push_back(tta_branch(model, image, f, s, stats));
  if (branches.size() == 1) return branches.front();
  auto out = Tensor<T>::empty(branches.front().shape());
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    double acc = 0;
    for (const auto& b : branches) acc += b.data()[i];
    o[i] = static_cast<T>(acc / static_cast<double>(branches.size()));
  }
  return out;
}

/// Batched predictor for `train::evaluate` that runs `tta_infer` per image.
template <class T>
train::Predictor<T> tta_predictor(net::Model<T>& model, TtaConfig cfg, TtaStats* stats = nullptr) {
  return [&model, cfg = std::move(cfg), stats](const Tensor<T>& images) {
    const Index b = images.dim(0);
    const Shape one{images.dim(1), images.dim(2), images.dim(3)};
    const Index n = numel_of(one);
    std::vector<T> all;
    Index k = 0;
    for (Index i = 0; i < b; ++i) {
      std::vector<T> v(images.data().begin() + i * n, images.data().begin() + (i + 1) * n);
      const auto logits = tta_infer(model, Tensor<T>::from(one, v), cfg, stats);
      k = logits.dim(0);
      all.insert(all.end(), logits.data().begin(), logits.data().end());
    }
    return Tensor<T>::from({b, k, images.dim(2), images.dim(3)}, all);
  };
}

}  // namespace pmamba::pipeline
