// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "pmamba/core/resample.hpp"
#include "pmamba/pipeline/geometry.hpp"

namespace pmamba::pipeline {

struct AugmentationConfig {
  double hflip_p = 0.5;
  double vflip_p = 0.5;
  double scale_min = 0.75;
  double scale_max = 1.25;
  Index crop_size = 64;
  double mosaic_p = 0.25;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(hflip_p) || !prob(vflip_p) || !prob(mosaic_p)) throw ConfigError("augment: probabilities must be in [0,1]");
    if (!(scale_min > 0.0) || scale_max < scale_min) throw ConfigError("augment: need 0 < scale_min <= scale_max");
    if (crop_size < 16 || crop_size % 16 != 0) throw ConfigError("augment: crop size must be a positive multiple of 16");
  }

  /// No randomness beyond a fixed-size crop.
  static AugmentationConfig none(Index crop) { return {0.0, 0.0, 1.0, 1.0, crop, 0.0}; }
};

/// Random scale (bilinear image, nearest mask) followed by a random out_h x
/// out_w crop. A scaled sample smaller than the crop is placed at a random
/// offset inside it, with reflected image padding and ignore-label mask
/// padding.
template <class T>
Sample<T> scale_and_crop(const Sample<T>& s, double scale_min, double scale_max, Index out_h, Index out_w, Rng& rng) {
  const double f = rng.uniform(scale_min, scale_max);
  const Index h = s.mask.height(), w = s.mask.width();
  const Index sh = std::max<Index>(1, std::lround(static_cast<double>(h) * f));
  const Index sw = std::max<Index>(1, std::lround(static_cast<double>(w) * f));
  const auto img = resize_bilinear(s.image, sh, sw);
  const auto mask = resize_mask_nearest(s.mask, sh, sw);
  auto offset = [&rng](Index have, Index want) {
    return have >= want ? static_cast<Index>(rng.below(static_cast<std::uint64_t>(have - want + 1)))
                        : -static_cast<Index>(rng.below(static_cast<std::uint64_t>(want - have + 1)));
  };
  const Index oy = offset(sh, out_h);
  const Index ox = offset(sw, out_w);
  const Window win{oy, ox, out_h, out_w};
  return {crop_image(img, win), crop_mask(mask, win)};
}

/// Supplies extra samples for mosaic composition.
template <class T>
using MosaicSource = std::function<Sample<T>(Rng&)>;

/// Four-sample 2x2 composition around a centre drawn from the middle half of
/// the canvas. `first` fills the top-left quadrant.
template <class T>
Sample<T> mosaic(const Sample<T>& first, const MosaicSource<T>& source, const AugmentationConfig& cfg, Rng& rng) {
  const Index s = cfg.crop_size;
  const Index cy = s / 4 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(s / 2 + 1)));
  const Index cx = s / 4 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(s / 2 + 1)));
  const Index c = first.image.dim(0);
  auto img = Tensor<T>::zeros({c, s, s});
  auto mask = LabelMap::filled({s, s}, train::kIgnoreLabel);
  const Window quads[4] = {{0, 0, cy, cx}, {0, cx, cy, s - cx}, {cy, 0, s - cy, cx}, {cy, cx, s - cy, s - cx}};
  auto dst = img.data();
  for (int q = 0; q < 4; ++q) {
    const Window& w = quads[q];
    if (w.h == 0 || w.w == 0) continue;
    const Sample<T> src = q == 0 ? first : source(rng);
    const auto tile = scale_and_crop(src, cfg.scale_min, cfg.scale_max, w.h, w.w, rng);
    const auto t = tile.image.data();
    for (Index ch = 0; ch < c; ++ch)
      for (Index y = 0; y < w.h; ++y)
        for (Index x = 0; x < w.w; ++x) dst[(ch * s + w.y + y) * s + w.x + x] = t[(ch * w.h + y) * w.w + x];
    for (Index y = 0; y < w.h; ++y)
      for (Index x = 0; x < w.w; ++x)
        mask.values[static_cast<std::size_t>((w.y + y) * s + w.x + x)] = tile.mask.values[static_cast<std::size_t>(y * w.w + x)];
  }
  return {img, mask};
}

/// Mosaic (when a source is given) or scale-and-crop, then independent
/// horizontal and vertical flips. Draws happen in a fixed order, so the
/// result is a function of the generator state alone.
template <class T>
Sample<T> augment(const Sample<T>& s, const AugmentationConfig& cfg, Rng& rng, const MosaicSource<T>& source = {}) {
  const bool use_mosaic = rng.bernoulli(cfg.mosaic_p) && source;
  Sample<T> out = use_mosaic ? mosaic(s, source, cfg, rng)
                             : scale_and_crop(s, cfg.scale_min, cfg.scale_max, cfg.crop_size, cfg.crop_size, rng);
  const bool h = rng.bernoulli(cfg.hflip_p);
  const bool v = rng.bernoulli(cfg.vflip_p);
  if (h || v) {
    out.image = flip_tensor(out.image, h, v);
    out.mask = flip_mask(out.mask, h, v);
  }
  return out;
}

/// Per-sample generator keyed by (seed, index, epoch).
inline Rng sample_rng(std::uint64_t seed, Index index, std::int64_t epoch) {
  return Rng(seed, Rng::hash("augment")).split(static_cast<std::uint64_t>(index)).split(static_cast<std::uint64_t>(epoch));
}

/// Augmented training stream over `samples`, which must outlive the result.
template <class T>
train::TrainData<T> augmented_data(const std::vector<Sample<T>>& samples, AugmentationConfig cfg, std::uint64_t seed) {
  cfg.validate();
  return {static_cast<Index>(samples.size()), [&samples, cfg, seed](Index i, std::int64_t epoch) {
            Rng rng = sample_rng(seed, i, epoch);
            const MosaicSource<T> source = [&samples](Rng& r) { return samples[r.below(samples.size())]; };
            return augment(samples[static_cast<std::size_t>(i)], cfg, rng, source);
          }};
}

}  // namespace pmamba::pipeline
