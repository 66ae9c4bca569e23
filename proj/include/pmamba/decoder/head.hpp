// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "pmamba/decoder/dspp.hpp"

namespace pmamba::decoder {

enum class FusionKind { sum, concat };

/// Merges the decoder output with a higher-resolution encoder feature.
///
/// sum:    refine(upsample(dec) + proj1x1(low))
/// concat: refine(concat(upsample(dec), low))
/// where refine is a 3x3 ConvBNReLU to d_dec channels.
template <class T>
class LowLevelFusion {
 public:
  LowLevelFusion(Index d_dec, Index low_channels, FusionKind kind = FusionKind::sum)
      : kind_(kind),
        d_dec_(d_dec),
        low_channels_(low_channels),
        proj_(low_channels, d_dec, 1, Conv2dOptions{}, true),
        refine_(kind == FusionKind::sum ? d_dec : d_dec + low_channels, d_dec, 3) {}

  FusionKind kind() const { return kind_; }
  Conv2dLayer<T>& projection() { return proj_; }

  void init(const Initializer& ini, const std::string& prefix) {
    if (kind_ == FusionKind::sum) proj_.init(ini, prefix + ".proj");
    refine_.init(ini, prefix + ".refine");
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    if (kind_ == FusionKind::sum) proj_.collect(ps, prefix + ".proj", g);
    refine_.collect(ps, prefix + ".refine", g);
  }

  FeatureMap<T> operator()(const FeatureMap<T>& dec, const FeatureMap<T>& low, const ForwardCtx& ctx) {
    if (low.stride >= dec.stride)
      throw ConfigError("fuse_low_level: low-level stride " + std::to_string(low.stride) +
                        " must be finer than decoder stride " + std::to_string(dec.stride));
    if (dec.channels() != d_dec_ || low.channels() != low_channels_) throw ShapeError("fuse_low_level: channel mismatch");
    const auto up = bilinear_upsample(dec.tensor, low.height(), low.width());
    const auto merged =
        kind_ == FusionKind::sum ? add(up, proj_(low.tensor)) : concat_channels<T>({up, low.tensor});
    return {refine_(merged, ctx), low.stride};
  }

 private:
  FusionKind kind_;
  Index d_dec_, low_channels_;
  Conv2dLayer<T> proj_;
  ConvBnRelu<T> refine_;
};

/// 1x1 classifier followed by bilinear upsampling to the input size. Emits
/// raw logits.
template <class T>
class SegHead {
 public:
  SegHead(Index in_channels, Index num_classes) : conv_(in_channels, num_classes, 1, Conv2dOptions{}, true) {
    if (num_classes < 2) throw ConfigError("seg_head: need at least 2 classes");
  }

  Conv2dLayer<T>& conv() { return conv_; }

  void init(const Initializer& ini, const std::string& prefix) { conv_.init(ini, prefix + ".conv"); }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) { conv_.collect(ps, prefix + ".conv", g); }

  Tensor<T> operator()(const FeatureMap<T>& f, Index out_h, Index out_w) const {
    return bilinear_upsample(conv_(f.tensor), out_h, out_w);
  }

 private:
  Conv2dLayer<T> conv_;
};

}  // namespace pmamba::decoder
