// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "pmamba/decoder/dspp.hpp"

namespace pmamba::net {

using decoder::FeatureMap;

/// Four-stage residual CNN. The stem halves the resolution; stage 0 keeps it
/// and every later stage halves it again, giving strides 2/4/8/16.
struct EncoderConfig {
  Index stem_channels = 16;
  std::array<Index, 4> stage_channels{16, 32, 64, 64};
  Index blocks_per_stage = 1;
  int low_level_stage = 1;   // stride 4
  int high_level_stage = 3;  // stride 16

  static constexpr Index stage_stride(int s) { return Index{2} << s; }
  static constexpr Index kTotalStride = 16;

  void validate() const {
    if (stem_channels < 1 || blocks_per_stage < 1) throw ConfigError("encoder: channels and blocks must be >= 1");
    for (std::size_t i = 0; i < 4; ++i) {
      if (stage_channels[i] < 1) throw ConfigError("encoder: stage channels must be >= 1");
      if (i > 0 && stage_channels[i] < stage_channels[i - 1]) throw ConfigError("encoder: stage channels must ascend");
    }
    if (low_level_stage < 0 || high_level_stage > 3 || low_level_stage >= high_level_stage)
      throw ConfigError("encoder: low-level stage must precede the high-level stage");
  }
};

/// y = relu(bn(conv3x3(relu(bn(conv3x3(x))))) + shortcut(x)).
template <class T>
class ResidualBlock {
 public:
  ResidualBlock(Index cin, Index cout, Index stride)
      : conv1_(cin, cout, 3, Conv2dOptions{stride, 1, 1}, false),
        bn1_(cout),
        conv2_(cout, cout, 3, Conv2dOptions{1, 1, 1}, false),
        bn2_(cout),
        projected_(cin != cout || stride != 1) {
    if (projected_) {
      short_conv_ = Conv2dLayer<T>(cin, cout, 1, Conv2dOptions{stride, 0, 1}, false);
      short_bn_ = BatchNormLayer<T>(cout);
    }
  }

  void init(const Initializer& ini, const std::string& prefix) {
    conv1_.init(ini, prefix + ".conv1");
    conv2_.init(ini, prefix + ".conv2");
    if (projected_) short_conv_.init(ini, prefix + ".shortcut.conv");
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    conv1_.collect(ps, prefix + ".conv1", g);
    bn1_.collect(ps, prefix + ".bn1", g);
    conv2_.collect(ps, prefix + ".conv2", g);
    bn2_.collect(ps, prefix + ".bn2", g);
    if (projected_) {
      short_conv_.collect(ps, prefix + ".shortcut.conv", g);
      short_bn_.collect(ps, prefix + ".shortcut.bn", g);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, const ForwardCtx& ctx) {
    const auto h = relu(bn1_(conv1_(x), ctx));
    const auto y = bn2_(conv2_(h), ctx);
    const auto s = projected_ ? short_bn_(short_conv_(x), ctx) : x;
    return relu(add(y, s));
  }

 private:
  Conv2dLayer<T> conv1_;
  BatchNormLayer<T> bn1_;
  Conv2dLayer<T> conv2_;
  BatchNormLayer<T> bn2_;
  bool projected_;
  Conv2dLayer<T> short_conv_;
  BatchNormLayer<T> short_bn_;
};

template <class T>
struct EncoderOutput {
  FeatureMap<T> low;
  FeatureMap<T> high;
};

template <class T>
class Encoder {
 public:
  explicit Encoder(const EncoderConfig& cfg) : cfg_(cfg), stem_(3, cfg.stem_channels, 3, 2) {
    cfg_.validate();
    Index cin = cfg_.stem_channels;
    for (int s = 0; s < 4; ++s) {
      std::vector<ResidualBlock<T>> blocks;
      const Index cout = cfg_.stage_channels[static_cast<std::size_t>(s)];
      for (Index b = 0; b < cfg_.blocks_per_stage; ++b) {
        blocks.emplace_back(cin, cout, b == 0 && s > 0 ? 2 : 1);
        cin = cout;
      }
      stages_.push_back(std::move(blocks));
    }
  }

  const EncoderConfig& config() const { return cfg_; }
  Index low_channels() const { return cfg_.stage_channels[static_cast<std::size_t>(cfg_.low_level_stage)]; }
  Index high_channels() const { return cfg_.stage_channels[static_cast<std::size_t>(cfg_.high_level_stage)]; }
  Index low_stride() const { return EncoderConfig::stage_stride(cfg_.low_level_stage); }
  Index high_stride() const { return EncoderConfig::stage_stride(cfg_.high_level_stage); }

  void init(const Initializer& ini, const std::string& prefix) {
    stem_.init(ini, prefix + ".stem");
    for_each_block([&](ResidualBlock<T>& b, const std::string& name) { b.init(ini, prefix + name); });
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    stem_.collect(ps, prefix + ".stem", g);
    for_each_block([&](ResidualBlock<T>& b, const std::string& name) { b.collect(ps, prefix + name, g); });
  }

  /// image: [3,H,W] or [B,3,H,W] with H, W divisible by 16.
  EncoderOutput<T> operator()(const Tensor<T>& image, const ForwardCtx& ctx) {
    const Index axis = pmamba::detail::channel_axis(image.shape());
    if (image.dim(axis) != 3) throw ShapeError("encoder: expected 3 input channels, got " + to_string(image.shape()));
    if (image.dim(-1) % EncoderConfig::kTotalStride != 0 || image.dim(-2) % EncoderConfig::kTotalStride != 0)
      throw ShapeError("encoder: input " + std::to_string(image.dim(-2)) + "x" + std::to_string(image.dim(-1)) +
                       " is not divisible by 16");
    EncoderOutput<T> out;
    auto x = stem_(image, ctx);
    for (int s = 0; s < 4; ++s) {
      for (auto& b : stages_[static_cast<std::size_t>(s)]) x = b(x, ctx);
      if (s == cfg_.low_level_stage) out.low = {x, EncoderConfig::stage_stride(s)};
      if (s == cfg_.high_level_stage) out.high = {x, EncoderConfig::stage_stride(s)};
    }
    return out;
  }

 private:
  template <class Fn>
  void for_each_block(Fn&& fn) {
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        fn(stages_[s][b], ".stage" + std::to_string(s) + ".block" + std::to_string(b));
  }

  EncoderConfig cfg_;
  ConvBnRelu<T> stem_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
};

}  // namespace pmamba::net
