// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "pmamba/mamba/block.hpp"

namespace pmamba::decoder {

inline constexpr double kFfnDropout = 0.1;
inline constexpr Index kFfnHiddenRatio = 4;

struct PfmConfig {
  Index ms_channels = 0;  // width of the multi-scale map (block model dim)
  Index side = 0;         // N
  Index d_dec = 64;
  int expand = 1;
  Index d_state = 8;
  mamba::ScanModeKind scan_kind = mamba::ScanModeKind::cross2d;
  ssm::ScanOptions scan;
  double dropout = kFfnDropout;
  // Applies the second dropout to X_conv and feeds it to fc2, leaving the
  // GELU branch unused. Audit flag only.
  bool literal_dropout_on_conv = false;

  mamba::MambaBlockConfig block() const {
    mamba::MambaBlockConfig c;
    c.d_model = ms_channels;
    c.expand = expand;
    c.d_state = d_state;
    c.mode = scan_kind == mamba::ScanModeKind::cross2d ? mamba::ScanMode::cross2d(side) : mamba::ScanMode::seq1d();
    c.scan = scan;
    return c;
  }
};

/// Pyramid fusion block: flatten, one Mamba block, then a convolutional FFN
///   X_conv = ConvBNReLU(X_select)   (1x1, ms_channels -> d_dec)
///   X_out  = Dropout(fc2(Dropout(GELU(fc1(X_conv)))))
/// and back to an [d_dec, N, N] map.
template <class T>
class PyramidFusionMamba {
 public:
  explicit PyramidFusionMamba(const PfmConfig& cfg)
      : cfg_(cfg),
        block_(cfg.block()),
        conv_(cfg.ms_channels, cfg.d_dec, 1),
        fc1_(cfg.d_dec, kFfnHiddenRatio * cfg.d_dec, 1),
        fc2_(cfg.literal_dropout_on_conv ? cfg.d_dec : kFfnHiddenRatio * cfg.d_dec, cfg.d_dec, 1) {
    if (cfg_.dropout < 0 || cfg_.dropout >= 1) throw ConfigError("pfm: dropout must be in [0, 1)");
  }

  const PfmConfig& config() const { return cfg_; }
  mamba::MambaBlock<T>& block() { return block_; }

  void init(const Initializer& ini, const std::string& prefix) {
    block_.init(ini, prefix + ".mamba");
    conv_.init(ini, prefix + ".ffn.conv");
    fc1_.init(ini, prefix + ".ffn.fc1");
    fc2_.init(ini, prefix + ".ffn.fc2");
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    block_.collect(ps, prefix + ".mamba", g);
    conv_.collect(ps, prefix + ".ffn.conv", g);
    fc1_.collect(ps, prefix + ".ffn.fc1", g);
    fc2_.collect(ps, prefix + ".ffn.fc2", g);
  }

  /// x_ms: [C_ms, N, N] or [B, C_ms, N, N].
  Tensor<T> operator()(const Tensor<T>& x_ms, const ForwardCtx& ctx) {
    const Index axis = pmamba::detail::channel_axis(x_ms.shape());
    if (x_ms.dim(axis) != cfg_.ms_channels || x_ms.dim(-1) != cfg_.side || x_ms.dim(-2) != cfg_.side)
      throw ShapeError("pfm: expected C=" + std::to_string(cfg_.ms_channels) + ", N=" + std::to_string(cfg_.side) +
                       ", got " + to_string(x_ms.shape()));
    const auto flat = reshape_seq(x_ms, SeqDirection::to_seq);
    const auto selected = reshape_seq(block_(flat), SeqDirection::to_map, cfg_.side);
    const auto x_conv = conv_(selected, ctx);
    const auto x_act = gelu(fc1_(x_conv));
    const auto x_drop = drop(cfg_.literal_dropout_on_conv ? x_conv : x_act, ctx);
    return drop(fc2_(x_drop), ctx);
  }

 private:
  Tensor<T> drop(const Tensor<T>& x, const ForwardCtx& ctx) const {
    if (!ctx.training() || cfg_.dropout == 0.0) return x;
    if (ctx.dropout_rng == nullptr) throw UsageError("pfm: training forward needs a dropout rng");
    return dropout(x, cfg_.dropout, true, *ctx.dropout_rng);
  }

  PfmConfig cfg_;
  mamba::MambaBlock<T> block_;
  ConvBnRelu<T> conv_;
  Conv2dLayer<T> fc1_, fc2_;
};

}  // namespace pmamba::decoder
