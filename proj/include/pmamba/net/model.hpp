// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include "pmamba/decoder/head.hpp"
#include "pmamba/decoder/pfm.hpp"
#include "pmamba/net/encoder.hpp"

namespace pmamba::net {

/// Which decoder stages run. `baseline` is encoder + 1x1 head + upsample.
enum class Variant { baseline, dspp, dspp_pfm, full };

inline constexpr std::array<Variant, 4> kAllVariants{Variant::baseline, Variant::dspp, Variant::dspp_pfm,
                                                     Variant::full};

inline std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "Baseline";
    case Variant::dspp:
      return "Baseline+DSPP";
    case Variant::dspp_pfm:
      return "Baseline+DSPP+PFM";
    case Variant::full:
      return "PyramidMamba";
  }
  return "?";
}

inline Variant parse_variant(std::string_view s) {
  if (s == "baseline") return Variant::baseline;
  if (s == "dspp") return Variant::dspp;
  if (s == "dspp_pfm") return Variant::dspp_pfm;
  if (s == "full") return Variant::full;
  throw ConfigError("unknown variant '" + std::string(s) + "' (baseline|dspp|dspp_pfm|full)");
}

inline std::string_view variant_key(Variant v) {
  switch (v) {
    case Variant::baseline:
      return "baseline";
    case Variant::dspp:
      return "dspp";
    case Variant::dspp_pfm:
      return "dspp_pfm";
    case Variant::full:
      return "full";
  }
  return "?";
}

enum class PoolingKind { dense, classic };

struct ModelConfig {
  EncoderConfig encoder;
  Index num_classes = 4;
  Index input_size = 64;
  Index d_dec = 64;
  int expand = 1;
  Index d_state = 8;
  mamba::ScanModeKind scan_kind = mamba::ScanModeKind::cross2d;
  ssm::ScanOptions scan;
  double ffn_dropout = decoder::kFfnDropout;
  bool literal_dropout_on_conv = false;
  PoolingKind pooling = PoolingKind::dense;
  decoder::FusionKind fusion = decoder::FusionKind::sum;
  Variant variant = Variant::full;

  bool uses_pooling() const { return variant != Variant::baseline; }
  bool uses_pfm() const { return variant == Variant::dspp_pfm || variant == Variant::full; }
  bool uses_fusion() const { return variant == Variant::full; }

  Index high_side() const { return input_size / EncoderConfig::kTotalStride; }
  Index high_channels() const { return encoder.stage_channels[static_cast<std::size_t>(encoder.high_level_stage)]; }
  Index low_channels() const { return encoder.stage_channels[static_cast<std::size_t>(encoder.low_level_stage)]; }

  decoder::PoolingConfig pooling_config() const {
    return pooling == PoolingKind::dense ? decoder::PoolingConfig::dense(high_channels(), high_side())
                                         : decoder::PoolingConfig::classic(high_channels(), high_side());
  }

  decoder::PfmConfig pfm_config() const {
    decoder::PfmConfig c;
    c.ms_channels = pooling_config().out_channels();
    c.side = high_side();
    c.d_dec = d_dec;
    c.expand = expand;
    c.d_state = d_state;
    c.scan_kind = scan_kind;
    c.scan = scan;
    c.dropout = ffn_dropout;
    c.literal_dropout_on_conv = literal_dropout_on_conv;
    return c;
  }

  /// Channels reaching the segmentation head for this variant.
  Index head_channels() const {
    if (uses_pfm()) return d_dec;
    if (uses_pooling()) return pooling_config().out_channels();
    return high_channels();
  }

  void validate() const {
    encoder.validate();
    if (encoder.high_level_stage != 3) throw ConfigError("model: the high-level feature must come from the last stage");
    if (input_size < 32 || input_size % EncoderConfig::kTotalStride != 0)
      throw ConfigError("model: input size must be a multiple of 16 and at least 32");
    if (num_classes < 2) throw ConfigError("model: need at least 2 classes");
    if (d_dec < num_classes) throw ConfigError("model: d_dec must be >= number of classes");
  }
};

/// Encoder plus the pyramid decoder, assembled per `ModelConfig::variant`.
/// Owns its parameters; not copyable (layers share tensor storage).
template <class T>
class Model {
 public:
  explicit Model(const ModelConfig& cfg) : cfg_(cfg), encoder_(cfg.encoder), head_(cfg.head_channels(), cfg.num_classes) {
    cfg_.validate();
    if (cfg_.uses_pooling()) pooling_.emplace(cfg_.pooling_config());
    if (cfg_.uses_pfm()) pfm_.emplace(cfg_.pfm_config());
    if (cfg_.uses_fusion()) fusion_.emplace(cfg_.d_dec, cfg_.low_channels(), cfg_.fusion);
    encoder_.collect(params_, "encoder", ParamGroup::encoder);
    if (pooling_) pooling_->collect(params_, "decoder.dspp", ParamGroup::decoder);
    if (pfm_) pfm_->collect(params_, "decoder.pfm", ParamGroup::decoder);
    if (fusion_) fusion_->collect(params_, "decoder.fuse", ParamGroup::decoder);
    head_.collect(params_, "head", ParamGroup::decoder);
  }
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  ParamSet<T>& params() { return params_; }
  const ParamSet<T>& params() const { return params_; }

  /// Deterministic per-name initialization: conv/linear weights fan-in
  /// uniform, norms at identity, S6 per its own scheme, Mamba w_out zero.
  void init(std::uint64_t seed) {
    const Initializer ini(seed);
    encoder_.init(ini, "encoder");
    if (pooling_) pooling_->init(ini, "decoder.dspp");
    if (pfm_) pfm_->init(ini, "decoder.pfm");
    if (fusion_) fusion_->init(ini, "decoder.fuse");
    head_.init(ini, "head");
  }

  /// image: [3,H,W] or [B,3,H,W] -> logits [K,H,W] or [B,K,H,W].
  Tensor<T> operator()(const Tensor<T>& image, const ForwardCtx& ctx) {
    if (image.dim(-1) != cfg_.input_size || image.dim(-2) != cfg_.input_size)
      throw ShapeError("model: expected " + std::to_string(cfg_.input_size) + "x" + std::to_string(cfg_.input_size) +
                       " input, got " + to_string(image.shape()));
    auto enc = encoder_(image, ctx);
    FeatureMap<T> f = enc.high;
    if (pooling_) f.tensor = (*pooling_)(f.tensor);
    if (pfm_) f.tensor = (*pfm_)(f.tensor, ctx);
    if (fusion_) f = (*fusion_)(f, enc.low, ctx);
    return head_(f, image.dim(-2), image.dim(-1));
  }

 private:
  ModelConfig cfg_;
  ParamSet<T> params_;
  Encoder<T> encoder_;
  std::optional<decoder::PyramidPooling<T>> pooling_;
  std::optional<decoder::PyramidFusionMamba<T>> pfm_;
  std::optional<decoder::LowLevelFusion<T>> fusion_;
  decoder::SegHead<T> head_;
};

/// Builds and initializes a model.
template <class T>
std::unique_ptr<Model<T>> model_init(const ModelConfig& cfg, std::uint64_t seed) {
  auto m = std::make_unique<Model<T>>(cfg);
  m->init(seed);
  return m;
}

}  // namespace pmamba::net
