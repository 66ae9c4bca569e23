// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string>
#include <vector>

#include "pmamba/core/nn.hpp"
#include "pmamba/ssm/cross_scan.hpp"
#include "pmamba/ssm/s6.hpp"

namespace pmamba::mamba {

enum class ScanModeKind { seq1d, cross2d };

struct ScanMode {
  ScanModeKind kind = ScanModeKind::cross2d;
  Index side = 0;  // spatial N, cross2d only

  static ScanMode seq1d() { return {ScanModeKind::seq1d, 0}; }
  static ScanMode cross2d(Index n) { return {ScanModeKind::cross2d, n}; }
  int route_count() const { return kind == ScanModeKind::cross2d ? 4 : 1; }
};

struct MambaBlockConfig {
  Index d_model = 0;
  int expand = 1;  // E = expand * d_model, expand in {1, 2}
  Index d_state = 8;
  ScanMode mode;
  ssm::ScanOptions scan;

  // Test hooks. `shared_routes` makes all four routes use one S6 parameter
  // set; `identity_scan` replaces the S6 recurrence with the identity map.
  bool shared_routes = false;
  bool identity_scan = false;

  Index inner() const { return expand * d_model; }
  int param_routes() const { return shared_routes ? 1 : mode.route_count(); }

  void validate() const {
    if (d_model < 1) throw ConfigError("mamba: d_model must be >= 1");
    if (expand != 1 && expand != 2) throw ConfigError("mamba: expand factor must be 1 or 2");
    if (d_state < 1) throw ConfigError("mamba: d_state must be >= 1");
    if (mode.kind == ScanModeKind::cross2d && mode.side < 1) throw ConfigError("mamba: cross2d needs a side length");
  }
};

/// Gated selective-scan block with a residual connection:
///   u = LN(x); (a, g) = split(u W_in); a = silu(conv(a)); a = scan(a)
///   out = (a * silu(g)) W_out + x
template <class T>
class MambaBlock {
 public:
  explicit MambaBlock(const MambaBlockConfig& cfg)
      : cfg_(cfg),
        pre_norm_(cfg.d_model),
        w_in_(cfg.d_model, 2 * cfg.inner()),
        w_out_(cfg.inner(), cfg.d_model) {
    cfg_.validate();
    const Index e = cfg_.inner();
    if (cfg_.mode.kind == ScanModeKind::seq1d)
      conv_w_ = Tensor<T>::zeros({e, 1, 4});
    else
      conv_w_ = Tensor<T>::zeros({e, 1, 3, 3});
    conv_b_ = Tensor<T>::zeros({e});
    for (int r = 0; r < cfg_.param_routes(); ++r) s6_.emplace_back(e, cfg_.d_state);
  }

  const MambaBlockConfig& config() const { return cfg_; }
  std::vector<ssm::S6Params<T>>& s6() { return s6_; }
  Tensor<T>& conv_weight() { return conv_w_; }
  LinearLayer<T>& w_out() { return w_out_; }

  void init(const Initializer& ini, const std::string& prefix) {
    w_in_.init(ini, prefix + ".w_in");
    const Index taps = conv_w_.numel() / conv_w_.dim(0);
    ini.fan_in_uniform(conv_w_, prefix + ".conv.weight", taps);
    for (std::size_t r = 0; r < s6_.size(); ++r) s6_[r].init(ini, prefix + route_prefix(r));
    // Zero output projection: the block starts as the identity map.
    for (T& v : w_out_.weight.data()) v = T{0};
  }

  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    pre_norm_.collect(ps, prefix + ".pre_norm", g);
    w_in_.collect(ps, prefix + ".w_in", g);
    ps.add(prefix + ".conv.weight", conv_w_, g);
    ps.add(prefix + ".conv.bias", conv_b_, g);
    for (std::size_t r = 0; r < s6_.size(); ++r) s6_[r].collect(ps, prefix + route_prefix(r), g);
    w_out_.collect(ps, prefix + ".w_out", g);
  }

  /// x: [L, D_m] or [B, L, D_m].
  Tensor<T> operator()(const Tensor<T>& x) const {
    if (x.rank() != 2 && x.rank() != 3) throw ShapeError("mamba block: input must be [L,D] or [B,L,D]");
    if (x.dim(-1) != cfg_.d_model)
      throw ShapeError("mamba block: expected model dim " + std::to_string(cfg_.d_model) + ", got " +
                       std::to_string(x.dim(-1)));
    const Index len = x.dim(-2);
    if (cfg_.mode.kind == ScanModeKind::cross2d && len != cfg_.mode.side * cfg_.mode.side)
      throw ShapeError("mamba block: cross2d needs L = " + std::to_string(cfg_.mode.side * cfg_.mode.side) +
                       ", got " + std::to_string(len));
    const Index e = cfg_.inner();
    auto [a, g] = split_last(w_in_(pre_norm_(x)), e);
    a = silu(local_conv(a));
    a = scan(a);
    return add(w_out_(mul(a, silu(g))), x);
  }

 private:
  std::string route_prefix(std::size_t r) const {
    if (cfg_.mode.kind == ScanModeKind::seq1d || cfg_.shared_routes) return ".s6";
    return ".s6." + std::string(ssm::route_name(ssm::kAllRoutes[r]));
  }

  // Causal width-4 conv along the sequence (1D) or depthwise 3x3 over the
  // N x N layout (2D). Input and output are [.., L, E].
  Tensor<T> local_conv(const Tensor<T>& a) const {
    const Index e = cfg_.inner();
    if (cfg_.mode.kind == ScanModeKind::seq1d)
      return transpose_last2(conv1d(transpose_last2(a), conv_w_, conv_b_, e, true));
    const auto map = reshape_seq(a, SeqDirection::to_map, cfg_.mode.side);
    return reshape_seq(conv2d(map, conv_w_, conv_b_, Conv2dOptions{1, 1, e}), SeqDirection::to_seq);
  }

  Tensor<T> scan_one(const Tensor<T>& seq, std::size_t r) const {
    if (cfg_.identity_scan) return seq;
    return ssm::selective_scan(seq, s6_[cfg_.shared_routes ? 0 : r], cfg_.scan).y;
  }

  Tensor<T> scan(const Tensor<T>& a) const {
    if (cfg_.mode.kind == ScanModeKind::seq1d) return scan_one(a, 0);
    const auto routes = ssm::make_routes(cfg_.mode.side);
    const auto seqs = ssm::cross_scan_expand_seq(a, routes);
    std::array<Tensor<T>, 4> ys;
    for (std::size_t r = 0; r < 4; ++r) ys[r] = scan_one(seqs[r], r);
    return scale(ssm::cross_scan_merge_seq(ys, routes), T{0.25});
  }

  MambaBlockConfig cfg_;
  LayerNormLayer<T> pre_norm_;
  LinearLayer<T> w_in_;
  Tensor<T> conv_w_, conv_b_;
  std::vector<ssm::S6Params<T>> s6_;
  LinearLayer<T> w_out_;
};

/// Learnable scalar count of a block built from `cfg`.
inline Index block_param_count(const MambaBlockConfig& cfg) {
  cfg.validate();
  const Index dm = cfg.d_model, e = cfg.inner(), s = cfg.d_state;
  const Index taps = cfg.mode.kind == ScanModeKind::seq1d ? 4 : 9;
  const Index s6 = e * s /*a_log*/ + e * e /*w_delta*/ + e /*dt_bias*/ + 2 * e * s /*w_b, w_c*/ + e /*d_skip*/;
  return 2 * dm + dm * 2 * e + e * taps + e + cfg.param_routes() * s6 + e * dm;
}

}  // namespace pmamba::mamba
