// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "pmamba/core/nn.hpp"
#include "pmamba/core/resample.hpp"

namespace pmamba::decoder {

/// A feature map together with its stride relative to the network input.
template <class T>
struct FeatureMap {
  Tensor<T> tensor;  // [C,H,W] or [B,C,H,W]
  Index stride = 1;

  Index channels() const { return tensor.dim(pmamba::detail::channel_axis(tensor.shape())); }
  Index height() const { return tensor.dim(-2); }
  Index width() const { return tensor.dim(-1); }
};

/// Dense arithmetic pooling scales {1, 1 + step, 1 + 2 step, ...} up to
/// M = N - 1, with step = max(1, floor(N / 8)).
inline std::vector<Index> dspp_scales(Index n) {
  if (n < 2) throw ConfigError("dspp_scales: N must be >= 2, got " + std::to_string(n));
  const Index step = std::max<Index>(1, n / 8);
  std::vector<Index> out;
  for (Index i = 1; i <= n - 1; i += step) out.push_back(i);
  return out;
}

/// Classic pyramid pooling scales {1, 2, 3, 6}, keeping those that fit N.
inline std::vector<Index> spp_scales(Index n) {
  std::vector<Index> out;
  for (Index i : {1, 2, 3, 6})
    if (i <= n) out.push_back(i);
  return out;
}

struct PoolingConfig {
  Index channels = 0;         // C
  Index side = 0;             // N
  std::vector<Index> scales;  // ascending
  Index branch_channels = 0;  // output channels of each branch's 1x1 conv

  static PoolingConfig dense(Index c, Index n) { return {c, n, dspp_scales(n), c}; }
  static PoolingConfig classic(Index c, Index n) { return {c, n, spp_scales(n), std::max<Index>(1, c / 4)}; }

  Index out_channels() const { return channels + static_cast<Index>(scales.size()) * branch_channels; }
};

/// Pyramid pooling: X_ms = concat(X, U_1, ...), with
/// U_i = upsample(conv1x1(avg_pool_to(X, i))) for every scale i.
template <class T>
class PyramidPooling {
 public:
  explicit PyramidPooling(PoolingConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.scales.empty()) throw ConfigError("pyramid pooling: no scales");
    for (std::size_t k = 0; k < cfg_.scales.size(); ++k) {
      if (cfg_.scales[k] < 1 || cfg_.scales[k] > cfg_.side) throw ConfigError("pyramid pooling: scale out of range");
      if (k > 0 && cfg_.scales[k] <= cfg_.scales[k - 1]) throw ConfigError("pyramid pooling: scales must ascend");
    }
    for (std::size_t k = 0; k < cfg_.scales.size(); ++k)
      branches_.emplace_back(cfg_.channels, cfg_.branch_channels, 1, Conv2dOptions{}, true);
  }

  const PoolingConfig& config() const { return cfg_; }
  std::vector<Conv2dLayer<T>>& branches() { return branches_; }

  void init(const Initializer& ini, const std::string& prefix) {
    for (std::size_t k = 0; k < branches_.size(); ++k) branches_[k].init(ini, branch_name(prefix, k));
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    for (std::size_t k = 0; k < branches_.size(); ++k) branches_[k].collect(ps, branch_name(prefix, k), g);
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const Index axis = pmamba::detail::channel_axis(x.shape());
    if (x.dim(axis) != cfg_.channels || x.dim(-1) != cfg_.side || x.dim(-2) != cfg_.side)
      throw ShapeError("pyramid pooling: expected C=" + std::to_string(cfg_.channels) + ", N=" +
                       std::to_string(cfg_.side) + ", got " + to_string(x.shape()));
    std::vector<Tensor<T>> parts{x};
    for (std::size_t k = 0; k < branches_.size(); ++k) {
      const auto pooled = branches_[k](avg_pool_to(x, cfg_.scales[k]));
      parts.push_back(bilinear_upsample(pooled, cfg_.side, cfg_.side));
    }
    return concat_channels(parts);
  }

 private:
  static std::string branch_name(const std::string& prefix, std::size_t k) {
    return prefix + ".branch" + std::to_string(k);
  }

  PoolingConfig cfg_;
  std::vector<Conv2dLayer<T>> branches_;
};

}  // namespace pmamba::decoder
