// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "pmamba/core/conv.hpp"
#include "pmamba/core/norm.hpp"
#include "pmamba/core/ops.hpp"

namespace pmamba {

enum class ParamGroup { encoder, decoder };

/// A learnable tensor with a unique path-like name.
template <class T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  ParamGroup group = ParamGroup::decoder;
};

/// Named view over a model's parameters and non-learnable buffers (batch-norm
/// running stats). Entries share storage with the owning layers.
template <class T>
class ParamSet {
 public:
  void add(const std::string& name, Tensor<T>& value, ParamGroup group) {
    if (!value.defined()) return;
    check_unique(name);
    value.set_requires_grad(true);
    params_.push_back({name, value, group});
  }
  void add_buffer(const std::string& name, Tensor<T>& value) {
    check_unique(name);
    buffers_.push_back({name, value, ParamGroup::decoder});
  }

  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  const std::vector<Parameter<T>>& buffers() const { return buffers_; }

  Index scalar_count() const {
    Index n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return &p;
    for (const auto& p : buffers_)
      if (p.name == name) return &p;
    return nullptr;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

 private:
  void check_unique(const std::string& name) {
    if (!names_.emplace(name, 0).second) throw ConfigError("duplicate parameter name: " + name);
  }

  std::vector<Parameter<T>> params_;
  std::vector<Parameter<T>> buffers_;
  std::map<std::string, int> names_;
};

/// Forward-pass context shared by every layer.
struct ForwardCtx {
  StatsMode mode = StatsMode::eval;
  Rng* dropout_rng = nullptr;
  bool training() const { return mode == StatsMode::train; }
};

/// Deterministic per-name initialization streams.
class Initializer {
 public:
  explicit Initializer(std::uint64_t seed) : base_(Rng(seed, Rng::hash("init"))) {}
  Rng stream(const std::string& name) const { return base_.split(name); }

  /// Uniform in +-sqrt(1 / fan_in).
  template <class T>
  void fan_in_uniform(Tensor<T>& t, const std::string& name, Index fan_in) const {
    Rng r = stream(name);
    const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
    for (T& v : t.data()) v = static_cast<T>(r.uniform(-bound, bound));
  }

 private:
  Rng base_;
};

template <class T>
struct Conv2dLayer {
  Tensor<T> weight;
  Tensor<T> bias;
  Conv2dOptions opt;

  Conv2dLayer() = default;
  Conv2dLayer(Index cin, Index cout, Index k, Conv2dOptions o = {}, bool with_bias = true)
      : weight(Tensor<T>::zeros({cout, cin / o.groups, k, k})), opt(o) {
    if (with_bias) bias = Tensor<T>::zeros({cout});
  }

  void init(const Initializer& ini, const std::string& prefix) {
    ini.fan_in_uniform(weight, prefix + ".weight", weight.dim(1) * weight.dim(2) * weight.dim(3));
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    ps.add(prefix + ".weight", weight, g);
    if (bias.defined()) ps.add(prefix + ".bias", bias, g);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, opt); }
};

template <class T>
struct BatchNormLayer {
  Tensor<T> gamma, beta, running_mean, running_var;

  BatchNormLayer() = default;
  explicit BatchNormLayer(Index c)
      : gamma(Tensor<T>::ones({c})),
        beta(Tensor<T>::zeros({c})),
        running_mean(Tensor<T>::zeros({c})),
        running_var(Tensor<T>::ones({c})) {}

  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    ps.add(prefix + ".gamma", gamma, g);
    ps.add(prefix + ".beta", beta, g);
    ps.add_buffer(prefix + ".running_mean", running_mean);
    ps.add_buffer(prefix + ".running_var", running_var);
  }
  Tensor<T> operator()(const Tensor<T>& x, const ForwardCtx& ctx) {
    return batch_norm(x, gamma, beta, running_mean, running_var, ctx.mode);
  }
};

template <class T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;

  LayerNormLayer() = default;
  explicit LayerNormLayer(Index d) : gamma(Tensor<T>::ones({d})), beta(Tensor<T>::zeros({d})) {}

  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    ps.add(prefix + ".gamma", gamma, g);
    ps.add(prefix + ".beta", beta, g);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

/// x[..., in] -> x[..., out], weight stored [in, out].
template <class T>
struct LinearLayer {
  Tensor<T> weight;
  Tensor<T> bias;

  LinearLayer() = default;
  LinearLayer(Index in, Index out, bool with_bias = false) : weight(Tensor<T>::zeros({in, out})) {
    if (with_bias) bias = Tensor<T>::zeros({out});
  }

  void init(const Initializer& ini, const std::string& prefix) {
    ini.fan_in_uniform(weight, prefix + ".weight", weight.dim(0));
  }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    ps.add(prefix + ".weight", weight, g);
    if (bias.defined()) ps.add(prefix + ".bias", bias, g);
  }
  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }
};

/// conv -> batch norm -> relu.
template <class T>
struct ConvBnRelu {
  Conv2dLayer<T> conv;
  BatchNormLayer<T> bn;

  ConvBnRelu() = default;
  ConvBnRelu(Index cin, Index cout, Index k, Index stride = 1)
      : conv(cin, cout, k, Conv2dOptions{stride, k / 2, 1}, false), bn(cout) {}

  void init(const Initializer& ini, const std::string& prefix) { conv.init(ini, prefix + ".conv"); }
  void collect(ParamSet<T>& ps, const std::string& prefix, ParamGroup g) {
    conv.collect(ps, prefix + ".conv", g);
    bn.collect(ps, prefix + ".bn", g);
  }
  Tensor<T> operator()(const Tensor<T>& x, const ForwardCtx& ctx) { return relu(bn(conv(x), ctx)); }
};

}  // namespace pmamba
