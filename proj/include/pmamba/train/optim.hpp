// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "pmamba/core/nn.hpp"
#include "pmamba/net/checkpoint.hpp"

namespace pmamba::train {

/// Linear warmup from 0 to the base rate over `warmup_steps`, then
/// base * (1 - progress)^power, reaching 0 at `total_steps`.
struct LrSchedule {
  double base_encoder = 6e-5;
  double base_decoder = 6e-4;
  double power = 0.9;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 1;

  void validate() const {
    if (base_encoder < 0 || base_decoder < 0) throw ConfigError("lr schedule: base rates must be >= 0");
    if (total_steps < 1 || warmup_steps < 0 || warmup_steps > total_steps)
      throw ConfigError("lr schedule: need 0 <= warmup_steps <= total_steps and total_steps >= 1");
  }

  double factor(std::int64_t step) const {
    if (step < 0 || step > total_steps)
      throw UsageError("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
    if (step < warmup_steps) return static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    const double progress =
        static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
    return std::pow(1.0 - progress, power);
  }

  double lr_at(std::int64_t step, ParamGroup g) const {
    return (g == ParamGroup::encoder ? base_encoder : base_decoder) * factor(step);
  }
};

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled-weight-decay Adam over a ParamSet. Moments are keyed by
/// parameter name.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  std::int64_t steps() const { return t_; }

  /// One update with per-group learning rates. Parameters without a gradient
  /// buffer are left alone. A non-finite gradient aborts the step before any
  /// parameter or moment changes.
  void step(ParamSet<T>& ps, double lr_encoder, double lr_decoder) {
    for (const auto& p : ps.params()) {
      if (!p.value.has_grad()) continue;
      for (T g : p.value.grad())
        if (!std::isfinite(g)) throw DomainError("adamw: non-finite gradient in parameter '" + p.name + "'");
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& p : ps.params()) {
      if (!p.value.has_grad()) continue;
      const double lr = p.group == ParamGroup::encoder ? lr_encoder : lr_decoder;
      auto& st = state_for(p);
      auto w = p.value.data();
      const auto g = p.value.grad();
      const T decay = static_cast<T>(1.0 - lr * cfg_.weight_decay);
      const T b1 = static_cast<T>(cfg_.beta1), b2 = static_cast<T>(cfg_.beta2);
      for (std::size_t i = 0; i < w.size(); ++i) {
        st.m[i] = b1 * st.m[i] + (T{1} - b1) * g[i];
        st.v[i] = b2 * st.v[i] + (T{1} - b2) * g[i] * g[i];
        const double mhat = static_cast<double>(st.m[i]) / bc1;
        const double vhat = static_cast<double>(st.v[i]) / bc2;
        if (lr != 0.0) w[i] = w[i] * decay - static_cast<T>(lr * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
  }

  /// Moments as checkpoint records (opt.m.<name>, opt.v.<name>).
  std::vector<net::NamedTensor<T>> snapshot(const ParamSet<T>& ps) const {
    std::vector<net::NamedTensor<T>> out;
    for (const auto& p : ps.params()) {
      const auto it = state_.find(p.name);
      if (it == state_.end()) continue;
      out.push_back({"opt.m." + p.name, p.value.shape(), it->second.m});
      out.push_back({"opt.v." + p.name, p.value.shape(), it->second.v});
    }
    return out;
  }

  /// Restores moments from checkpoint records and sets the step counter.
  /// Parameters without stored moments start from zero moments.
  void restore(const ParamSet<T>& ps, const net::Checkpoint<T>& ck, std::int64_t step) {
    std::map<std::string, Moments> next;
    for (const auto& p : ps.params()) {
      const auto* m = ck.find("opt.m." + p.name);
      const auto* v = ck.find("opt.v." + p.name);
      if ((m == nullptr) != (v == nullptr)) throw IntegrityError("adamw: incomplete moments for '" + p.name + "'");
      if (m == nullptr) continue;
      if (m->shape != p.value.shape() || v->shape != p.value.shape())
        throw ShapeError("adamw: moment shape mismatch for '" + p.name + "'");
      next[p.name] = Moments{m->values, v->values};
    }
    state_ = std::move(next);
    t_ = step;
  }

 private:
  struct Moments {
    std::vector<T> m, v;
  };

  Moments& state_for(const Parameter<T>& p) {
    auto& st = state_[p.name];
    if (st.m.empty()) {
      st.m.assign(static_cast<std::size_t>(p.value.numel()), T{0});
      st.v.assign(static_cast<std::size_t>(p.value.numel()), T{0});
    }
    return st;
  }

  AdamWConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace pmamba::train
