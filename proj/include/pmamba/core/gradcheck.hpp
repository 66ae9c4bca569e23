// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "pmamba/core/tensor.hpp"

namespace pmamba {

inline constexpr double kGradStep = 1e-4;
inline constexpr double kGradRelTol = 1e-3;
// Below this magnitude both gradients count as zero. Central differences at
// kGradStep on an O(1) loss carry roundoff near 1e-10, so a floor much
// lower than this would turn noise into relative error.
inline constexpr double kGradAbsFloor = 1e-6;

struct GradCheckResult {
  std::string name;
  int checked = 0;
  double max_rel_err = 0.0;
  int refined = 0;  // coordinates that only agreed at a reduced step
  bool ok() const { return max_rel_err < kGradRelTol; }
};

/// |a - n| / max(|a|, |n|, floor).
inline double grad_rel_err(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), kGradAbsFloor});
  return std::abs(analytic - numeric) / denom;
}

/// Central-difference check of d(loss)/d(inputs) at `samples` coordinates per
/// input (all coordinates when samples <= 0 or the tensor is small).
/// `loss_fn` must rebuild the graph from the current input values.
///
/// With `refinements` > 0, a coordinate that misses the tolerance is
/// re-measured at step/10, step/100, ... and keeps its best error. This is
/// for piecewise-smooth losses (ReLU networks), where a stencil straddling a
/// kink produces a meaningless difference quotient; a wrong analytic
/// gradient stays wrong at every step size.
template <class T>
GradCheckResult gradcheck(const std::string& name, std::vector<Tensor<T>> inputs,
                          const std::function<Tensor<T>()>& loss_fn, int samples = 0, std::uint64_t seed = 1,
                          double step = kGradStep, int refinements = 0) {
  GradCheckResult res{name};
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  backward(loss_fn());
  Rng rng(seed, Rng::hash(name));
  for (auto& t : inputs) {
    std::vector<T> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(t.numel()), T{0});
    std::vector<Index> coords;
    if (samples <= 0 || t.numel() <= samples) {
      for (Index i = 0; i < t.numel(); ++i) coords.push_back(i);
    } else {
      for (int s = 0; s < samples; ++s) coords.push_back(static_cast<Index>(rng.below(static_cast<std::uint64_t>(t.numel()))));
    }
    for (Index i : coords) {
      const T orig = t[i];
      const double a = analytic[static_cast<std::size_t>(i)];
      double best = 0.0;
      double h = step;
      for (int attempt = 0; attempt <= refinements; ++attempt, h /= 10.0) {
        double fp, fm;
        {
          NoGradGuard ng;
          t[i] = static_cast<T>(orig + h);
          fp = loss_fn().item();
          t[i] = static_cast<T>(orig - h);
          fm = loss_fn().item();
          t[i] = orig;
        }
        const double err = grad_rel_err(a, (fp - fm) / (2.0 * h));
        if (attempt == 0 || err < best) best = err;
        if (best < kGradRelTol) {
          if (attempt > 0) ++res.refined;
          break;
        }
      }
      res.max_rel_err = std::max(res.max_rel_err, best);
      ++res.checked;
    }
  }
  return res;
}

}  // namespace pmamba
