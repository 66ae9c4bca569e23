// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <vector>

#include "pmamba/core/ops.hpp"

namespace pmamba {

enum class NormKind { batch, layer };
enum class StatsMode { train, eval };

inline constexpr double kNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

/// Batch normalization over the channel axis of [C,H,W] or [B,C,H,W].
///
/// Train mode normalizes with the biased batch variance and folds the
/// unbiased variance into the running stats with momentum 0.1. Eval mode
/// uses the running stats only.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, StatsMode mode, double momentum = kBatchNormMomentum,
                     double eps = kNormEps) {
  const Index axis = detail::channel_axis(x.shape());
  const auto [batch, channels, plane] = detail::split_axis(x.shape(), axis);
  for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
    if (p->rank() != 1 || p->dim(0) != channels)
      throw ShapeError("batch_norm: affine/stat params must have " + std::to_string(channels) + " entries");
  const Index count = batch * plane;
  std::vector<T> mu(static_cast<std::size_t>(channels)), inv_std(static_cast<std::size_t>(channels));
  auto xs = x.data();
  if (mode == StatsMode::train) {
    for (Index c = 0; c < channels; ++c) {
      double s = 0, ss = 0;
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < plane; ++i) s += xs[(b * channels + c) * plane + i];
      const double m = s / static_cast<double>(count);
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < plane; ++i) {
          const double dlt = xs[(b * channels + c) * plane + i] - m;
          ss += dlt * dlt;
        }
      const double var = ss / static_cast<double>(count);
      mu[static_cast<std::size_t>(c)] = static_cast<T>(m);
      inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(var + eps));
      const double unbiased = count > 1 ? ss / static_cast<double>(count - 1) : var;
      running_mean[c] = static_cast<T>((1.0 - momentum) * running_mean[c] + momentum * m);
      running_var[c] = static_cast<T>((1.0 - momentum) * running_var[c] + momentum * unbiased);
    }
  } else {
    for (Index c = 0; c < channels; ++c) {
      mu[static_cast<std::size_t>(c)] = running_mean[c];
      inv_std[static_cast<std::size_t>(c)] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[c]) + eps));
    }
  }
  auto out = Tensor<T>::empty(x.shape());
  auto ys = out.data();
  std::vector<T> xhat(mode == StatsMode::train ? xs.size() : 0);
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < channels; ++c) {
      const T m = mu[static_cast<std::size_t>(c)], is = inv_std[static_cast<std::size_t>(c)];
      const T gm = gamma[c], bt = beta[c];
      for (Index i = 0; i < plane; ++i) {
        const Index k = (b * channels + c) * plane + i;
        const T h = (xs[k] - m) * is;
        if (!xhat.empty()) xhat[k] = h;
        ys[k] = gm * h + bt;
      }
    }
  detail::check_finite(out, "batch_norm");
  if (detail::any_requires_grad(x, gamma, beta)) {
    detail::attach(out, {x, gamma, beta},
                   [x, gamma, beta, mu, inv_std, xhat = std::move(xhat), batch = batch, channels = channels,
                    plane = plane, count, train = mode == StatsMode::train](TensorNode<T>& self) {
                     auto xs = x.data();
                     auto hat = [&](Index k, Index c) {
                       return train ? xhat[k] : (xs[k] - mu[static_cast<std::size_t>(c)]) * inv_std[static_cast<std::size_t>(c)];
                     };
                     for (Index c = 0; c < channels; ++c) {
                       double sum_dy = 0, sum_dy_h = 0;
                       for (Index b = 0; b < batch; ++b)
                         for (Index i = 0; i < plane; ++i) {
                           const Index k = (b * channels + c) * plane + i;
                           sum_dy += self.grad[k];
                           sum_dy_h += self.grad[k] * hat(k, c);
                         }
                       if (gamma.requires_grad()) detail::grad_of(gamma)[c] += static_cast<T>(sum_dy_h);
                       if (beta.requires_grad()) detail::grad_of(beta)[c] += static_cast<T>(sum_dy);
                       if (!x.requires_grad()) continue;
                       auto g = detail::grad_of(x);
                       const T gis = gamma[c] * inv_std[static_cast<std::size_t>(c)];
                       const T mean_dy = static_cast<T>(sum_dy / static_cast<double>(count));
                       const T mean_dyh = static_cast<T>(sum_dy_h / static_cast<double>(count));
                       for (Index b = 0; b < batch; ++b)
                         for (Index i = 0; i < plane; ++i) {
                           const Index k = (b * channels + c) * plane + i;
                           g[k] += train ? gis * (self.grad[k] - mean_dy - hat(k, c) * mean_dyh) : gis * self.grad[k];
                         }
                     }
                   });
  }
  return out;
}

/// Layer normalization over the last dim.
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps = kNormEps) {
  const Index d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw ShapeError("layer_norm: affine params must have " + std::to_string(d) + " entries");
  const Index rows = x.numel() / d;
  auto out = Tensor<T>::empty(x.shape());
  std::vector<T> xhat(static_cast<std::size_t>(x.numel())), inv_std(static_cast<std::size_t>(rows));
  auto xs = x.data();
  auto ys = out.data();
  for (Index r = 0; r < rows; ++r) {
    double s = 0, ss = 0;
    for (Index j = 0; j < d; ++j) s += xs[r * d + j];
    const double m = s / static_cast<double>(d);
    for (Index j = 0; j < d; ++j) ss += (xs[r * d + j] - m) * (xs[r * d + j] - m);
    const T is = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(d) + eps));
    inv_std[static_cast<std::size_t>(r)] = is;
    for (Index j = 0; j < d; ++j) {
      const T h = (xs[r * d + j] - static_cast<T>(m)) * is;
      xhat[static_cast<std::size_t>(r * d + j)] = h;
      ys[r * d + j] = gamma[j] * h + beta[j];
    }
  }
  detail::check_finite(out, "layer_norm");
  if (detail::any_requires_grad(x, gamma, beta)) {
    detail::attach(out, {x, gamma, beta},
                   [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, d](TensorNode<T>& self) {
                     T* gg = gamma.requires_grad() ? detail::grad_of(gamma).data() : nullptr;
                     T* gb = beta.requires_grad() ? detail::grad_of(beta).data() : nullptr;
                     T* gx = x.requires_grad() ? detail::grad_of(x).data() : nullptr;
                     for (Index r = 0; r < rows; ++r) {
                       double sum_g = 0, sum_gh = 0;
                       for (Index j = 0; j < d; ++j) {
                         const Index k = r * d + j;
                         const T dy = self.grad[k];
                         const T h = xhat[static_cast<std::size_t>(k)];
                         if (gg) gg[j] += dy * h;
                         if (gb) gb[j] += dy;
                         const double gh = static_cast<double>(dy) * gamma[j];
                         sum_g += gh;
                         sum_gh += gh * h;
                       }
                       if (!gx) continue;
                       const T mg = static_cast<T>(sum_g / static_cast<double>(d));
                       const T mgh = static_cast<T>(sum_gh / static_cast<double>(d));
                       const T is = inv_std[static_cast<std::size_t>(r)];
                       for (Index j = 0; j < d; ++j) {
                         const Index k = r * d + j;
                         gx[k] += is * (self.grad[k] * gamma[j] - mg - xhat[static_cast<std::size_t>(k)] * mgh);
                       }
                     }
                   });
  }
  return out;
}

}  // namespace pmamba
