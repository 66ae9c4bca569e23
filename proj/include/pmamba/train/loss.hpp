// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pmamba/core/ops.hpp"

namespace pmamba::train {

inline constexpr int kIgnoreLabel = 255;

/// Integer class map, [H,W] or [B,H,W] row-major, matching logits [K,H,W] or
/// [B,K,H,W].
struct LabelMap {
  Shape shape;
  std::vector<std::uint8_t> values;

  LabelMap() = default;
  LabelMap(Shape s, std::vector<std::uint8_t> v) : shape(std::move(s)), values(std::move(v)) {
    if (static_cast<Index>(values.size()) != numel_of(shape)) throw ShapeError("label map: size does not match shape");
  }
  static LabelMap filled(Shape s, std::uint8_t v) {
    const auto n = static_cast<std::size_t>(numel_of(s));
    return LabelMap(std::move(s), std::vector<std::uint8_t>(n, v));
  }
  Index numel() const { return static_cast<Index>(values.size()); }
  Index height() const { return shape[shape.size() - 2]; }
  Index width() const { return shape.back(); }
  Index batch() const { return shape.size() == 3 ? shape[0] : 1; }
};

struct LossBreakdown {
  double ce = 0.0;
  double dice = 0.0;
  double total = 0.0;
};

enum class DiceForm { classwise, literal_per_pixel };

struct LossOptions {
  int ignore_label = kIgnoreLabel;
  double smooth = 1.0;
  DiceForm dice_form = DiceForm::classwise;
};

namespace detail {

struct PixelLayout {
  Index batch, k, hw;
};

// Checks logits [K,H,W] / [B,K,H,W] against labels [H,W] / [B,H,W] and the
// label range; returns the loop layout.
template <class T>
PixelLayout check_pair(const Tensor<T>& logits, const LabelMap& labels, int ignore, const char* op) {
  const auto& s = logits.shape();
  if (s.size() != 3 && s.size() != 4) throw ShapeError(std::string(op) + ": logits must be [K,H,W] or [B,K,H,W]");
  const Index b = s.size() == 4 ? s[0] : 1;
  const Index k = s[s.size() - 3];
  const Index hw = s[s.size() - 2] * s.back();
  const Shape want = s.size() == 4 ? Shape{b, s[2], s[3]} : Shape{s[1], s[2]};
  if (labels.shape != want)
    throw ShapeError(std::string(op) + ": labels " + to_string(labels.shape) + " do not match logits " + to_string(s));
  for (std::uint8_t v : labels.values)
    if (v != ignore && v >= k)
      throw DataError(std::string(op) + ": label " + std::to_string(v) + " out of range for " + std::to_string(k) +
                      " classes");
  return {b, k, hw};
}

}  // namespace detail

/// Mean over non-ignored pixels of -log softmax(logits)[label]. Returns 0
/// (with zero gradient) when every pixel is ignored.
template <class T>
Tensor<T> ce_loss(const Tensor<T>& logits, const LabelMap& labels, int ignore_label = kIgnoreLabel) {
  const auto [b, k, hw] = detail::check_pair(logits, labels, ignore_label, "ce_loss");
  const auto x = logits.data();
  Index count = 0;
  long double acc = 0;
  for (Index n = 0; n < b; ++n) {
    for (Index p = 0; p < hw; ++p) {
      const int y = labels.values[static_cast<std::size_t>(n * hw + p)];
      if (y == ignore_label) continue;
      const Index base = n * k * hw + p;
      T mx = x[base];
      for (Index c = 1; c < k; ++c) mx = std::max(mx, x[base + c * hw]);
      long double z = 0;
      for (Index c = 0; c < k; ++c) z += std::exp(static_cast<long double>(x[base + c * hw] - mx));
      acc += std::log(z) - static_cast<long double>(x[base + y * hw] - mx);
      ++count;
    }
  }
  auto out = Tensor<T>::scalar(count == 0 ? T{0} : static_cast<T>(acc / static_cast<long double>(count)));
  pmamba::detail::check_finite(out, "ce_loss");
  if (count > 0 && pmamba::detail::any_requires_grad(logits)) {
    pmamba::detail::attach(out, {logits}, [logits, labels, ignore_label, b = b, k = k, hw = hw, count](TensorNode<T>& self) {
      auto g = pmamba::detail::grad_of(logits);
      const auto xs = logits.data();
      const T scale = self.grad[0] / static_cast<T>(count);
      for (Index n = 0; n < b; ++n) {
        for (Index p = 0; p < hw; ++p) {
          const int y = labels.values[static_cast<std::size_t>(n * hw + p)];
          if (y == ignore_label) continue;
          const Index base = n * k * hw + p;
          T mx = xs[base];
          for (Index c = 1; c < k; ++c) mx = std::max(mx, xs[base + c * hw]);
          T z = 0;
          for (Index c = 0; c < k; ++c) z += std::exp(xs[base + c * hw] - mx);
          for (Index c = 0; c < k; ++c) {
            const T prob = std::exp(xs[base + c * hw] - mx) / z;
            g[base + c * hw] += scale * (prob - (c == y ? T{1} : T{0}));
          }
        }
      }
    });
  }
  return out;
}

/// Dice loss on class probabilities.
///
/// classwise:         1 - (1/K) sum_k (2 sum_n y p + s) / (sum_n y + sum_n p + s)
/// literal_per_pixel: 1 - (2/N) sum_n sum_k y p / (p + y), terms with p + y = 0
///                    skipped
///
/// Sums run over every non-ignored pixel of the batch. An all-ignored input
/// gives 0.
template <class T>
Tensor<T> dice_loss(const Tensor<T>& probs, const LabelMap& labels, const LossOptions& opt = {}) {
  const auto [b, k, hw] = detail::check_pair(probs, labels, opt.ignore_label, "dice_loss");
  const auto p = probs.data();
  const int ignore = opt.ignore_label;

  if (opt.dice_form == DiceForm::literal_per_pixel) {
    Index count = 0;
    long double acc = 0;
    for (Index n = 0; n < b; ++n)
      for (Index px = 0; px < hw; ++px) {
        const int y = labels.values[static_cast<std::size_t>(n * hw + px)];
        if (y == ignore) continue;
        ++count;
        const T pv = p[n * k * hw + y * hw + px];
        acc += static_cast<long double>(pv) / (static_cast<long double>(pv) + 1.0L);
      }
    auto out = Tensor<T>::scalar(count == 0 ? T{0} : static_cast<T>(1.0L - 2.0L * acc / static_cast<long double>(count)));
    if (count > 0 && pmamba::detail::any_requires_grad(probs)) {
      pmamba::detail::attach(out, {probs}, [probs, labels, ignore, b = b, k = k, hw = hw, count](TensorNode<T>& self) {
        auto g = pmamba::detail::grad_of(probs);
        const auto ps = probs.data();
        const T scale = -T{2} * self.grad[0] / static_cast<T>(count);
        for (Index n = 0; n < b; ++n)
          for (Index px = 0; px < hw; ++px) {
            const int y = labels.values[static_cast<std::size_t>(n * hw + px)];
            if (y == ignore) continue;
            const Index at = n * k * hw + y * hw + px;
            g[at] += scale / ((ps[at] + T{1}) * (ps[at] + T{1}));
          }
      });
    }
    return out;
  }

  std::vector<long double> inter(static_cast<std::size_t>(k), 0), psum(static_cast<std::size_t>(k), 0),
      gsum(static_cast<std::size_t>(k), 0);
  Index count = 0;
  for (Index n = 0; n < b; ++n)
    for (Index px = 0; px < hw; ++px) {
      const int y = labels.values[static_cast<std::size_t>(n * hw + px)];
      if (y == ignore) continue;
      ++count;
      for (Index c = 0; c < k; ++c) psum[static_cast<std::size_t>(c)] += p[n * k * hw + c * hw + px];
      inter[static_cast<std::size_t>(y)] += p[n * k * hw + y * hw + px];
      gsum[static_cast<std::size_t>(y)] += 1;
    }
  if (count == 0) return Tensor<T>::scalar(T{0});
  const long double s = opt.smooth;
  long double score = 0;
  std::vector<T> coef_y(static_cast<std::size_t>(k)), coef_all(static_cast<std::size_t>(k));
  for (Index c = 0; c < k; ++c) {
    const auto i = static_cast<std::size_t>(c);
    const long double den = gsum[i] + psum[i] + s;
    const long double num = 2 * inter[i] + s;
    score += num / den;
    // d(num/den)/dp = 2y/den - num/den^2
    coef_y[i] = static_cast<T>(2 / den);
    coef_all[i] = static_cast<T>(-num / (den * den));
  }
  auto out = Tensor<T>::scalar(static_cast<T>(1.0L - score / static_cast<long double>(k)));
  pmamba::detail::check_finite(out, "dice_loss");
  if (pmamba::detail::any_requires_grad(probs)) {
    pmamba::detail::attach(out, {probs}, [probs, labels, ignore, b = b, k = k, hw = hw, coef_y, coef_all](TensorNode<T>& self) {
      auto g = pmamba::detail::grad_of(probs);
      const T scale = -self.grad[0] / static_cast<T>(k);
      for (Index n = 0; n < b; ++n)
        for (Index px = 0; px < hw; ++px) {
          const int y = labels.values[static_cast<std::size_t>(n * hw + px)];
          if (y == ignore) continue;
          for (Index c = 0; c < k; ++c) {
            const auto i = static_cast<std::size_t>(c);
            g[n * k * hw + c * hw + px] += scale * (coef_all[i] + (c == y ? coef_y[i] : T{0}));
          }
        }
    });
  }
  return out;
}

/// L = CE + Dice, returned with its parts.
template <class T>
std::pair<Tensor<T>, LossBreakdown> joint_loss(const Tensor<T>& logits, const LabelMap& labels,
                                               const LossOptions& opt = {}) {
  auto ce = ce_loss(logits, labels, opt.ignore_label);
  auto dice = dice_loss(softmax_channels(logits), labels, opt);
  LossBreakdown lb;
  lb.ce = static_cast<double>(ce.item());
  lb.dice = static_cast<double>(dice.item());
  lb.total = lb.ce + lb.dice;
  return {add(ce, dice), lb};
}

}  // namespace pmamba::train
