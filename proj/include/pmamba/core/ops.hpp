// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "pmamba/core/tensor.hpp"

namespace pmamba {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {

template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df, const char* name) {
  auto out = Tensor<T>::empty(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < xs.size(); ++i) ys[i] = f(xs[i]);
  check_finite(out, name);
  if (any_requires_grad(x)) {
    attach(out, {x}, [x, df](TensorNode<T>& self) {
      auto g = grad_of(x);
      auto xs = x.data();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * df(xs[i], self.data[i]);
    });
  }
  return out;
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = Tensor<T>::empty(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] + y[i];
  if (detail::any_requires_grad(a, b)) {
    detail::attach(out, {a, b}, [a, b](TensorNode<T>& self) {
      for (const Tensor<T>* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto g = detail::grad_of(*t);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = Tensor<T>::empty(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] - y[i];
  if (detail::any_requires_grad(a, b)) {
    detail::attach(out, {a, b}, [a, b](TensorNode<T>& self) {
      if (a.requires_grad()) {
        auto g = detail::grad_of(a);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
      }
      if (b.requires_grad()) {
        auto g = detail::grad_of(b);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = Tensor<T>::empty(a.shape());
  auto o = out.data();
  auto x = a.data();
  auto y = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x[i] * y[i];
  detail::check_finite(out, "mul");
  if (detail::any_requires_grad(a, b)) {
    detail::attach(out, {a, b}, [a, b](TensorNode<T>& self) {
      if (a.requires_grad()) {
        auto g = detail::grad_of(a);
        auto y = b.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * y[i];
      }
      if (b.requires_grad()) {
        auto g = detail::grad_of(b);
        auto x = a.data();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * x[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return detail::unary(
      x, [s](T v) { return v * s; }, [s](T, T) { return s; }, "scale");
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  long double acc = 0;
  for (T v : x.data()) acc += v;
  auto out = Tensor<T>::scalar(static_cast<T>(acc));
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (T& v : g) v += self.grad[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T{1} / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Activations

enum class Activation { relu, gelu, silu, softplus, softmax_channel };

template <class T>
T softplus_value(T v) {
  // log(1 + e^v) without overflow.
  return std::max(v, T{0}) + std::log1p(std::exp(-std::abs(v)));
}

template <class T>
T sigmoid_value(T v) {
  if (v >= 0) return T{1} / (T{1} + std::exp(-v));
  const T e = std::exp(v);
  return e / (T{1} + e);
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v > 0 ? v : T{0}; }, [](T v, T) { return v > 0 ? T{1} : T{0}; }, "relu");
}

/// Exact erf form.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  constexpr T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  constexpr T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
  return detail::unary(
      x, [](T v) { return T{0.5} * v * (T{1} + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        return T{0.5} * (T{1} + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(T{-0.5} * v * v);
      },
      "gelu");
}

template <class T>
Tensor<T> silu(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return v * sigmoid_value(v); },
      [](T v, T) {
        const T s = sigmoid_value(v);
        return s * (T{1} + v * (T{1} - s));
      },
      "silu");
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
  return detail::unary(
      x, [](T v) { return softplus_value(v); }, [](T v, T) { return sigmoid_value(v); }, "softplus");
}

namespace detail {

/// (outer, channels, inner) decomposition around the class/channel axis.
inline std::array<Index, 3> split_axis(const Shape& s, Index axis) {
  Index outer = 1, inner = 1;
  for (Index i = 0; i < axis; ++i) outer *= s[static_cast<std::size_t>(i)];
  for (Index i = axis + 1; i < static_cast<Index>(s.size()); ++i) inner *= s[static_cast<std::size_t>(i)];
  return {outer, s[static_cast<std::size_t>(axis)], inner};
}

/// Channel axis of a map tensor: 0 for [C,H,W], 1 for [B,C,H,W].
inline Index channel_axis(const Shape& s) {
  if (s.size() == 3) return 0;
  if (s.size() == 4) return 1;
  throw ShapeError("expected [C,H,W] or [B,C,H,W], got " + to_string(s));
}

}  // namespace detail

/// Softmax over the channel axis of a [C,H,W] or [B,C,H,W] tensor.
template <class T>
Tensor<T> softmax_channels(const Tensor<T>& x) {
  const auto [outer, k, inner] = detail::split_axis(x.shape(), detail::channel_axis(x.shape()));
  auto out = Tensor<T>::empty(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (Index o = 0; o < outer; ++o) {
    for (Index i = 0; i < inner; ++i) {
      const Index base = o * k * inner + i;
      T mx = xs[base];
      for (Index c = 1; c < k; ++c) mx = std::max(mx, xs[base + c * inner]);
      T z = 0;
      for (Index c = 0; c < k; ++c) z += (ys[base + c * inner] = std::exp(xs[base + c * inner] - mx));
      for (Index c = 0; c < k; ++c) ys[base + c * inner] /= z;
    }
  }
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x, outer = outer, k = k, inner = inner](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index o = 0; o < outer; ++o) {
        for (Index i = 0; i < inner; ++i) {
          const Index base = o * k * inner + i;
          T dot = 0;
          for (Index c = 0; c < k; ++c) dot += self.grad[base + c * inner] * self.data[base + c * inner];
          for (Index c = 0; c < k; ++c)
            g[base + c * inner] += self.data[base + c * inner] * (self.grad[base + c * inner] - dot);
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> activation(const Tensor<T>& x, Activation kind) {
  switch (kind) {
    case Activation::relu:
      return relu(x);
    case Activation::gelu:
      return gelu(x);
    case Activation::silu:
      return silu(x);
    case Activation::softplus:
      return softplus(x);
    case Activation::softmax_channel:
      return softmax_channels(x);
  }
  throw UsageError("unknown activation");
}

/// Inverted dropout. Identity in eval mode or when p == 0.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool training, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(static_cast<std::size_t>(x.numel()));
  for (T& m : mask) m = rng.uniform() < p ? T{0} : keep_scale;
  auto out = Tensor<T>::empty(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = xs[i] * mask[i];
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x, mask = std::move(mask)](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Linear algebra

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) throw ShapeError("matmul expects rank-2 operands");
  const Index m = a.dim(0), k = a.dim(1), p = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError("matmul inner dims disagree: " + to_string(a.shape()) + " x " + to_string(b.shape()));
  auto out = Tensor<T>::empty({m, p});
  MatMap<T>(out.data().data(), m, p).noalias() =
      ConstMatMap<T>(a.data().data(), m, k) * ConstMatMap<T>(b.data().data(), k, p);
  detail::check_finite(out, "matmul");
  if (detail::any_requires_grad(a, b)) {
    detail::attach(out, {a, b}, [a, b, m, k, p](TensorNode<T>& self) {
      ConstMatMap<T> go(self.grad.data(), m, p);
      if (a.requires_grad())
        MatMap<T>(detail::grad_of(a).data(), m, k).noalias() += go * ConstMatMap<T>(b.data().data(), k, p).transpose();
      if (b.requires_grad())
        MatMap<T>(detail::grad_of(b).data(), k, p).noalias() += ConstMatMap<T>(a.data().data(), m, k).transpose() * go;
    });
  }
  return out;
}

/// x[..., in] · w[in, out] + bias[out]. Leading dims are flattened.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias = {}) {
  if (w.rank() != 2) throw ShapeError("linear weight must be [in, out]");
  const Index in = w.dim(0), outd = w.dim(1);
  if (x.dim(-1) != in)
    throw ShapeError("linear: input width " + std::to_string(x.dim(-1)) + " vs weight " + to_string(w.shape()));
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != outd)) throw ShapeError("linear: bias shape");
  const Index rows = x.numel() / in;
  Shape shape = x.shape();
  shape.back() = outd;
  auto out = Tensor<T>::empty(shape);
  MatMap<T> o(out.data().data(), rows, outd);
  o.noalias() = ConstMatMap<T>(x.data().data(), rows, in) * ConstMatMap<T>(w.data().data(), in, outd);
  if (bias.defined()) o.rowwise() += Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.data().data(), outd);
  detail::check_finite(out, "linear");
  if (detail::any_requires_grad(x, w, bias)) {
    detail::attach(out, {x, w, bias}, [x, w, bias, rows, in, outd](TensorNode<T>& self) {
      ConstMatMap<T> go(self.grad.data(), rows, outd);
      if (x.requires_grad())
        MatMap<T>(detail::grad_of(x).data(), rows, in).noalias() +=
            go * ConstMatMap<T>(w.data().data(), in, outd).transpose();
      if (w.requires_grad())
        MatMap<T>(detail::grad_of(w).data(), in, outd).noalias() +=
            ConstMatMap<T>(x.data().data(), rows, in).transpose() * go;
      if (bias.defined() && bias.requires_grad()) {
        Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> gb(detail::grad_of(bias).data(), outd);
        gb += go.colwise().sum();
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layout

/// Stacks [C_i,H,W] (or [B,C_i,H,W]) maps along channels in argument order.
template <class T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& inputs) {
  if (inputs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = inputs.front().shape();
  const Index axis = detail::channel_axis(s0);
  const Index batch = axis == 1 ? s0[0] : 1;
  const Index plane = s0[static_cast<std::size_t>(axis + 1)] * s0[static_cast<std::size_t>(axis + 2)];
  Index total_c = 0;
  for (const auto& t : inputs) {
    const Shape& s = t.shape();
    if (s.size() != s0.size() || (axis == 1 && s[0] != batch) ||
        s[static_cast<std::size_t>(axis + 1)] != s0[static_cast<std::size_t>(axis + 1)] ||
        s[static_cast<std::size_t>(axis + 2)] != s0[static_cast<std::size_t>(axis + 2)])
      throw ShapeError("concat_channels: spatial mismatch " + to_string(s) + " vs " + to_string(s0));
    total_c += s[static_cast<std::size_t>(axis)];
  }
  Shape shape = s0;
  shape[static_cast<std::size_t>(axis)] = total_c;
  auto out = Tensor<T>::empty(shape);
  auto o = out.data();
  Index c_off = 0;
  for (const auto& t : inputs) {
    const Index c = t.dim(axis);
    auto src = t.data();
    for (Index b = 0; b < batch; ++b)
      std::copy_n(src.begin() + b * c * plane, c * plane, o.begin() + (b * total_c + c_off) * plane);
    c_off += c;
  }
  bool any = false;
  for (const auto& t : inputs) any = any || detail::any_requires_grad(t);
  if (any) {
    auto n = out.node();
    n->requires_grad = true;
    for (const auto& t : inputs)
      if (t.requires_grad()) n->parents.push_back(t.node());
    n->backward_fn = [inputs, batch, plane, total_c](TensorNode<T>& self) {
      Index c_off = 0;
      for (const auto& t : inputs) {
        const Index c = t.dim(detail::channel_axis(t.shape()));
        if (t.requires_grad()) {
          auto g = detail::grad_of(t);
          for (Index b = 0; b < batch; ++b)
            for (Index i = 0; i < c * plane; ++i) g[b * c * plane + i] += self.grad[(b * total_c + c_off) * plane + i];
        }
        c_off += c;
      }
    };
  }
  return out;
}

/// Channels [begin, end) of a map tensor.
template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, Index begin, Index end) {
  const Index axis = detail::channel_axis(x.shape());
  const Index c = x.dim(axis);
  if (begin < 0 || end > c || begin >= end) throw ShapeError("slice_channels: bad range");
  const Index batch = axis == 1 ? x.dim(0) : 1;
  const Index plane = x.dim(axis + 1) * x.dim(axis + 2);
  Shape shape = x.shape();
  shape[static_cast<std::size_t>(axis)] = end - begin;
  auto out = Tensor<T>::empty(shape);
  const Index w = end - begin;
  for (Index b = 0; b < batch; ++b)
    std::copy_n(x.data().begin() + (b * c + begin) * plane, w * plane, out.data().begin() + b * w * plane);
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x, batch, plane, c, begin, w](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index b = 0; b < batch; ++b)
        for (Index i = 0; i < w * plane; ++i) g[(b * c + begin) * plane + i] += self.grad[b * w * plane + i];
    });
  }
  return out;
}

/// Splits the last dim into [0, n0) and [n0, end).
template <class T>
std::pair<Tensor<T>, Tensor<T>> split_last(const Tensor<T>& x, Index n0) {
  const Index d = x.dim(-1);
  if (n0 <= 0 || n0 >= d) throw ShapeError("split_last: bad split point");
  const Index rows = x.numel() / d;
  auto part = [&](Index begin, Index width) {
    Shape shape = x.shape();
    shape.back() = width;
    auto out = Tensor<T>::empty(shape);
    for (Index r = 0; r < rows; ++r)
      std::copy_n(x.data().begin() + r * d + begin, width, out.data().begin() + r * width);
    if (detail::any_requires_grad(x)) {
      detail::attach(out, {x}, [x, rows, d, begin, width](TensorNode<T>& self) {
        auto g = detail::grad_of(x);
        for (Index r = 0; r < rows; ++r)
          for (Index j = 0; j < width; ++j) g[r * d + begin + j] += self.grad[r * width + j];
      });
    }
    return out;
  };
  return {part(0, n0), part(n0, d - n0)};
}

/// Swaps the last two dims: [..., A, B] -> [..., B, A].
template <class T>
Tensor<T> transpose_last2(const Tensor<T>& x) {
  if (x.rank() < 2) throw ShapeError("transpose_last2 needs rank >= 2");
  const Index a = x.dim(-2), b = x.dim(-1);
  const Index batch = x.numel() / (a * b);
  Shape shape = x.shape();
  std::swap(shape[shape.size() - 1], shape[shape.size() - 2]);
  auto out = Tensor<T>::empty(shape);
  auto xs = x.data();
  auto ys = out.data();
  for (Index n = 0; n < batch; ++n)
    for (Index i = 0; i < a; ++i)
      for (Index j = 0; j < b; ++j) ys[n * a * b + j * a + i] = xs[n * a * b + i * b + j];
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x, a, b, batch](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index n = 0; n < batch; ++n)
        for (Index i = 0; i < a; ++i)
          for (Index j = 0; j < b; ++j) g[n * a * b + i * b + j] += self.grad[n * a * b + j * a + i];
    });
  }
  return out;
}

enum class SeqDirection { to_seq, to_map };

/// [C,N,N] <-> [N*N, C] (optionally with a leading batch dim), row-major
/// spatial order. `to_map` needs the side length N.
template <class T>
Tensor<T> reshape_seq(const Tensor<T>& x, SeqDirection dir, Index side = 0) {
  if (dir == SeqDirection::to_seq) {
    const Index axis = detail::channel_axis(x.shape());
    if (x.dim(axis + 1) != x.dim(axis + 2)) throw ShapeError("reshape_seq: map must be square");
    const Index c = x.dim(axis), l = x.dim(axis + 1) * x.dim(axis + 2);
    auto t = transpose_last2(x.reshape(axis == 1 ? Shape{x.dim(0), c, l} : Shape{c, l}));
    return t;
  }
  if (x.rank() != 2 && x.rank() != 3) throw ShapeError("reshape_seq: sequence must be [L,C] or [B,L,C]");
  const Index l = x.dim(-2), c = x.dim(-1);
  if (side <= 0 || side * side != l)
    throw ShapeError("reshape_seq: length " + std::to_string(l) + " is not " + std::to_string(side) + "^2");
  auto t = transpose_last2(x);
  return t.reshape(x.rank() == 3 ? Shape{x.dim(0), c, side, side} : Shape{c, side, side});
}

/// Gathers sequence rows: out[..., i, :] = x[..., perm[i], :].
template <class T>
Tensor<T> permute_rows(const Tensor<T>& x, const std::vector<Index>& perm) {
  if (x.rank() < 2) throw ShapeError("permute_rows needs rank >= 2");
  const Index l = x.dim(-2), c = x.dim(-1);
  if (static_cast<Index>(perm.size()) != l) throw ShapeError("permute_rows: permutation length mismatch");
  const Index batch = x.numel() / (l * c);
  auto out = Tensor<T>::empty(x.shape());
  auto xs = x.data();
  auto ys = out.data();
  for (Index n = 0; n < batch; ++n)
    for (Index i = 0; i < l; ++i)
      std::copy_n(xs.begin() + (n * l + perm[static_cast<std::size_t>(i)]) * c, c, ys.begin() + (n * l + i) * c);
  if (detail::any_requires_grad(x)) {
    detail::attach(out, {x}, [x, perm, l, c, batch](TensorNode<T>& self) {
      auto g = detail::grad_of(x);
      for (Index n = 0; n < batch; ++n)
        for (Index i = 0; i < l; ++i) {
          const Index src = (n * l + perm[static_cast<std::size_t>(i)]) * c;
          for (Index j = 0; j < c; ++j) g[src + j] += self.grad[(n * l + i) * c + j];
        }
    });
  }
  return out;
}

}  // namespace pmamba
