// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "pmamba/core/error.hpp"
#include "pmamba/core/rng.hpp"

namespace pmamba {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline void check_shape(const Shape& shape) {
  if (shape.empty()) throw ShapeError("tensor shape must have at least one dim");
  for (Index d : shape)
    if (d < 1) throw ShapeError("tensor dims must be >= 1, got " + to_string(shape));
}

namespace detail {
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Disables graph recording in its scope (evaluation, optimizer updates).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Storage with a fixed base alignment. Eigen picks vectorized or scalar
/// code paths from the runtime address of a mapped buffer, and the two paths
/// round differently; a fixed alignment keeps results bit-reproducible.
template <class T>
using AlignedVector = std::vector<T, Eigen::aligned_allocator<T>>;

template <class T>
struct TensorNode {
  Shape shape;
  AlignedVector<T> data;
  AlignedVector<T> grad;  // empty until something accumulates into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward_fn;

  bool is_leaf() const { return parents.empty(); }

  std::span<T> ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

enum class FillMode { zeros, ones, uniform, normal };

/// Dense row-major tensor handle with an optional gradient buffer.
///
/// Copies share the underlying node. Ops never mutate their inputs; an op's
/// output records a backward closure when grad mode is on and any input
/// requires grad.
template <class T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor scalar must be floating point");

 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor empty(Shape shape) {
    check_shape(shape);
    auto n = std::make_shared<Node>();
    n->data.resize(static_cast<std::size_t>(numel_of(shape)));
    n->shape = std::move(shape);
    return Tensor(std::move(n));
  }
  static Tensor full(Shape shape, T value) {
    auto t = empty(std::move(shape));
    std::fill(t.node_->data.begin(), t.node_->data.end(), value);
    return t;
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }
  static Tensor ones(Shape shape) { return full(std::move(shape), T{1}); }
  static Tensor from(Shape shape, const std::vector<T>& values) {
    return from_storage(std::move(shape), AlignedVector<T>(values.begin(), values.end()));
  }
  static Tensor from_storage(Shape shape, AlignedVector<T> values) {
    check_shape(shape);
    if (static_cast<Index>(values.size()) != numel_of(shape))
      throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                       to_string(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->data = std::move(values);
    return Tensor(std::move(n));
  }
  static Tensor scalar(T v) { return from({1}, {v}); }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  Index rank() const { return static_cast<Index>(node_->shape.size()); }
  Index dim(Index i) const {
    if (i < 0) i += rank();
    return node_->shape.at(static_cast<std::size_t>(i));
  }
  Index numel() const { return static_cast<Index>(node_->data.size()); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> grad_mut() { return node_->ensure_grad(); }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  T item() const {
    if (numel() != 1) throw UsageError("item() on tensor of shape " + to_string(shape()));
    return node_->data[0];
  }
  T operator[](Index i) const { return node_->data[static_cast<std::size_t>(i)]; }
  T& operator[](Index i) { return node_->data[static_cast<std::size_t>(i)]; }

  /// Element access by full multi-index (tests and small helpers only).
  T at(std::initializer_list<Index> idx) const { return node_->data[offset(idx)]; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true) {
    node_->requires_grad = on;
    return *this;
  }

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const {
    auto t = from_storage(shape(), node_->data);
    return t;
  }
  Tensor clone() const { return detach(); }

  /// Same data viewed under another shape of equal size. Differentiable.
  Tensor reshape(Shape new_shape) const;

  std::shared_ptr<Node> node() const { return node_; }

  std::size_t offset(std::initializer_list<Index> idx) const {
    if (idx.size() != node_->shape.size()) throw ShapeError("index rank mismatch");
    std::size_t off = 0;
    std::size_t k = 0;
    for (Index i : idx) {
      const Index d = node_->shape[k++];
      if (i < 0 || i >= d) throw ShapeError("index out of range");
      off = off * static_cast<std::size_t>(d) + static_cast<std::size_t>(i);
    }
    return off;
  }

 private:
  std::shared_ptr<Node> node_;
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

namespace detail {

template <class T, class... Ts>
bool any_requires_grad(const Tensor<T>& first, const Ts&... rest) {
  if (!grad_enabled()) return false;
  bool any = first.defined() && first.requires_grad();
  ((any = any || (rest.defined() && rest.requires_grad())), ...);
  return any;
}

inline bool& finite_check_flag() {
  thread_local bool enabled = true;
  return enabled;
}

/// Rejects NaN/Inf produced by a forward op.
template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_check_flag()) return;
  for (T v : t.data())
    if (!std::isfinite(v)) throw DomainError(std::string("non-finite value produced by ") + op);
}

/// Wires `out` into the graph. `fn` receives the output node (whose grad is
/// populated) and must accumulate into the inputs it captured.
template <class T, class Fn>
void attach(Tensor<T>& out, std::initializer_list<Tensor<T>> inputs, Fn&& fn) {
  auto n = out.node();
  n->requires_grad = true;
  for (const auto& in : inputs)
    if (in.defined() && in.requires_grad()) n->parents.push_back(in.node());
  n->backward_fn = std::forward<Fn>(fn);
}

template <class T>
std::span<T> grad_of(const Tensor<T>& t) {
  return t.node()->ensure_grad();
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar. Leaf grads accumulate across
/// calls; intermediate grads are reset on every call.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1)
    throw UsageError("backward() requires a scalar loss");
  if (!loss.requires_grad()) throw UsageError("backward() on a tensor that does not require grad");

  using Node = TensorNode<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order)
    if (!n->is_leaf()) n->grad.assign(n->data.size(), T{0});
  loss.node()->ensure_grad()[0] += T{1};
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn(**it);
}

template <class T>
Tensor<T> Tensor<T>::reshape(Shape new_shape) const {
  check_shape(new_shape);
  if (numel_of(new_shape) != numel())
    throw ShapeError("reshape " + to_string(shape()) + " -> " + to_string(new_shape));
  auto out = Tensor<T>::from_storage(std::move(new_shape), node_->data);
  if (detail::any_requires_grad(*this)) {
    Tensor<T> in = *this;
    detail::attach(out, {in}, [in](TensorNode<T>& self) {
      auto g = detail::grad_of(in);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
  }
  return out;
}

/// Creates a tensor of `shape` filled per `mode`. Random modes need `rng`.
/// `uniform` draws from [lo, hi); `normal` from N(lo, hi^2) (mean, stddev).
template <class T>
Tensor<T> tensor_fill(const Shape& shape, FillMode mode, Rng* rng = nullptr, double lo = 0.0,
                      double hi = 1.0) {
  switch (mode) {
    case FillMode::zeros:
      return Tensor<T>::zeros(shape);
    case FillMode::ones:
      return Tensor<T>::ones(shape);
    case FillMode::uniform:
    case FillMode::normal:
      break;
  }
  if (rng == nullptr) throw UsageError("random fill requires an rng");
  auto t = Tensor<T>::empty(shape);
  for (T& v : t.data())
    v = static_cast<T>(mode == FillMode::uniform ? rng->uniform(lo, hi) : lo + hi * rng->normal());
  return t;
}

}  // namespace pmamba
