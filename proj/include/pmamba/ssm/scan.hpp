// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <span>
#include <thread>
#include <vector>

#include "pmamba/core/tensor.hpp"

// Selective state-space scan kernels.
//
// The recurrence, per channel d and state s:
//   a_t = exp(delta_t[d] * A[d,s])
//   h_t = a_t * h_{t-1} + f(delta_t[d], A[d,s]) * B_t[s] * x_t[d]
//   y_t[d] = sum_s C_t[s] * h_t[d,s] + d_skip[d] * x_t[d]
// with f = (exp(delta*A) - 1) / A for zero-order hold, or f = delta for the
// simplified (Euler) drive.

namespace pmamba::ssm {

enum class Discretization { zoh, simplified };
enum class ScanImpl { sequential, parallel };

inline constexpr double kZohSeriesThreshold = 1e-6;
inline constexpr Index kDefaultChunk = 64;

/// Discretized coefficients of one (delta, A) pair plus their partials.
template <class T>
struct ZohCoeffs {
  T a_bar;  // exp(delta * A)
  T f;      // b_bar = f * B
  T da_ddelta, da_dA, df_ddelta, df_dA;
};

template <class T>
inline ZohCoeffs<T> zoh_coeffs(T delta, T a, Discretization disc) {
  const T z = delta * a;
  ZohCoeffs<T> c{};
  c.a_bar = std::exp(z);
  c.da_ddelta = a * c.a_bar;
  c.da_dA = delta * c.a_bar;
  if (disc == Discretization::simplified) {
    c.f = delta;
    c.df_ddelta = T{1};
    c.df_dA = T{0};
    return c;
  }
  if (std::abs(z) < static_cast<T>(kZohSeriesThreshold))
    c.f = delta * (T{1} + z / T{2});
  else
    c.f = std::expm1(z) / a;
  c.df_ddelta = c.a_bar;
  // d/dA of expm1(delta*A)/A = delta^2 * (z e^z - e^z + 1) / z^2.
  if (std::abs(z) < T{1e-2})
    c.df_dA = delta * delta * (T{1} / 2 + z * (T{1} / 3 + z * (T{1} / 8 + z * (T{1} / 30 + z / 144))));
  else
    c.df_dA = (z * c.a_bar - std::expm1(z)) / (a * a);
  return c;
}

/// Element of the linear recurrence h -> a*h + b.
template <class T>
struct ScanElement {
  T a{1};
  T b{0};

  static constexpr ScanElement identity() { return {T{1}, T{0}}; }
  T apply(T h) const { return a * h + b; }
};

/// first then second: (a1, b1) o (a2, b2) = (a1 a2, a2 b1 + b2).
template <class T>
constexpr ScanElement<T> compose(const ScanElement<T>& first, const ScanElement<T>& second) {
  return {first.a * second.a, second.a * first.b + second.b};
}

/// Inclusive scan of h_t = e_t(h_{t-1}) from h0, written to `out`.
///
/// Elements are folded per chunk, chunk prefixes come from a Blelloch
/// up-sweep/down-sweep over the chunk aggregates, and each chunk is then
/// replayed from its carry-in. Chunk 0 is evaluated exactly like the
/// sequential recurrence.
template <class T>
void blelloch_scan(std::span<const ScanElement<T>> elems, T h0, std::span<T> out, Index chunk = kDefaultChunk) {
  const Index n = static_cast<Index>(elems.size());
  if (n == 0) return;
  if (chunk < 1) chunk = 1;
  const Index nchunks = (n + chunk - 1) / chunk;
  Index p = 1;
  while (p < nchunks) p *= 2;
  std::vector<ScanElement<T>> agg(static_cast<std::size_t>(p), ScanElement<T>::identity());
  for (Index k = 0; k < nchunks; ++k) {
    const Index end = std::min(n, (k + 1) * chunk);
    ScanElement<T> acc = elems[static_cast<std::size_t>(k * chunk)];
    for (Index t = k * chunk + 1; t < end; ++t) acc = compose(acc, elems[static_cast<std::size_t>(t)]);
    agg[static_cast<std::size_t>(k)] = acc;
  }
  for (Index stride = 1; stride < p; stride *= 2)
    for (Index i = 2 * stride - 1; i < p; i += 2 * stride)
      agg[static_cast<std::size_t>(i)] = compose(agg[static_cast<std::size_t>(i - stride)], agg[static_cast<std::size_t>(i)]);
  agg[static_cast<std::size_t>(p - 1)] = ScanElement<T>::identity();
  for (Index stride = p / 2; stride >= 1; stride /= 2)
    for (Index i = 2 * stride - 1; i < p; i += 2 * stride) {
      const auto left = agg[static_cast<std::size_t>(i - stride)];
      agg[static_cast<std::size_t>(i - stride)] = agg[static_cast<std::size_t>(i)];
      agg[static_cast<std::size_t>(i)] = compose(agg[static_cast<std::size_t>(i)], left);
    }
  for (Index k = 0; k < nchunks; ++k) {
    T h = k == 0 ? h0 : agg[static_cast<std::size_t>(k)].apply(h0);
    const Index end = std::min(n, (k + 1) * chunk);
    for (Index t = k * chunk; t < end; ++t) {
      const auto& e = elems[static_cast<std::size_t>(t)];
      h = e.a * h + e.b;
      out[static_cast<std::size_t>(t)] = h;
    }
  }
}

/// One sequence's worth of scan inputs (row-major views).
template <class T>
struct ScanProblem {
  Index len = 0, channels = 0, states = 0;
  const T* x = nullptr;      // [L, D]
  const T* delta = nullptr;  // [L, D], strictly positive
  const T* a = nullptr;      // [D, S], strictly negative
  const T* b = nullptr;      // [L, S]
  const T* c = nullptr;      // [L, S]
  const T* d_skip = nullptr; // [D] or null
  Discretization disc = Discretization::zoh;
};

struct ScanOptions {
  ScanImpl impl = ScanImpl::sequential;
  Discretization disc = Discretization::zoh;
  Index chunk = kDefaultChunk;
  int workers = 1;
};

namespace detail {

template <class Fn>
void for_each_channel(Index channels, int workers, Fn&& fn) {
  if (workers <= 1 || channels < 2) {
    for (Index d = 0; d < channels; ++d) fn(d);
    return;
  }
  const Index nw = std::min<Index>(workers, channels);
  std::vector<std::jthread> pool;
  for (Index w = 0; w < nw; ++w)
    pool.emplace_back([&, w] {
      for (Index d = w; d < channels; d += nw) fn(d);
    });
}

}  // namespace detail

/// Forward scan. `h_all` ([L, D, S]) is filled when non-null; `h0` and
/// `h_final` ([D, S]) are optional.
template <class T>
void scan_forward(const ScanProblem<T>& p, const T* h0, T* y, T* h_final, T* h_all, const ScanOptions& opt) {
  const Index L = p.len, D = p.channels, S = p.states;
  if (opt.impl == ScanImpl::sequential) {
    std::vector<T> h(static_cast<std::size_t>(D * S), T{0});
    if (h0) std::copy_n(h0, D * S, h.begin());
    for (Index t = 0; t < L; ++t) {
      for (Index d = 0; d < D; ++d) {
        const T xt = p.x[t * D + d];
        const T dt = p.delta[t * D + d];
        T acc = 0;
        for (Index s = 0; s < S; ++s) {
          const auto k = zoh_coeffs(dt, p.a[d * S + s], p.disc);
          T& hs = h[static_cast<std::size_t>(d * S + s)];
          hs = k.a_bar * hs + k.f * p.b[t * S + s] * xt;
          acc += p.c[t * S + s] * hs;
          if (h_all) h_all[(t * D + d) * S + s] = hs;
        }
        y[t * D + d] = acc + (p.d_skip ? p.d_skip[d] * xt : T{0});
      }
    }
    if (h_final) std::copy(h.begin(), h.end(), h_final);
    return;
  }

  for (Index i = 0; i < L * D; ++i) y[i] = 0;
  detail::for_each_channel(D, opt.workers, [&](Index d) {
    std::vector<ScanElement<T>> elems(static_cast<std::size_t>(L));
    std::vector<T> hs(static_cast<std::size_t>(L));
    for (Index s = 0; s < S; ++s) {
      const T a = p.a[d * S + s];
      for (Index t = 0; t < L; ++t) {
        const auto k = zoh_coeffs(p.delta[t * D + d], a, p.disc);
        elems[static_cast<std::size_t>(t)] = {k.a_bar, k.f * p.b[t * S + s] * p.x[t * D + d]};
      }
      blelloch_scan<T>(elems, h0 ? h0[d * S + s] : T{0}, hs, opt.chunk);
      for (Index t = 0; t < L; ++t) {
        y[t * D + d] += p.c[t * S + s] * hs[static_cast<std::size_t>(t)];
        if (h_all) h_all[(t * D + d) * S + s] = hs[static_cast<std::size_t>(t)];
      }
      if (h_final) h_final[d * S + s] = L > 0 ? hs[static_cast<std::size_t>(L - 1)] : (h0 ? h0[d * S + s] : T{0});
    }
    if (p.d_skip)
      for (Index t = 0; t < L; ++t) y[t * D + d] += p.d_skip[d] * p.x[t * D + d];
  });
}

/// Gradient buffers for `scan_backward`; each may be null. All accumulate.
template <class T>
struct ScanGrads {
  T* x = nullptr;       // [L, D]
  T* delta = nullptr;   // [L, D]
  T* a = nullptr;       // [D, S]
  T* b = nullptr;       // [L, S]
  T* c = nullptr;       // [L, S]
  T* d_skip = nullptr;  // [D]
};

/// Reverse pass given upstream dL/dy and the forward states. The adjoint
/// g_t = C_t gy_t + a_{t+1} g_{t+1} is itself a linear recurrence run
/// backwards in time; the parallel variant evaluates it with the same
/// chunked Blelloch scan as the forward pass.
template <class T>
void scan_backward(const ScanProblem<T>& p, const T* h0, const T* h_all, const T* gy, ScanGrads<T> g,
                   const ScanOptions& opt) {
  const Index L = p.len, D = p.channels, S = p.states;
  std::vector<T> adj;  // [L, D, S]
  adj.resize(static_cast<std::size_t>(L * D * S));
  if (opt.impl == ScanImpl::sequential) {
    std::vector<T> gnext(static_cast<std::size_t>(D * S), T{0}), anext(static_cast<std::size_t>(D * S), T{0});
    for (Index t = L - 1; t >= 0; --t)
      for (Index d = 0; d < D; ++d)
        for (Index s = 0; s < S; ++s) {
          const std::size_t k = static_cast<std::size_t>(d * S + s);
          const T gt = p.c[t * S + s] * gy[t * D + d] + anext[k] * gnext[k];
          adj[static_cast<std::size_t>((t * D + d) * S + s)] = gt;
          gnext[k] = gt;
          anext[k] = std::exp(p.delta[t * D + d] * p.a[d * S + s]);
        }
  } else {
    detail::for_each_channel(D, opt.workers, [&](Index d) {
      std::vector<ScanElement<T>> elems(static_cast<std::size_t>(L));
      std::vector<T> gs(static_cast<std::size_t>(L));
      for (Index s = 0; s < S; ++s) {
        const T a = p.a[d * S + s];
        for (Index r = 0; r < L; ++r) {
          const Index t = L - 1 - r;
          const T a_next = t + 1 < L ? std::exp(p.delta[(t + 1) * D + d] * a) : T{0};
          elems[static_cast<std::size_t>(r)] = {a_next, p.c[t * S + s] * gy[t * D + d]};
        }
        blelloch_scan<T>(elems, T{0}, gs, opt.chunk);
        for (Index r = 0; r < L; ++r) adj[static_cast<std::size_t>(((L - 1 - r) * D + d) * S + s)] = gs[static_cast<std::size_t>(r)];
      }
    });
  }

  for (Index t = 0; t < L; ++t)
    for (Index d = 0; d < D; ++d) {
      const T xt = p.x[t * D + d];
      const T dt = p.delta[t * D + d];
      const T gyt = gy[t * D + d];
      T gx = 0, gdt = 0;
      for (Index s = 0; s < S; ++s) {
        const std::size_t ks = static_cast<std::size_t>((t * D + d) * S + s);
        const T gt = adj[ks];
        const auto k = zoh_coeffs(dt, p.a[d * S + s], p.disc);
        const T hprev = t > 0 ? h_all[ks - static_cast<std::size_t>(D * S)] : (h0 ? h0[d * S + s] : T{0});
        const T bts = p.b[t * S + s];
        const T ga = gt * hprev;
        const T gf = gt * bts * xt;
        if (g.c) g.c[t * S + s] += gyt * h_all[ks];
        if (g.b) g.b[t * S + s] += gt * k.f * xt;
        if (g.a) g.a[d * S + s] += ga * k.da_dA + gf * k.df_dA;
        gx += gt * k.f * bts;
        gdt += ga * k.da_ddelta + gf * k.df_ddelta;
      }
      if (p.d_skip) {
        gx += gyt * p.d_skip[d];
        if (g.d_skip) g.d_skip[d] += gyt * xt;
      }
      if (g.x) g.x[t * D + d] += gx;
      if (g.delta) g.delta[t * D + d] += gdt;
    }
}

// ---------------------------------------------------------------------------
// Discretization and the convolutional (LTI) form

/// Per-token ZOH discretization. Returns (a_bar, b_bar), each [L, D, S].
template <class T>
std::pair<Tensor<T>, Tensor<T>> discretize(const Tensor<T>& a, const Tensor<T>& b_t, const Tensor<T>& delta,
                                           Discretization disc = Discretization::zoh) {
  if (a.rank() != 2 || b_t.rank() != 2 || delta.rank() != 2) throw ShapeError("discretize: expects A[D,S], B[L,S], delta[L,D]");
  const Index D = a.dim(0), S = a.dim(1), L = delta.dim(0);
  if (b_t.dim(0) != L || b_t.dim(1) != S || delta.dim(1) != D) throw ShapeError("discretize: dims disagree");
  for (T v : delta.data())
    if (!(v > 0)) throw DomainError("discretize: delta must be strictly positive");
  auto a_bar = Tensor<T>::empty({L, D, S});
  auto b_bar = Tensor<T>::empty({L, D, S});
  for (Index t = 0; t < L; ++t)
    for (Index d = 0; d < D; ++d)
      for (Index s = 0; s < S; ++s) {
        const auto k = zoh_coeffs(delta[t * D + d], a[d * S + s], disc);
        a_bar[(t * D + d) * S + s] = k.a_bar;
        b_bar[(t * D + d) * S + s] = k.f * b_t[t * S + s];
      }
  return {a_bar, b_bar};
}

/// K_t = sum_s c_s a_s^t b_s for t in [0, L): the structured kernel of a
/// time-invariant single channel.
template <class T>
Tensor<T> lti_kernel(std::span<const T> a_bar, std::span<const T> b_bar, std::span<const T> c, Index len) {
  if (len < 1) throw UsageError("lti_kernel: length must be >= 1");
  if (a_bar.size() != b_bar.size() || a_bar.size() != c.size()) throw ShapeError("lti_kernel: state sizes disagree");
  auto k = Tensor<T>::zeros({len});
  std::vector<T> power(a_bar.size(), T{1});
  for (Index t = 0; t < len; ++t) {
    T acc = 0;
    for (std::size_t s = 0; s < a_bar.size(); ++s) {
      acc += c[s] * power[s] * b_bar[s];
      power[s] *= a_bar[s];
    }
    k[t] = acc;
  }
  return k;
}

/// Causal convolution y_t = sum_{tau <= t} k_tau x_{t - tau}.
template <class T>
Tensor<T> lti_apply(const Tensor<T>& x, const Tensor<T>& k) {
  if (x.rank() != 1 || k.rank() != 1 || x.dim(0) != k.dim(0)) throw ShapeError("lti_apply: x and k must be equal-length vectors");
  const Index L = x.dim(0);
  auto y = Tensor<T>::zeros({L});
  for (Index t = 0; t < L; ++t) {
    T acc = 0;
    for (Index tau = 0; tau <= t; ++tau) acc += k[tau] * x[t - tau];
    y[t] = acc;
  }
  return y;
}

}  // namespace pmamba::ssm
