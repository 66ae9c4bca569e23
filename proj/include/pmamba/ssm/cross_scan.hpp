// Copyright 2026 The PyramidMamba-Desk Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <string_view>
#include <vector>

#include "pmamba/core/ops.hpp"

namespace pmamba::ssm {

enum class RouteId { row_fwd = 0, row_bwd = 1, col_fwd = 2, col_bwd = 3 };

inline constexpr std::array<RouteId, 4> kAllRoutes{RouteId::row_fwd, RouteId::row_bwd, RouteId::col_fwd,
                                                   RouteId::col_bwd};

inline std::string_view route_name(RouteId id) {
  switch (id) {
    case RouteId::row_fwd:
      return "row_fwd";
    case RouteId::row_bwd:
      return "row_bwd";
    case RouteId::col_fwd:
      return "col_fwd";
    case RouteId::col_bwd:
      return "col_bwd";
  }
  return "?";
}

/// One of the four traversal orders of an N x N grid. `order[i]` is the
/// row-major position visited at step i; `inverse` undoes it.
struct ScanRoute {
  RouteId id;
  std::vector<Index> order;
  std::vector<Index> inverse;
};

inline ScanRoute make_route(RouteId id, Index side) {
  const Index n = side * side;
  ScanRoute r{id, std::vector<Index>(static_cast<std::size_t>(n)), std::vector<Index>(static_cast<std::size_t>(n))};
  for (Index i = 0; i < n; ++i) {
    Index pos = 0;
    switch (id) {
      case RouteId::row_fwd:
        pos = i;
        break;
      case RouteId::row_bwd:
        pos = n - 1 - i;
        break;
      case RouteId::col_fwd:
        pos = (i % side) * side + i / side;
        break;
      case RouteId::col_bwd: {
        const Index j = n - 1 - i;
        pos = (j % side) * side + j / side;
        break;
      }
    }
    r.order[static_cast<std::size_t>(i)] = pos;
  }
  for (Index i = 0; i < n; ++i) r.inverse[static_cast<std::size_t>(r.order[static_cast<std::size_t>(i)])] = i;
  return r;
}

inline std::array<ScanRoute, 4> make_routes(Index side) {
  return {make_route(RouteId::row_fwd, side), make_route(RouteId::row_bwd, side), make_route(RouteId::col_fwd, side),
          make_route(RouteId::col_bwd, side)};
}

/// Row-major sequence [.., N*N, C] -> the four route orderings.
template <class T>
std::array<Tensor<T>, 4> cross_scan_expand_seq(const Tensor<T>& seq, const std::array<ScanRoute, 4>& routes) {
  return {permute_rows(seq, routes[0].order), permute_rows(seq, routes[1].order), permute_rows(seq, routes[2].order),
          permute_rows(seq, routes[3].order)};
}

/// Inverse-permutes each route back to row-major order and sums them
/// (route id order).
template <class T>
Tensor<T> cross_scan_merge_seq(const std::array<Tensor<T>, 4>& ys, const std::array<ScanRoute, 4>& routes) {
  for (const auto& y : ys)
    if (y.shape() != ys[0].shape()) throw ShapeError("cross_scan_merge: route shapes disagree");
  auto acc = permute_rows(ys[0], routes[0].inverse);
  for (std::size_t r = 1; r < 4; ++r) acc = add(acc, permute_rows(ys[r], routes[r].inverse));
  return acc;
}

/// [C,N,N] (or [B,C,N,N]) map -> four [N*N, C] sequences.
template <class T>
std::array<Tensor<T>, 4> cross_scan_expand(const Tensor<T>& x_map) {
  const Index axis = pmamba::detail::channel_axis(x_map.shape());
  if (x_map.dim(axis + 1) != x_map.dim(axis + 2)) throw ShapeError("cross_scan_expand: map must be square");
  const auto routes = make_routes(x_map.dim(axis + 1));
  return cross_scan_expand_seq(reshape_seq(x_map, SeqDirection::to_seq), routes);
}

/// Four [N*N, C] route outputs -> summed [C,N,N] map.
template <class T>
Tensor<T> cross_scan_merge(const std::array<Tensor<T>, 4>& ys) {
  const Index l = ys[0].dim(-2);
  Index side = 0;
  while (side * side < l) ++side;
  if (side * side != l) throw ShapeError("cross_scan_merge: length is not a perfect square");
  const auto routes = make_routes(side);
  return reshape_seq(cross_scan_merge_seq(ys, routes), SeqDirection::to_map, side);
}

}  // namespace pmamba::ssm
