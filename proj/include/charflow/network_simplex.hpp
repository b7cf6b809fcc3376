/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include "charflow/types.hpp"

namespace charflow {

/// Exact solution of the bipartite transportation LP
///   min sum_ij c_ij x_ij,  sum_j x_ij = supply_i,  sum_i x_ij = demand_j,
/// by a spanning-tree network simplex with Bland's anti-cycling rule
/// (smallest-index entering and leaving arcs). +inf cost entries mark
/// forbidden arcs that carry no flow. row/col potentials satisfy
/// col[j] - row[i] <= c_ij with equality on basic arcs, so they are dual
/// optimal in the Kantorovich sign convention.
struct TransportLpResult {
  Matrix flow;
  Vector row_potential;
  Vector col_potential;
  double objective = 0.0;
  std::size_t pivots = 0;
};

TransportLpResult transport_network_simplex(const Matrix& cost, const Vector& supply,
                                            const Vector& demand);

/// Max-flow feasibility probe (Dinic) for instances with forbidden arcs:
/// true when some plan moves all supply to all demand over finite arcs.
bool transport_feasible(const Matrix& cost, const Vector& supply, const Vector& demand);

}  // namespace charflow
