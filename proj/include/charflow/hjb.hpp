/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <vector>

#include "charflow/problem.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// Uniform node grid over a box (nodes include both endpoints), row-major
/// flattening with the last axis fastest.
struct GridSpec {
  Box box;
  std::vector<int> shape;  // nodes per dimension, each >= 3

  int dim() const { return static_cast<int>(shape.size()); }
  std::size_t node_count() const;
  double spacing(int d) const { return box.width(d) / (shape[d] - 1); }
  double min_spacing() const;
  Vector node(std::size_t flat) const;
  std::size_t flat_index(const std::vector<int>& idx) const;
  /// Flat index of the node nearest to x; *max_offset receives the largest
  /// componentwise distance in units of the spacing.
  std::size_t nearest_node(const Vector& x, double* max_offset = nullptr) const;

  /// Multilinear interpolation of nodal values at x. Clamp mode projects x
  /// into the box (one-sided at the boundary); periodic mode wraps it.
  double interpolate(const Vector& values, Vector x, BoundaryMode mode) const;

  static GridSpec make(Box box, std::vector<int> shape);
};

/// V(t,x) sampled on a space-time grid; slice 0 is the initial data.
struct ValueGrid {
  GridSpec grid;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<Vector> values;  // K+1 slices of node_count() entries

  std::size_t steps() const { return values.empty() ? 0 : values.size() - 1; }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  const Vector& slice(std::size_t k) const { return values[k]; }
};

struct HjbSettings {
  int control_samples = 33;  // per control dimension
  unsigned threads = 1;
  HamiltonianOptions hamiltonian;
};

/// Semi-Lagrangian dynamic-programming solve of
///   V_t + sup_u { <V_x, f(x,u)> - L(x,u,t) } = 0,  V(0,.) = phi0,
/// marching V(t_{k+1}, x) = min_u { dt L(x,u,t_k) + V~(t_k, x - dt f(x,u)) }
/// over the sampled control box plus the Hamiltonian argmax at the
/// interpolated gradient. Preconditions: T is a multiple of dt and the
/// CFL-like guard dt <= h / max sampled |f| holds (componentwise).
ValueGrid solve_hjb(const ControlProblem& prob, const Expr& phi0, const GridSpec& grid,
                    double T, double dt, const HjbSettings& settings = {});

/// Same scheme from explicit initial nodal values, starting at time t0.
ValueGrid solve_hjb_from(const ControlProblem& prob, Vector initial_values,
                         const GridSpec& grid, double t0, double T, double dt,
                         const HjbSettings& settings = {});

/// Solution semigroup T_s: phi -> viscosity solution at time s with initial
/// data phi (nodal values). T_0 is the identity; s must be a multiple of dt.
class SemigroupOp {
 public:
  SemigroupOp(const ControlProblem& prob, GridSpec grid, double dt,
              HjbSettings settings = {});
  Vector apply(const Vector& phi, double s) const;
  const GridSpec& grid() const { return grid_; }

 private:
  const ControlProblem* prob_;
  GridSpec grid_;
  double dt_;
  HjbSettings settings_;
};

/// Independent Hopf-Lax oracle, valid only for the quadratic family
/// (f = u, L = |u|^2/2, unbounded controls): min_y phi0(y) + |x-y|^2/(2t)
/// over the domain box via a fine grid refined by ternary search.
/// Rejects problems outside the quadratic family.
double hopf_lax_oracle(const ControlProblem& prob, const Expr& phi0, double t,
                       const Vector& x);

/// |D_t V + H(x, D_x V)| by central differences at interior nodes, excluding a
/// 3-node neighborhood of kinks detected in the initial slice.
struct ResidualReport {
  double median = 0.0;
  double p90 = 0.0;
  std::size_t count = 0;
};

ResidualReport viscosity_residual(const ValueGrid& grid, const ControlProblem& prob,
                                  const HamiltonianOptions& hopts = {});

}  // namespace charflow
