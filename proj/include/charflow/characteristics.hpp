/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <vector>

#include "charflow/problem.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// One point of a characteristic curve: state X, costate P, transported value U.
struct CharState {
  Vector X;
  Vector P;
  double U = 0.0;
};

/// A characteristic curve sampled on uniform time stamps t0 + k*dt.
struct CharTrajectory {
  Vector seed;
  double t0 = 0.0;
  double dt = 0.0;
  std::vector<CharState> states;  // size K+1; states[0].X == seed

  std::size_t steps() const { return states.empty() ? 0 : states.size() - 1; }
  double time(std::size_t k) const { return t0 + static_cast<double>(k) * dt; }
  double final_time() const { return time(steps()); }
  const CharState& back() const { return states.back(); }
};

/// Tensor seed grid over a box, row-major flattening (last axis fastest).
struct SeedGrid {
  Box box;
  std::vector<int> shape;  // seeds per dimension, each >= 3 for caustic checks

  int dim() const { return static_cast<int>(shape.size()); }
  std::size_t size() const;
  double spacing(int d) const { return box.width(d) / (shape[d] - 1); }
  Vector seed(std::size_t flat) const;
  std::size_t flat_index(const std::vector<int>& idx) const;

  static SeedGrid make(Box box, std::vector<int> shape);
};

/// Characteristic flow of a whole seed grid with per-time Jacobian-determinant
/// estimates of z -> X(t,z) (finite differences across neighboring seeds).
struct FlowMap {
  SeedGrid grid;
  double dt = 0.0;
  double T = 0.0;
  BoundaryMode boundary = BoundaryMode::Clamp;
  std::vector<CharTrajectory> trajectories;  // grid.size(), grid order
  /// dets[k][cell]: determinant estimate at stamp k; at k=0 these are 1.
  std::vector<Vector> dets;

  std::size_t stamps() const { return trajectories.empty() ? 0 : trajectories.front().states.size(); }
};

/// Integrate the characteristic system X' = H_p, P' = -H_x, U' = -H + P.H_p
/// from (z, grad u0(z), u0(z)) with fixed-step RK4. The step actually used is
/// T/ceil(T/dt) so stamps land exactly on [0, T]. Clamp boundaries make an
/// escaping state an error; periodic boundaries wrap the state for evaluation.
CharTrajectory integrate_characteristic(const ControlProblem& prob, const Expr& u0,
                                        const Vector& z, double T, double dt,
                                        const HamiltonianOptions& hopts = {});

/// Same integrator seeded directly with (x0, p0, value0) over [t0, t1]; used by
/// characteristic shooting. enforce_domain=false integrates in free space.
CharTrajectory integrate_characteristic_from(const ControlProblem& prob, const Vector& x0,
                                             const Vector& p0, double value0, double t0,
                                             double t1, double dt, bool enforce_domain,
                                             const HamiltonianOptions& hopts = {});

FlowMap flow_map(const ControlProblem& prob, const Expr& u0, const SeedGrid& grid, double T,
                 double dt, unsigned threads = 1, const HamiltonianOptions& hopts = {});

/// Invertibility horizon estimate T*: the first stamp where a Jacobian
/// determinant estimate changes sign or drops below 1e-6, or where two
/// adjacent characteristics approach within 1e-6 of the seed spacing.
/// Returns T when neither happens (meaning T* >= T).
double caustic_time(const FlowMap& flow);
double caustic_time(const ControlProblem& prob, const Expr& u0, const SeedGrid& grid,
                    double T, double dt, unsigned threads = 1,
                    const HamiltonianOptions& hopts = {});

/// Classical solution u(t,x) = U(t, Z(t,x)) by inverting the deformed seed
/// grid (simplex-local barycentric solve). Valid for t below the caustic time;
/// x outside the deformed hull is an error.
double reconstruct_solution(const FlowMap& flow, double t, const Vector& x);

}  // namespace charflow
