/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <cstdint>
#include <vector>

#include "charflow/hjb.hpp"
#include "charflow/problem.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// Endpoint cost query: connect x at t0 to y at t1.
struct CostQuery {
  Vector x, y;
  double t0 = 0.0;
  double t1 = 1.0;
};

enum class CostStatus { Ok, NotConverged, Infeasible };
enum class CostMethod { Shooting, Transcription, Oracle };

struct CostResult {
  CostStatus status = CostStatus::NotConverged;
  double value = 0.0;  // valid when status == Ok
  CostMethod method = CostMethod::Shooting;
  Vector p0;                     // initial costate (shooting)
  std::vector<Vector> path;      // state samples of the returned trajectory
  double terminal_gap = 0.0;     // |x(t1) - y| of the returned trajectory

  bool ok() const { return status == CostStatus::Ok; }
};

struct ShootingSettings {
  double dt = 1e-3;            // characteristic integration step
  int starts = 8;              // p0 in {0, +-unit axes, seeded randoms}
  bool exhaustive = false;     // try every start and keep the cheapest
  int max_iterations = 60;     // damped Newton iterations per start
  double residual_tol = 1e-8;  // terminal match requirement |X(t1) - y|
  std::uint64_t seed = 911;
  HamiltonianOptions hamiltonian;
};

struct TranscriptionSettings {
  double rho_init = 1e2;  // endpoint penalty continuation start
  double rho_max = 1e8;
  int iterations_per_stage = 600;
  double grad_tol = 1e-9;
  double gap_tol = 0.02;  // terminal gap above which the solve is NOT_CONVERGED
};

/// Characteristic shooting (Newton on p0 so that X(t1; x, p0) = y); the cost
/// accumulates as int(P.Hp - H) = int L along the trajectory. Starts are tried
/// in a fixed order; the first converged start wins unless exhaustive is set.
CostResult cost_shooting(const ControlProblem& prob, const CostQuery& q,
                         const ShootingSettings& settings = {});

/// Direct transcription: piecewise-constant control on N intervals, forward
/// Euler states, quadratic endpoint penalty with rho continuation, projected
/// gradient descent with adjoint gradients and backtracking line search.
CostResult cost_transcription(const ControlProblem& prob, const CostQuery& q, int intervals,
                              const TranscriptionSettings& settings = {});

/// Independent dynamic-programming oracle: value iteration on the HJB grid
/// with point initial data (0 at x, kPointSourceBig elsewhere), read at y.
/// x and y must lie on grid nodes. Values >= kPointSourceBig/2 mean the target
/// is unreachable. 1-D and 2-D only.
inline constexpr double kPointSourceBig = 1e6;
double cost_dp_oracle(const ControlProblem& prob, const CostQuery& q, const GridSpec& grid,
                      double dt, const HjbSettings& settings = {});

/// Shooting-then-transcription policy used by the matrix builder: an entry is
/// INFEASIBLE when shooting fails to converge and transcription ends with a
/// terminal gap above settings.transcription.gap_tol.
struct CostSettings {
  ShootingSettings shooting;
  TranscriptionSettings transcription;
  int transcription_intervals = 50;
  bool keep_paths = true;
};

enum class CostPolicy { ShootingThenTranscription, ShootingOnly, TranscriptionOnly };

CostResult compute_cost(const ControlProblem& prob, const CostQuery& q,
                        const CostSettings& settings = {},
                        CostPolicy policy = CostPolicy::ShootingThenTranscription);

/// Dense endpoint cost matrix; +inf entries mark INFEASIBLE pairs.
struct CostMatrix {
  std::vector<Vector> rows;  // x_i
  std::vector<Vector> cols;  // y_j
  Matrix values;             // costs; +inf = INFEASIBLE
  std::vector<std::vector<CostStatus>> status;

  bool infeasible(Index i, Index j) const { return std::isinf(values(i, j)); }
};

CostMatrix cost_matrix(const ControlProblem& prob, const std::vector<Vector>& xs,
                       const std::vector<Vector>& ys, const CostSettings& settings = {},
                       CostPolicy policy = CostPolicy::ShootingThenTranscription,
                       unsigned threads = 1, double t0 = 0.0, double t1 = 1.0);

}  // namespace charflow
