/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <functional>
#include <vector>

#include "charflow/cost.hpp"
#include "charflow/problem.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// Finitely supported probability measure: distinct atoms with positive
/// weights summing to 1 (tolerance 1e-12).
struct DiscreteMeasure {
  std::vector<Vector> atoms;
  Vector weights;

  std::size_t size() const { return atoms.size(); }
  int dim() const { return atoms.empty() ? 0 : static_cast<int>(atoms.front().size()); }

  static DiscreteMeasure create(std::vector<Vector> atoms, Vector weights);
};

/// Coupling gamma over mu0 x mu1 atoms with its transport objective.
struct TransportPlan {
  Matrix coupling;
  double objective = 0.0;

  struct SupportArc {
    int i, j;
    double mass;
  };
  std::vector<SupportArc> support(double mass_tol = 1e-12) const;
};

/// Kantorovich potentials on the atoms of mu0 (phi0) and mu1 (phi1), gauged
/// to phi0[0] = 0, admissible (phi1[j] - phi0[i] <= c_ij) and dual optimal.
struct KantorovichPair {
  Vector phi0;
  Vector phi1;
};

struct MkResult {
  TransportPlan plan;
  KantorovichPair pair;  // canonicalized (see dual_potentials)
  double primal = 0.0;
  double dual = 0.0;
  double gap = 0.0;
  std::size_t pivots = 0;
};

/// Exact Monge-Kantorovich solve over finite arcs of C by the in-house
/// network simplex. INFEASIBLE (+inf) entries forbid arcs; feasibility over
/// the remaining arcs is pre-checked by max-flow.
MkResult solve_mk(const Matrix& cost, const DiscreteMeasure& mu0,
                  const DiscreteMeasure& mu1);
MkResult solve_mk(const CostMatrix& cost, const DiscreteMeasure& mu0,
                  const DiscreteMeasure& mu1);

/// The optimal pair read off the final simplex tree, canonicalized: gauge
/// phi0[0] = 0, and support-component offsets centered inside their
/// admissibility slack so that generically slack arcs are strictly slack
/// (spanning-tree duals otherwise tie exactly on zero-flow basic arcs).
/// The strong-duality certificate |primal - dual| <= 1e-8 is enforced.
inline const KantorovichPair& dual_potentials(const MkResult& result) { return result.pair; }

/// c-transforms over the atoms: forward phi1(y_j) = min_i phi0(x_i) + c_ij,
/// backward phi0(x_i) = max_j phi1(y_j) - c_ij. INFEASIBLE arcs are skipped.
Vector c_transform_forward(const Vector& phi0, const Matrix& cost);
Vector c_transform_backward(const Vector& phi1, const Matrix& cost);

/// Support condition (optimal plans pair only cost-tight atoms):
/// max over massy arcs of |phi1[j] - phi0[i] - c_ij|.
struct SupportReport {
  double max_violation = 0.0;
  std::size_t checked = 0;
};
SupportReport check_support_condition(const TransportPlan& plan, const KantorovichPair& pair,
                                      const Matrix& cost);

/// Pointwise duality at one atom pair: c(x_i, y_j) >= phi1[j] - phi0[i] for
/// every supplied pair, with equality when (i,j) carries mass in some plan.
struct PointwiseDualityReport {
  double cost_value = 0.0;
  double best_lower = 0.0;  // max over pairs of phi1[j] - phi0[i]
  double slack = 0.0;       // cost_value - best_lower
  bool on_support = false;
};
PointwiseDualityReport pointwise_duality(int i, int j,
                                         const std::vector<KantorovichPair>& pairs,
                                         const Matrix& cost,
                                         const TransportPlan* plan = nullptr);

/// Endpoint cost evaluator used for off-atom envelope extension.
using CostFn = std::function<double(const Vector&, const Vector&)>;

/// Borel-section seed at x: p0 = grad of the c-transform envelope
/// phi0(x) = max_j phi1[j] - c(x, y_j) by central differences with step
/// grad_step; an argmax switch across the stencil flags the point as
/// non-differentiable (the measure-zero exceptional set). candidate_cap > 0
/// restricts the branches to the strongest candidates at the center (by
/// center score), which callers use when c is expensive.
///
/// preferred_branch >= 0 names the branch carrying the atom's plan mass; a
/// center tie (within tie_tol) is then resolved toward it and p0 is taken
/// from that branch alone: spanning-tree duals tie exactly on zero-flow basic
/// arcs, while the mass-carrying branch attains the potential identity and so
/// seeds the unique characteristic through the atom.
struct SectionResult {
  Vector p0;
  bool differentiable = false;
  int branch = -1;  // envelope argmax at the center
};
SectionResult monge_section(const CostFn& cost_fn, const Vector& phi1,
                            const std::vector<Vector>& y_atoms, const Vector& x,
                            double grad_step, int candidate_cap = 0,
                            const Vector* center_costs = nullptr,
                            int preferred_branch = -1, double tie_tol = 1e-7);

/// Monge map built by flowing each accepted mu0 atom from (x, p0) through the
/// characteristic system for [0, 1] (or [t0, t1] of the settings).
struct MongeMap {
  std::vector<Vector> atoms;   // accepted mu0 atoms
  std::vector<Vector> p0;      // section seeds
  std::vector<Vector> images;  // T(x) = X(t1)
  Vector weights;              // carried unchanged
  std::vector<std::size_t> skipped;  // mu0 atom indices that were excluded
  double skipped_mass = 0.0;
};

struct MongeSettings {
  double grad_step_rel = 1e-4;  // times the domain width
  double flow_dt = 1e-3;
  double t0 = 0.0, t1 = 1.0;
  int envelope_candidates = 0;  // 0 = all branches
  double max_skipped_mass = 0.05;
  unsigned threads = 1;
  HamiltonianOptions hamiltonian;
};

/// Atoms whose plan mass splits over two or more mu1 partners are flagged
/// non-differentiable and skipped (no single characteristic exists there), as
/// are atoms whose envelope argmax genuinely switches across the stencil or
/// whose flow escapes the domain.
MongeMap monge_map(const ControlProblem& prob, const DiscreteMeasure& mu0,
                   const MkResult& mk, const DiscreteMeasure& mu1, const CostFn& cost_fn,
                   const Matrix* cost_matrix = nullptr, const MongeSettings& settings = {});

/// Push-forward t#mu: atoms moved, weights preserved, coincident images
/// merged (tolerance 1e-9). The MongeMap overload renormalizes over the
/// accepted mass so the result is again a probability measure.
DiscreteMeasure pushforward(const std::function<Vector(const Vector&)>& map,
                            const DiscreteMeasure& mu);
DiscreteMeasure pushforward(const MongeMap& map);

/// Action of the initial transport measure induced by the map:
/// sum_i w_i c(x_i, T(x_i)).
double initial_measure_action(const MongeMap& map, const CostFn& cost_fn);

/// 1-D Wasserstein-1 distance by the quantile-function integral.
double wasserstein1_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu);

}  // namespace charflow
