/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "charflow/expr.hpp"
#include "charflow/types.hpp"

namespace charflow {

/// Box control set; components may be unbounded (+-inf).
struct ControlSet {
  Vector lo, hi;

  int dim() const { return static_cast<int>(lo.size()); }
  bool bounded(int j) const { return std::isfinite(lo[j]) && std::isfinite(hi[j]); }

  Vector project(Vector u) const {
    for (Index j = 0; j < u.size(); ++j) u[j] = std::clamp(u[j], lo[j], hi[j]);
    return u;
  }

  static ControlSet box(Vector lo, Vector hi);
  static ControlSet unbounded(int m);
};

/// Control system x' = f(x,u), running cost L(x,u,t), control set, state
/// domain, horizon, and boundary mode. The dynamics are autonomous (f may not
/// reference t); L may depend on t. Immutable after construction; all
/// evaluation entry points are const and safe to call concurrently.
class ControlProblem {
 public:
  ControlProblem(std::vector<Expr> dynamics, Expr running_cost, ControlSet control_set,
                 Box domain, double horizon, BoundaryMode boundary);

  int state_dim() const { return n_; }
  int control_dim() const { return m_; }
  const std::vector<Expr>& dynamics_exprs() const { return f_; }
  const Expr& lagrangian() const { return lagrangian_; }
  const ControlSet& control_set() const { return control_set_; }
  const Box& domain() const { return domain_; }
  double horizon() const { return horizon_; }
  BoundaryMode boundary() const { return boundary_; }

  // Cached symbolic derivatives.
  const Expr& fx(int i, int k) const { return fx_[i * n_ + k]; }
  const Expr& fu(int i, int j) const { return fu_[i * m_ + j]; }
  const Expr& lx(int k) const { return lx_[k]; }
  const Expr& lu(int j) const { return lu_[j]; }

  /// True when f is affine in u and L is quadratic-diagonal in u with constant
  /// positive curvature, so the Hamiltonian maximizer has a closed form.
  bool closed_form_hamiltonian() const { return closed_form_; }
  double quad_curvature(int j) const { return quad_q_[j]; }

  /// Allocation-free evaluation helpers for hot loops. env.x/env.u/env.t must
  /// already be sized and filled.
  void eval_dynamics(const EvalEnv& env, Vector& out) const;
  double eval_lagrangian(const EvalEnv& env) const { return lagrangian_.eval(env); }

 private:
  int n_, m_;
  std::vector<Expr> f_;
  Expr lagrangian_;
  ControlSet control_set_;
  Box domain_;
  double horizon_;
  BoundaryMode boundary_;

  std::vector<Expr> fx_, fu_, lx_, lu_;
  bool closed_form_ = false;
  Vector quad_q_;
};

/// H(x,p,t) with its maximizer and the envelope-rule derivatives
/// Hp = f(x,u*), Hx = d/dx <p,f> - d/dx L at u*.
struct HamiltonianEval {
  double value;
  Vector argmax;
  Vector Hx;
  Vector Hp;
};

struct HamiltonianOptions {
  int starts = 20;             // multi-starts in the numeric branch
  double u_tol = 1e-9;         // tolerance in u
  double value_cap = 1e12;     // beyond this the maximization counts as unbounded
  double radius_cap = 1e6;     // cap for the bracketing radius on unbounded boxes
  bool use_closed_form = true; // disable to force the numeric branch (testing)
  std::uint64_t seed = 20260811;
};

HamiltonianEval hamiltonian(const ControlProblem& prob, const Vector& x, const Vector& p,
                            double t, const HamiltonianOptions& opts = {});

Vector dynamics(const ControlProblem& prob, const Vector& x, const Vector& u, double t);
double running_cost(const ControlProblem& prob, const Vector& x, const Vector& u, double t);

/// Monte-Carlo estimates of the regularity constants of f and L (growth,
/// Lipschitz) plus a superlinearity probe of L in u. Advisory, not a hard gate.
struct AssumptionReport {
  double k0 = 0;       // growth |f| <= K0 (1 + |x| + |u|)
  double k1 = 0;       // Lipschitz constant of f in x
  double k2 = 0;       // Lipschitz constant of f_x in x
  double alpha_r = 0;  // local Lipschitz constant of L in x over the domain
  bool growth_warning = false;         // K0 estimate keeps growing with radius
  bool lipschitz_warning = false;      // K1 estimate keeps growing with radius
  bool superlinearity_warning = false; // L/|u| fails to grow (unbounded U only)
  std::vector<std::string> notes;
};

AssumptionReport check_assumptions(const ControlProblem& prob, int samples,
                                   std::uint64_t seed);

}  // namespace charflow
