/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/problem.hpp"

#include <cmath>
#include <limits>

#include "charflow/rng.hpp"

namespace charflow {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

ControlSet ControlSet::box(Vector lo, Vector hi) {
  if (lo.size() != hi.size() || lo.size() == 0)
    throw UserError("control set requires matching non-empty bounds");
  for (Index j = 0; j < lo.size(); ++j) {
    if (std::isnan(lo[j]) || std::isnan(hi[j]) || !(lo[j] <= hi[j]))
      throw UserError("control set requires lo <= hi in every component");
  }
  return ControlSet{std::move(lo), std::move(hi)};
}

ControlSet ControlSet::unbounded(int m) {
  return ControlSet{Vector::Constant(m, -kInf), Vector::Constant(m, kInf)};
}

ControlProblem::ControlProblem(std::vector<Expr> dynamics, Expr running_cost,
                               ControlSet control_set, Box domain, double horizon,
                               BoundaryMode boundary)
    : n_(static_cast<int>(dynamics.size())),
      m_(control_set.dim()),
      f_(std::move(dynamics)),
      lagrangian_(std::move(running_cost)),
      control_set_(std::move(control_set)),
      domain_(std::move(domain)),
      horizon_(horizon),
      boundary_(boundary) {
  if (n_ == 0) throw UserError("control problem requires at least one state");
  if (domain_.dim() != n_) throw UserError("domain dimension does not match state count");
  if (!(horizon_ > 0)) throw UserError("horizon must be positive");
  for (const Expr& fi : f_) {
    if (!fi.valid()) throw UserError("dynamics component is empty");
    if (fi.uses_time()) throw UserError("dynamics must be autonomous (f = f(x,u))");
    if (fi.max_state_index() >= n_ || fi.max_control_index() >= m_)
      throw UserError("dynamics reference an undeclared variable");
  }
  if (!lagrangian_.valid()) throw UserError("running cost is empty");
  if (lagrangian_.max_state_index() >= n_ || lagrangian_.max_control_index() >= m_)
    throw UserError("running cost references an undeclared variable");

  fx_.reserve(static_cast<std::size_t>(n_) * n_);
  fu_.reserve(static_cast<std::size_t>(n_) * m_);
  for (int i = 0; i < n_; ++i) {
    for (int k = 0; k < n_; ++k) fx_.push_back(f_[i].diff(VarRef::state(k)));
    for (int j = 0; j < m_; ++j) fu_.push_back(f_[i].diff(VarRef::control(j)));
  }
  for (int k = 0; k < n_; ++k) lx_.push_back(lagrangian_.diff(VarRef::state(k)));
  for (int j = 0; j < m_; ++j) lu_.push_back(lagrangian_.diff(VarRef::control(j)));

  // Closed-form Hamiltonian detection: f affine in u, L quadratic-diagonal in
  // u with constant curvature q_j > 0. All checks fold symbolically.
  quad_q_ = Vector::Zero(m_);
  closed_form_ = m_ > 0;
  for (int i = 0; i < n_ && closed_form_; ++i) {
    for (int j = 0; j < m_ && closed_form_; ++j) {
      for (int k = j; k < m_ && closed_form_; ++k) {
        double v = 0;
        if (!fu(i, j).diff(VarRef::control(k)).constant_value(&v) || v != 0.0)
          closed_form_ = false;
      }
    }
  }
  for (int j = 0; j < m_ && closed_form_; ++j) {
    for (int k = j; k < m_ && closed_form_; ++k) {
      double v = 0;
      if (!lu(j).diff(VarRef::control(k)).constant_value(&v)) {
        closed_form_ = false;
      } else if (j == k) {
        if (v > 0)
          quad_q_[j] = v;
        else
          closed_form_ = false;
      } else if (v != 0.0) {
        closed_form_ = false;
      }
    }
  }
}

void ControlProblem::eval_dynamics(const EvalEnv& env, Vector& out) const {
  out.resize(n_);
  for (int i = 0; i < n_; ++i) out[i] = f_[i].eval(env);
}

Vector dynamics(const ControlProblem& prob, const Vector& x, const Vector& u, double t) {
  EvalEnv env{x, u, t};
  Vector out;
  prob.eval_dynamics(env, out);
  return out;
}

double running_cost(const ControlProblem& prob, const Vector& x, const Vector& u, double t) {
  EvalEnv env{x, u, t};
  return prob.eval_lagrangian(env);
}

namespace {

// <p, f(x,u)> - L(x,u,t) for the env's current control.
double objective(const ControlProblem& prob, const Vector& p, EvalEnv& env, Vector& f_buf) {
  prob.eval_dynamics(env, f_buf);
  return p.dot(f_buf) - prob.eval_lagrangian(env);
}

void check_cap(double value, const HamiltonianOptions& opts) {
  if (value > opts.value_cap)
    throw NumericError(
        "superlinearity violated: Hamiltonian maximization exceeded the value cap "
        "(the running cost grows too slowly in u to pin an interior maximizer)");
}

// Golden-section maximization of the coordinate slice u_j -> g(u).
double golden_coordinate(const ControlProblem& prob, const Vector& p, EvalEnv& env,
                         Vector& f_buf, int j, double lo, double hi,
                         const HamiltonianOptions& opts) {
  constexpr double inv_phi = 0.6180339887498949;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  env.u[j] = x1;
  double g1 = objective(prob, p, env, f_buf);
  env.u[j] = x2;
  double g2 = objective(prob, p, env, f_buf);
  check_cap(std::max(g1, g2), opts);
  for (int it = 0; it < 200 && (b - a) > opts.u_tol; ++it) {
    if (g1 < g2) {
      a = x1;
      x1 = x2;
      g1 = g2;
      x2 = a + inv_phi * (b - a);
      env.u[j] = x2;
      g2 = objective(prob, p, env, f_buf);
    } else {
      b = x2;
      x2 = x1;
      g2 = g1;
      x1 = b - inv_phi * (b - a);
      env.u[j] = x1;
      g1 = objective(prob, p, env, f_buf);
    }
    check_cap(std::max(g1, g2), opts);
  }
  return g1 >= g2 ? x1 : x2;
}

// True lexicographic order for the deterministic tie-break.
bool lex_less(const Vector& a, const Vector& b) {
  for (Index j = 0; j < a.size(); ++j) {
    if (a[j] < b[j]) return true;
    if (a[j] > b[j]) return false;
  }
  return false;
}

struct SearchOutcome {
  Vector u;
  double value;
  bool hit_artificial_edge;
};

SearchOutcome search_box(const ControlProblem& prob, const Vector& x, const Vector& p,
                         double t, const Vector& elo, const Vector& ehi,
                         const std::vector<bool>& lo_artificial,
                         const std::vector<bool>& hi_artificial,
                         const HamiltonianOptions& opts) {
  const int m = prob.control_dim();
  EvalEnv env{x, Vector::Zero(m), t};
  Vector f_buf;

  // Deterministic multi-start list: center, per-axis quarter offsets, corners,
  // then seeded uniforms.
  std::vector<Vector> starts;
  Vector center(m);
  for (int j = 0; j < m; ++j) center[j] = 0.5 * (elo[j] + ehi[j]);
  starts.push_back(center);
  for (int j = 0; j < m && static_cast<int>(starts.size()) < opts.starts; ++j) {
    Vector s = center;
    s[j] = elo[j] + 0.25 * (ehi[j] - elo[j]);
    starts.push_back(s);
    s[j] = elo[j] + 0.75 * (ehi[j] - elo[j]);
    starts.push_back(s);
  }
  const int corners = 1 << m;
  for (int mask = 0; mask < corners && static_cast<int>(starts.size()) < opts.starts; ++mask) {
    Vector s(m);
    for (int j = 0; j < m; ++j) s[j] = (mask >> j) & 1 ? ehi[j] : elo[j];
    starts.push_back(s);
  }
  Rng rng(opts.seed);
  while (static_cast<int>(starts.size()) < opts.starts)
    starts.push_back(rng.uniform_vector(elo, ehi));

  Vector best_u;
  double best_value = -kInf;
  for (const Vector& start : starts) {
    env.u = start;
    double value = objective(prob, p, env, f_buf);
    check_cap(value, opts);

    // Cyclic coordinate golden-section sweeps.
    for (int sweep = 0; sweep < 40; ++sweep) {
      const double before = value;
      for (int j = 0; j < m; ++j)
        env.u[j] = golden_coordinate(prob, p, env, f_buf, j, elo[j], ehi[j], opts);
      value = objective(prob, p, env, f_buf);
      check_cap(value, opts);
      if (value - before <= 1e-13 * (1.0 + std::abs(value))) break;
    }

    // Projected gradient ascent polish with backtracking.
    for (int it = 0; it < 100; ++it) {
      Vector grad(m);
      for (int j = 0; j < m; ++j) {
        double g = -prob.lu(j).eval(env);
        for (int i = 0; i < prob.state_dim(); ++i) g += p[i] * prob.fu(i, j).eval(env);
        grad[j] = g;
      }
      bool moved = false;
      const Vector u0 = env.u;
      for (double alpha = 1.0; alpha >= 1.0 / 1024.0; alpha *= 0.5) {
        Vector cand = u0 + alpha * grad;
        for (int j = 0; j < m; ++j) cand[j] = std::clamp(cand[j], elo[j], ehi[j]);
        env.u = cand;
        const double cand_value = objective(prob, p, env, f_buf);
        if (cand_value > value) {
          value = cand_value;
          check_cap(value, opts);
          moved = (cand - u0).lpNorm<Eigen::Infinity>() > opts.u_tol;
          break;
        }
        env.u = u0;
      }
      if (!moved) break;
    }
    value = objective(prob, p, env, f_buf);

    const double tie = 1e-12 * (1.0 + std::abs(best_value));
    if (value > best_value + tie ||
        (value >= best_value - tie && (best_u.size() == 0 || lex_less(env.u, best_u)))) {
      best_value = value;
      best_u = env.u;
    }
  }

  bool edge = false;
  for (int j = 0; j < m; ++j) {
    const double margin = 1e-6 * std::max(1.0, ehi[j] - elo[j]);
    if (lo_artificial[j] && best_u[j] <= elo[j] + margin) edge = true;
    if (hi_artificial[j] && best_u[j] >= ehi[j] - margin) edge = true;
  }
  return SearchOutcome{std::move(best_u), best_value, edge};
}

}  // namespace

HamiltonianEval hamiltonian(const ControlProblem& prob, const Vector& x, const Vector& p,
                            double t, const HamiltonianOptions& opts) {
  const int n = prob.state_dim();
  const int m = prob.control_dim();
  if (x.size() != n || p.size() != n)
    throw UserError("hamiltonian: state/costate dimension mismatch");
  const ControlSet& box = prob.control_set();

  Vector u_star(m);
  if (prob.closed_form_hamiltonian() && opts.use_closed_form) {
    // g(u) = sum_j d_j u_j - q_j u_j^2 / 2 + const(x,t); componentwise clamp.
    EvalEnv env0{x, Vector::Zero(m), t};
    for (int j = 0; j < m; ++j) {
      double d = -prob.lu(j).eval(env0);
      for (int i = 0; i < n; ++i) d += p[i] * prob.fu(i, j).eval(env0);
      u_star[j] = std::clamp(d / prob.quad_curvature(j), box.lo[j], box.hi[j]);
    }
  } else {
    // Unbounded components are bracketed in [-R, R] with R doubling until the
    // maximizer stays interior; superlinear running costs guarantee one exists.
    double radius = std::max(1.0, 2.0 * p.lpNorm<Eigen::Infinity>());
    for (int j = 0; j < m; ++j) {
      if (std::isfinite(box.lo[j])) radius = std::max(radius, std::abs(box.lo[j]));
      if (std::isfinite(box.hi[j])) radius = std::max(radius, std::abs(box.hi[j]));
    }
    radius = std::min(radius, opts.radius_cap);
    for (;;) {
      Vector elo(m), ehi(m);
      std::vector<bool> lo_art(m), hi_art(m);
      for (int j = 0; j < m; ++j) {
        lo_art[j] = box.lo[j] < -radius;
        hi_art[j] = box.hi[j] > radius;
        elo[j] = lo_art[j] ? -radius : box.lo[j];
        ehi[j] = hi_art[j] ? radius : box.hi[j];
      }
      SearchOutcome outcome = search_box(prob, x, p, t, elo, ehi, lo_art, hi_art, opts);
      if (!outcome.hit_artificial_edge || radius >= opts.radius_cap) {
        u_star = std::move(outcome.u);
        break;
      }
      radius = std::min(2.0 * radius, opts.radius_cap);
    }
  }

  EvalEnv env{x, u_star, t};
  HamiltonianEval out;
  out.argmax = u_star;
  prob.eval_dynamics(env, out.Hp);
  out.value = p.dot(out.Hp) - prob.eval_lagrangian(env);
  out.Hx = Vector(n);
  for (int k = 0; k < n; ++k) {
    double hx = -prob.lx(k).eval(env);
    for (int i = 0; i < n; ++i) hx += p[i] * prob.fx(i, k).eval(env);
    out.Hx[k] = hx;
  }
  return out;
}

namespace {

// Clip unbounded control components for sampling purposes.
Vector clip_control_sample(const ControlSet& box, Rng& rng, double radius) {
  const int m = box.dim();
  Vector u(m);
  for (int j = 0; j < m; ++j) {
    const double lo = std::max(box.lo[j], -radius);
    const double hi = std::min(box.hi[j], radius);
    u[j] = rng.uniform(lo, hi);
  }
  return u;
}

double safe_lagrangian(const ControlProblem& prob, const EvalEnv& env) {
  try {
    return prob.eval_lagrangian(env);
  } catch (const EvalError&) {
    return kInf;  // overflow counts as very large for growth probes
  }
}

}  // namespace

AssumptionReport check_assumptions(const ControlProblem& prob, int samples,
                                   std::uint64_t seed) {
  if (samples < 100) throw UserError("check_assumptions requires samples >= 100");
  AssumptionReport report;
  Rng rng(seed);
  const int n = prob.state_dim();
  const Box& dom = prob.domain();
  const ControlSet& uset = prob.control_set();
  const double u_clip = 10.0;

  Vector dom_center = 0.5 * (dom.lo + dom.hi);
  Vector dom_half = 0.5 * (dom.hi - dom.lo);

  // Growth and Lipschitz estimates at expanding sampling radii; a ratio that
  // keeps climbing flags a violation of the global growth/Lipschitz bounds.
  const double scales[] = {1.0, 2.0, 4.0};
  double k0_by_scale[3] = {0, 0, 0};
  double k1_by_scale[3] = {0, 0, 0};
  Vector f1, f2;
  for (int s = 0; s < 3; ++s) {
    const Vector lo = dom_center - scales[s] * dom_half;
    const Vector hi = dom_center + scales[s] * dom_half;
    for (int it = 0; it < samples; ++it) {
      EvalEnv env;
      env.x = rng.uniform_vector(lo, hi);
      env.u = clip_control_sample(uset, rng, u_clip);
      env.t = rng.uniform(0.0, prob.horizon());
      try {
        prob.eval_dynamics(env, f1);
      } catch (const EvalError&) {
        continue;
      }
      k0_by_scale[s] = std::max(
          k0_by_scale[s], f1.lpNorm<Eigen::Infinity>() / (1.0 + env.x.norm() + env.u.norm()));

      EvalEnv env2 = env;
      env2.x = rng.uniform_vector(lo, hi);
      const double dx = (env2.x - env.x).norm();
      if (dx < 1e-12) continue;
      try {
        prob.eval_dynamics(env2, f2);
      } catch (const EvalError&) {
        continue;
      }
      k1_by_scale[s] = std::max(k1_by_scale[s], (f2 - f1).norm() / dx);
    }
  }
  report.k0 = k0_by_scale[0];
  report.k1 = k1_by_scale[0];
  report.growth_warning = k0_by_scale[2] > 1.5 * k0_by_scale[0] + 1e-9;
  report.lipschitz_warning = k1_by_scale[2] > 1.5 * k1_by_scale[0] + 1e-9;
  if (report.growth_warning)
    report.notes.push_back("growth estimate K0 increases with sampling radius; global growth bound suspect");
  if (report.lipschitz_warning)
    report.notes.push_back("Lipschitz estimate K1 increases with sampling radius; global bound suspect");

  // K2: Lipschitz constant of f_x, via the symbolic Jacobian. alpha_R: local
  // Lipschitz constant of L in x over the domain.
  Matrix jac1(n, n), jac2(n, n);
  for (int it = 0; it < samples; ++it) {
    EvalEnv env;
    env.x = rng.uniform_vector(dom.lo, dom.hi);
    env.u = clip_control_sample(uset, rng, u_clip);
    env.t = rng.uniform(0.0, prob.horizon());
    EvalEnv env2 = env;
    env2.x = rng.uniform_vector(dom.lo, dom.hi);
    const double dx = (env2.x - env.x).norm();
    if (dx < 1e-12) continue;
    try {
      for (int i = 0; i < n; ++i)
        for (int k = 0; k < n; ++k) {
          jac1(i, k) = prob.fx(i, k).eval(env);
          jac2(i, k) = prob.fx(i, k).eval(env2);
        }
      report.k2 = std::max(report.k2, (jac2 - jac1).norm() / dx);
      const double l1 = prob.eval_lagrangian(env);
      const double l2 = prob.eval_lagrangian(env2);
      report.alpha_r = std::max(report.alpha_r, std::abs(l2 - l1) / dx);
    } catch (const EvalError&) {
      continue;
    }
  }

  // Superlinearity probe: max over the control sphere |u| = r of L/r must
  // keep growing with r. Only meaningful when some component is unbounded.
  bool any_unbounded = false;
  for (int j = 0; j < uset.dim(); ++j)
    if (!uset.bounded(j)) any_unbounded = true;
  if (any_unbounded) {
    const double radii[] = {10.0, 100.0, 1000.0};
    double ratio[3] = {0, 0, 0};
    for (int r = 0; r < 3; ++r) {
      for (int it = 0; it < samples; ++it) {
        EvalEnv env;
        env.x = rng.uniform_vector(dom.lo, dom.hi);
        env.t = rng.uniform(0.0, prob.horizon());
        Vector dir(uset.dim());
        for (int j = 0; j < uset.dim(); ++j) dir[j] = rng.normal();
        if (dir.norm() < 1e-12) continue;
        dir *= radii[r] / dir.norm();
        env.u = uset.project(dir);
        if (env.u.norm() < 0.5 * radii[r]) continue;  // projection killed the radius
        ratio[r] = std::max(ratio[r], safe_lagrangian(prob, env) / radii[r]);
      }
    }
    report.superlinearity_warning = !(ratio[1] > 2.0 * ratio[0] && ratio[2] > 2.0 * ratio[1]);
    if (report.superlinearity_warning)
      report.notes.push_back("L/|u| does not grow with |u|; superlinearity suspect");
  } else {
    report.notes.push_back("control set bounded; superlinearity not required");
  }
  return report;
}

}  // namespace charflow
