/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/cost.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <limits>

#include "charflow/characteristics.hpp"
#include "charflow/parallel.hpp"
#include "charflow/rng.hpp"

namespace charflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::vector<Vector> extract_path(const CharTrajectory& traj) {
  std::vector<Vector> path;
  path.reserve(traj.states.size());
  for (const CharState& s : traj.states) path.push_back(s.X);
  return path;
}

}  // namespace

CostResult cost_shooting(const ControlProblem& prob, const CostQuery& q,
                         const ShootingSettings& settings) {
  const int n = prob.state_dim();
  if (q.x.size() != n || q.y.size() != n) throw UserError("cost query dimension mismatch");
  if (!(q.t1 > q.t0)) throw UserError("cost query requires t1 > t0");

  // Free-space integration: endpoint costs are not state-constrained.
  const auto integrate = [&](const Vector& p0) {
    return integrate_characteristic_from(prob, q.x, p0, 0.0, q.t0, q.t1, settings.dt,
                                         /*enforce_domain=*/false, settings.hamiltonian);
  };

  std::vector<Vector> starts;
  starts.push_back(Vector::Zero(n));
  for (int i = 0; i < n && static_cast<int>(starts.size()) < settings.starts; ++i) {
    Vector e = Vector::Zero(n);
    e[i] = 1.0;
    starts.push_back(e);
    if (static_cast<int>(starts.size()) < settings.starts) starts.push_back(-e);
  }
  Rng rng(settings.seed);
  while (static_cast<int>(starts.size()) < settings.starts) {
    Vector r(n);
    for (int i = 0; i < n; ++i) r[i] = rng.uniform(-2, 2);
    starts.push_back(r);
  }

  CostResult best;
  best.method = CostMethod::Shooting;
  double best_gap = kInf;

  for (const Vector& start : starts) {
    Vector p0 = start;
    bool failed = false;
    CharTrajectory traj;
    try {
      traj = integrate(p0);
    } catch (const NumericError&) {
      continue;
    }
    Vector residual = traj.back().X - q.y;

    for (int it = 0; it < settings.max_iterations && residual.norm() > settings.residual_tol;
         ++it) {
      // Finite-difference Jacobian of p0 -> X(t1).
      Matrix jac(n, n);
      const double delta = 1e-6 * (1.0 + p0.norm());
      try {
        for (int c = 0; c < n; ++c) {
          Vector pp = p0;
          pp[c] += delta;
          jac.col(c) = (integrate(pp).back().X - traj.back().X) / delta;
        }
      } catch (const NumericError&) {
        failed = true;
        break;
      }
      Vector step;
      const Eigen::FullPivLU<Matrix> lu(jac);
      if (lu.isInvertible()) {
        step = lu.solve(-residual);
      } else {
        failed = true;
        break;
      }

      bool improved = false;
      for (double alpha = 1.0; alpha >= 1.0 / 64.0; alpha *= 0.5) {
        const Vector cand = p0 + alpha * step;
        CharTrajectory cand_traj;
        try {
          cand_traj = integrate(cand);
        } catch (const NumericError&) {
          continue;
        }
        const Vector cand_res = cand_traj.back().X - q.y;
        if (cand_res.norm() < residual.norm()) {
          p0 = cand;
          traj = std::move(cand_traj);
          residual = cand_res;
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }

    const double gap = residual.norm();
    if (gap <= settings.residual_tol) {
      const double value = traj.back().U;
      if (!best.ok() || value < best.value) {
        best.status = CostStatus::Ok;
        best.value = value;
        best.p0 = p0;
        best.path = extract_path(traj);
        best.terminal_gap = gap;
      }
      if (!settings.exhaustive) return best;
    } else if (!best.ok() && !failed && gap < best_gap) {
      best_gap = gap;
      best.terminal_gap = gap;
    }
  }
  return best;
}

CostResult cost_transcription(const ControlProblem& prob, const CostQuery& q, int intervals,
                              const TranscriptionSettings& settings) {
  const int n = prob.state_dim();
  const int m = prob.control_dim();
  if (q.x.size() != n || q.y.size() != n) throw UserError("cost query dimension mismatch");
  if (!(q.t1 > q.t0)) throw UserError("cost query requires t1 > t0");
  if (intervals < 10) throw UserError("transcription requires at least 10 control intervals");

  const int N = intervals;
  const double ds = (q.t1 - q.t0) / N;
  const ControlSet& uset = prob.control_set();

  // Decision vector: controls u_0..u_{N-1}, row-major N x m.
  Matrix u = Matrix::Zero(N, m);
  for (int k = 0; k < N; ++k) u.row(k) = uset.project(u.row(k).transpose()).transpose();

  std::vector<Vector> states(N + 1);
  std::vector<double> lagr(N);

  // Forward Euler rollout; returns the running-cost part.
  const auto rollout = [&](const Matrix& ctrl) {
    states[0] = q.x;
    EvalEnv env{q.x, Vector(m), q.t0};
    Vector f(n);
    double run = 0;
    for (int k = 0; k < N; ++k) {
      env.x = states[k];
      env.u = ctrl.row(k).transpose();
      env.t = q.t0 + k * ds;
      prob.eval_dynamics(env, f);
      lagr[k] = prob.eval_lagrangian(env);
      run += ds * lagr[k];
      states[k + 1] = states[k] + ds * f;
    }
    return run;
  };

  const auto objective = [&](const Matrix& ctrl, double rho) {
    const double run = rollout(ctrl);
    return run + rho * (states[N] - q.y).squaredNorm();
  };

  // Discrete adjoint gradient of the penalized objective.
  const auto gradient = [&](const Matrix& ctrl, double rho, Matrix& grad) {
    rollout(ctrl);
    Vector lambda = 2.0 * rho * (states[N] - q.y);
    EvalEnv env{q.x, Vector(m), q.t0};
    for (int k = N - 1; k >= 0; --k) {
      env.x = states[k];
      env.u = ctrl.row(k).transpose();
      env.t = q.t0 + k * ds;
      for (int j = 0; j < m; ++j) {
        double g = ds * prob.lu(j).eval(env);
        for (int i = 0; i < n; ++i) g += ds * prob.fu(i, j).eval(env) * lambda[i];
        grad(k, j) = g;
      }
      // lambda_k = ds L_x + (I + ds f_x)^T lambda_{k+1}
      Vector lx(n);
      Matrix fx(n, n);
      for (int i = 0; i < n; ++i) {
        lx[i] = prob.lx(i).eval(env);
        for (int c = 0; c < n; ++c) fx(i, c) = prob.fx(i, c).eval(env);
      }
      lambda = ds * lx + lambda + ds * fx.transpose() * lambda;
    }
  };

  const auto project = [&](Matrix ctrl) {
    for (int k = 0; k < N; ++k)
      for (int j = 0; j < m; ++j) ctrl(k, j) = std::clamp(ctrl(k, j), uset.lo[j], uset.hi[j]);
    return ctrl;
  };

  Matrix grad(N, m), prev_grad(N, m), prev_u(N, m);
  for (double rho = settings.rho_init; rho <= settings.rho_max * (1 + 1e-12); rho *= 10.0) {
    double fval = objective(u, rho);
    gradient(u, rho, grad);
    double step = 1.0 / (1.0 + rho);
    for (int it = 0; it < settings.iterations_per_stage; ++it) {
      if (it > 0) {
        // Barzilai-Borwein step seed, safeguarded.
        const Matrix su = u - prev_u;
        const Matrix yg = grad - prev_grad;
        const double sy = (su.array() * yg.array()).sum();
        const double yy = (yg.array() * yg.array()).sum();
        if (sy > 1e-300 && yy > 1e-300)
          step = std::clamp(sy / yy, 1e-12, 1e6);
      }
      prev_u = u;
      prev_grad = grad;

      bool moved = false;
      for (double alpha = step; alpha >= step * 1e-10; alpha *= 0.25) {
        const Matrix cand = project(u - alpha * grad);
        const double cand_val = objective(cand, rho);
        if (cand_val < fval - 1e-16) {
          u = cand;
          fval = cand_val;
          moved = true;
          break;
        }
      }
      if (!moved) break;
      gradient(u, rho, grad);
      const double gnorm = (project(u - grad) - u).norm();
      if (gnorm <= settings.grad_tol * (1.0 + std::abs(fval))) break;
    }
  }

  const double run_cost = rollout(u);
  CostResult result;
  result.method = CostMethod::Transcription;
  result.terminal_gap = (states[N] - q.y).norm();
  result.path = states;
  result.value = run_cost;
  result.status =
      result.terminal_gap <= settings.gap_tol ? CostStatus::Ok : CostStatus::NotConverged;
  return result;
}

namespace {

// True when f(x,u) == u componentwise (sampled check), which lets the DP
// oracle move on the exact node lattice.
bool identity_dynamics(const ControlProblem& prob) {
  const int n = prob.state_dim();
  if (prob.control_dim() != n) return false;
  Rng rng(515151);
  EvalEnv env{Vector(n), Vector(n), 0.0};
  Vector f(n);
  for (int it = 0; it < 12; ++it) {
    env.x = rng.uniform_vector(prob.domain().lo, prob.domain().hi);
    for (int j = 0; j < n; ++j) env.u[j] = rng.uniform(-2, 2);
    try {
      prob.eval_dynamics(env, f);
    } catch (const EvalError&) {
      return false;
    }
    if ((f - env.u).lpNorm<Eigen::Infinity>() > 1e-12 * (1 + env.u.norm())) return false;
  }
  return true;
}

}  // namespace

double cost_dp_oracle(const ControlProblem& prob, const CostQuery& q, const GridSpec& grid,
                      double dt, const HjbSettings& settings) {
  if (grid.dim() != prob.state_dim())
    throw UserError("DP oracle grid dimension mismatch");
  if (!(q.t1 > q.t0)) throw UserError("cost query requires t1 > t0");
  double off_x = 0, off_y = 0;
  const std::size_t ix = grid.nearest_node(q.x, &off_x);
  const std::size_t iy = grid.nearest_node(q.y, &off_y);
  if (off_x > 1e-6 || off_y > 1e-6)
    throw UserError("DP oracle requires x and y on grid nodes");

  const double T = q.t1 - q.t0;
  if (!(dt > 0)) dt = T / 10.0;
  const std::size_t K = static_cast<std::size_t>(std::llround(T / dt));
  if (K == 0 || std::abs(static_cast<double>(K) * dt - T) > 1e-9 * std::max(1.0, T))
    throw UserError("DP oracle duration must be a positive multiple of dt");

  if (!identity_dynamics(prob)) {
    // General dynamics: point-source value iteration with the interpolating
    // semi-Lagrangian stepper.
    Vector init = Vector::Constant(grid.node_count(), kPointSourceBig);
    init[ix] = 0.0;
    const ValueGrid vg =
        solve_hjb_from(prob, std::move(init), grid, q.t0, T, dt, settings);
    return vg.values.back()[iy];
  }

  // f = u: exact-lattice value iteration. Per-step controls u_d = o_d h_d/dt
  // for integer offsets o_d, so every foot point lands exactly on a node and
  // the point source never smears through interpolation. Restricting controls
  // to the lattice keeps the value an upper bound on c.
  const int n = grid.dim();
  const ControlSet& uset = prob.control_set();
  std::vector<std::vector<int>> axis_offsets(n);
  for (int d = 0; d < n; ++d) {
    const double speed_cap =
        std::max(1.0, 2.0 * std::abs(q.y[d] - q.x[d]) / T);  // twice the mean speed
    const double hi = std::min(uset.hi[d], speed_cap);
    const double lo = std::max(uset.lo[d], -speed_cap);
    const int o_hi = static_cast<int>(std::floor(hi * dt / grid.spacing(d) + 1e-12));
    const int o_lo = static_cast<int>(std::ceil(lo * dt / grid.spacing(d) - 1e-12));
    for (int o = o_lo; o <= o_hi; ++o) axis_offsets[d].push_back(o);
    if (axis_offsets[d].empty()) axis_offsets[d].push_back(0);
  }

  std::vector<std::vector<int>> offsets;  // tensor product of axis offsets
  offsets.push_back({});
  for (int d = 0; d < n; ++d) {
    std::vector<std::vector<int>> grown;
    for (const auto& partial : offsets)
      for (int o : axis_offsets[d]) {
        auto row = partial;
        row.push_back(o);
        grown.push_back(std::move(row));
      }
    offsets = std::move(grown);
  }

  const bool periodic = prob.boundary() == BoundaryMode::Periodic;
  Vector current = Vector::Constant(grid.node_count(), kPointSourceBig);
  current[ix] = 0.0;
  Vector next(grid.node_count());

  for (std::size_t k = 0; k < K; ++k) {
    const double t = q.t0 + static_cast<double>(k) * dt;
    parallel_for(grid.node_count(), settings.threads, [&](std::size_t j) {
      std::vector<int> at(n), from(n);
      std::size_t rem = j;
      for (int d = n - 1; d >= 0; --d) {
        at[d] = static_cast<int>(rem % grid.shape[d]);
        rem /= grid.shape[d];
      }
      EvalEnv env{grid.node(j), Vector(n), t};
      double best = kPointSourceBig + static_cast<double>(K) * dt;
      for (const auto& o : offsets) {
        bool valid = true;
        for (int d = 0; d < n; ++d) {
          int s = at[d] - o[d];
          if (periodic) {
            const int span = grid.shape[d] - 1;  // first and last node coincide
            s = ((s % span) + span) % span;
          } else if (s < 0 || s >= grid.shape[d]) {
            valid = false;
            break;
          }
          from[d] = s;
        }
        if (!valid) continue;
        const double upstream = current[grid.flat_index(from)];
        for (int d = 0; d < n; ++d) env.u[d] = o[d] * grid.spacing(d) / dt;
        const double lval = prob.eval_lagrangian(env);
        best = std::min(best, dt * lval + upstream);
      }
      next[j] = best;
    });
    std::swap(current, next);
  }
  return current[iy];
}

CostResult compute_cost(const ControlProblem& prob, const CostQuery& q,
                        const CostSettings& settings, CostPolicy policy) {
  if (policy != CostPolicy::TranscriptionOnly) {
    CostResult shot = cost_shooting(prob, q, settings.shooting);
    if (shot.ok() || policy == CostPolicy::ShootingOnly) {
      if (!settings.keep_paths) shot.path.clear();
      return shot;
    }
  }
  CostResult tr =
      cost_transcription(prob, q, settings.transcription_intervals, settings.transcription);
  if (!settings.keep_paths) tr.path.clear();
  if (tr.status == CostStatus::NotConverged && policy == CostPolicy::ShootingThenTranscription)
    tr.status = CostStatus::Infeasible;
  return tr;
}

CostMatrix cost_matrix(const ControlProblem& prob, const std::vector<Vector>& xs,
                       const std::vector<Vector>& ys, const CostSettings& settings,
                       CostPolicy policy, unsigned threads, double t0, double t1) {
  CostMatrix out;
  out.rows = xs;
  out.cols = ys;
  out.values = Matrix::Zero(xs.size(), ys.size());
  out.status.assign(xs.size(), std::vector<CostStatus>(ys.size(), CostStatus::NotConverged));

  CostSettings entry_settings = settings;
  entry_settings.keep_paths = false;

  const std::size_t total = xs.size() * ys.size();
  parallel_for(total, threads, [&](std::size_t flat) {
    const std::size_t i = flat / ys.size();
    const std::size_t j = flat % ys.size();
    CostQuery q{xs[i], ys[j], t0, t1};
    CostResult r;
    try {
      r = compute_cost(prob, q, entry_settings, policy);
    } catch (const Error&) {
      r.status = CostStatus::NotConverged;
    }
    out.status[i][j] = r.status;
    out.values(i, j) = r.ok() ? r.value : kInf;
  });
  return out;
}

}  // namespace charflow
