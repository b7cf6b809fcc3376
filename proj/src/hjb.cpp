/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/hjb.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "charflow/parallel.hpp"
#include "charflow/rng.hpp"

namespace charflow {

std::size_t GridSpec::node_count() const {
  std::size_t s = 1;
  for (int c : shape) s *= static_cast<std::size_t>(c);
  return s;
}

double GridSpec::min_spacing() const {
  double h = spacing(0);
  for (int d = 1; d < dim(); ++d) h = std::min(h, spacing(d));
  return h;
}

Vector GridSpec::node(std::size_t flat) const {
  const int d = dim();
  Vector x(d);
  for (int axis = d - 1; axis >= 0; --axis) {
    const std::size_t count = static_cast<std::size_t>(shape[axis]);
    x[axis] = box.lo[axis] + static_cast<double>(flat % count) * spacing(axis);
    flat /= count;
  }
  return x;
}

std::size_t GridSpec::flat_index(const std::vector<int>& idx) const {
  std::size_t flat = 0;
  for (int axis = 0; axis < dim(); ++axis)
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(idx[axis]);
  return flat;
}

std::size_t GridSpec::nearest_node(const Vector& x, double* max_offset) const {
  std::size_t flat = 0;
  double worst = 0.0;
  for (int axis = 0; axis < dim(); ++axis) {
    const double h = spacing(axis);
    const double pos = (x[axis] - box.lo[axis]) / h;
    long idx = std::lround(pos);
    idx = std::clamp(idx, 0L, static_cast<long>(shape[axis] - 1));
    worst = std::max(worst, std::abs(pos - static_cast<double>(idx)));
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(idx);
  }
  if (max_offset) *max_offset = worst;
  return flat;
}

double GridSpec::interpolate(const Vector& values, Vector x, BoundaryMode mode) const {
  x = mode == BoundaryMode::Periodic ? box.wrap(std::move(x)) : box.clamp(std::move(x));
  const int d = dim();
  int base[2] = {0, 0};
  double frac[2] = {0, 0};
  for (int axis = 0; axis < d; ++axis) {
    const double pos = (x[axis] - box.lo[axis]) / spacing(axis);
    int cell = static_cast<int>(std::floor(pos));
    cell = std::clamp(cell, 0, shape[axis] - 2);
    base[axis] = cell;
    frac[axis] = std::clamp(pos - cell, 0.0, 1.0);
  }
  if (d == 1) {
    const double v0 = values[base[0]];
    const double v1 = values[base[0] + 1];
    return v0 + frac[0] * (v1 - v0);
  }
  const auto at = [&](int i, int j) {
    return values[static_cast<std::size_t>(i) * shape[1] + j];
  };
  const double v00 = at(base[0], base[1]);
  const double v01 = at(base[0], base[1] + 1);
  const double v10 = at(base[0] + 1, base[1]);
  const double v11 = at(base[0] + 1, base[1] + 1);
  const double a = v00 + frac[1] * (v01 - v00);
  const double b = v10 + frac[1] * (v11 - v10);
  return a + frac[0] * (b - a);
}

GridSpec GridSpec::make(Box box, std::vector<int> shape) {
  if (static_cast<int>(shape.size()) != box.dim())
    throw UserError("grid shape does not match box dimension");
  if (shape.size() > 2) throw UserError("value grids support 1-D and 2-D domains only");
  for (int c : shape)
    if (c < 3) throw UserError("grid resolution must be at least 3 nodes per dimension");
  return GridSpec{std::move(box), std::move(shape)};
}

namespace {

// Tensor-product control samples; unbounded components are clipped to the
// CFL-safe radius h_min/dt.
std::vector<Vector> control_samples(const ControlProblem& prob, const GridSpec& grid,
                                    double dt, int per_dim, Vector* sample_lo,
                                    Vector* sample_hi) {
  const int m = prob.control_dim();
  const double radius = grid.min_spacing() / dt;
  Vector lo(m), hi(m);
  for (int j = 0; j < m; ++j) {
    lo[j] = std::isfinite(prob.control_set().lo[j]) ? prob.control_set().lo[j] : -radius;
    hi[j] = std::isfinite(prob.control_set().hi[j]) ? prob.control_set().hi[j] : radius;
  }
  *sample_lo = lo;
  *sample_hi = hi;

  std::vector<std::vector<double>> axes(m);
  for (int j = 0; j < m; ++j) {
    axes[j].resize(per_dim);
    for (int s = 0; s < per_dim; ++s)
      axes[j][s] = per_dim == 1 ? lo[j]
                                : lo[j] + (hi[j] - lo[j]) * s / (per_dim - 1);
  }
  std::size_t total = 1;
  for (int j = 0; j < m; ++j) total *= axes[j].size();
  std::vector<Vector> samples;
  samples.reserve(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    std::size_t rem = flat;
    Vector u(m);
    for (int j = m - 1; j >= 0; --j) {
      u[j] = axes[j][rem % axes[j].size()];
      rem /= axes[j].size();
    }
    samples.push_back(std::move(u));
  }
  return samples;
}

// Gradient of a slice at a node by central differences (one-sided at clamped
// boundaries, wrapped for periodic ones).
Vector slice_gradient(const GridSpec& grid, const Vector& values, std::size_t flat,
                      BoundaryMode mode) {
  const int d = grid.dim();
  Vector g(d);
  std::vector<int> idx(d);
  std::size_t rem = flat;
  for (int axis = d - 1; axis >= 0; --axis) {
    idx[axis] = static_cast<int>(rem % grid.shape[axis]);
    rem /= grid.shape[axis];
  }
  for (int axis = 0; axis < d; ++axis) {
    const double h = grid.spacing(axis);
    const int count = grid.shape[axis];
    std::vector<int> up = idx, down = idx;
    if (mode == BoundaryMode::Periodic) {
      up[axis] = (idx[axis] + 1) % count;
      down[axis] = (idx[axis] - 1 + count) % count;
      g[axis] = (values[grid.flat_index(up)] - values[grid.flat_index(down)]) / (2 * h);
    } else if (idx[axis] == 0) {
      up[axis] = 1;
      g[axis] = (values[grid.flat_index(up)] - values[flat]) / h;
    } else if (idx[axis] == count - 1) {
      down[axis] = count - 2;
      g[axis] = (values[flat] - values[grid.flat_index(down)]) / h;
    } else {
      up[axis] = idx[axis] + 1;
      down[axis] = idx[axis] - 1;
      g[axis] = (values[grid.flat_index(up)] - values[grid.flat_index(down)]) / (2 * h);
    }
  }
  return g;
}

}  // namespace

ValueGrid solve_hjb_from(const ControlProblem& prob, Vector initial_values,
                         const GridSpec& grid, double t0, double T, double dt,
                         const HjbSettings& settings) {
  if (grid.dim() != prob.state_dim())
    throw UserError("grid dimension does not match the state dimension");
  const std::size_t nodes = grid.node_count();
  if (static_cast<std::size_t>(initial_values.size()) != nodes)
    throw UserError("initial slice size does not match the grid");
  if (T < 0) throw UserError("duration must be non-negative");
  std::size_t steps = 0;
  if (T > 0) {
    if (!(dt > 0)) throw UserError("time step must be positive");
    const double raw = T / dt;
    steps = static_cast<std::size_t>(std::llround(raw));
    if (steps == 0 || std::abs(static_cast<double>(steps) * dt - T) > 1e-9 * std::max(1.0, T))
      throw UserError("duration must be a positive multiple of dt");
  }

  ValueGrid out;
  out.grid = grid;
  out.t0 = t0;
  out.dt = dt;
  out.values.reserve(steps + 1);
  out.values.push_back(std::move(initial_values));
  if (steps == 0) return out;

  Vector sample_lo, sample_hi;
  const std::vector<Vector> samples =
      control_samples(prob, grid, dt, settings.control_samples, &sample_lo, &sample_hi);
  const BoundaryMode mode = prob.boundary();
  const int n = prob.state_dim();

  // Dynamics are autonomous, so f over nodes x samples is reusable across
  // steps; cache it (and L when autonomous) if it fits.
  const std::size_t cache_doubles = samples.size() * nodes;
  const bool cache_f = cache_doubles * static_cast<std::size_t>(n) <= (1u << 23);
  const bool cache_l = !prob.lagrangian().uses_time() && cache_doubles <= (1u << 23);
  std::vector<Matrix> f_cache;   // per sample: n x nodes
  std::vector<Vector> l_cache;   // per sample: nodes
  {
    std::vector<double> max_abs_f(n, 0.0);
    std::vector<std::vector<double>> worker_max;
    if (cache_f) f_cache.assign(samples.size(), Matrix(n, nodes));
    if (cache_l) l_cache.assign(samples.size(), Vector(nodes));
    std::mutex merge_mutex;
    parallel_for(samples.size(), settings.threads, [&](std::size_t s) {
      EvalEnv env{Vector(n), samples[s], t0};
      Vector f_buf(n);
      std::vector<double> local_max(n, 0.0);
      for (std::size_t i = 0; i < nodes; ++i) {
        env.x = grid.node(i);
        prob.eval_dynamics(env, f_buf);
        for (int d = 0; d < n; ++d) local_max[d] = std::max(local_max[d], std::abs(f_buf[d]));
        if (cache_f) f_cache[s].col(i) = f_buf;
        if (cache_l) l_cache[s][i] = prob.eval_lagrangian(env);
      }
      std::lock_guard<std::mutex> lock(merge_mutex);
      for (int d = 0; d < n; ++d) max_abs_f[d] = std::max(max_abs_f[d], local_max[d]);
    });
    for (int d = 0; d < n; ++d) {
      if (dt * max_abs_f[d] > grid.spacing(d) * (1.0 + 1e-9))
        throw UserError("CFL violation: dt exceeds h / max sampled |f| along axis " +
                        std::to_string(d));
    }
  }

  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * dt;
    const Vector& prev = out.values.back();
    Vector next(nodes);
    parallel_for(nodes, settings.threads, [&](std::size_t i) {
      const Vector x = grid.node(i);
      EvalEnv env{x, Vector(prob.control_dim()), t};
      Vector f_buf(n);
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t s = 0; s < samples.size(); ++s) {
        double lval;
        Vector foot(n);
        if (cache_f) {
          foot = x - dt * f_cache[s].col(i);
          lval = cache_l ? l_cache[s][i]
                         : (env.u = samples[s], prob.eval_lagrangian(env));
        } else {
          env.u = samples[s];
          prob.eval_dynamics(env, f_buf);
          foot = x - dt * f_buf;
          lval = prob.eval_lagrangian(env);
        }
        best = std::min(best, dt * lval + grid.interpolate(prev, std::move(foot), mode));
      }
      // Hamiltonian argmax at the interpolated gradient, clamped to the
      // sampled box; restores accuracy when the optimum falls between samples.
      try {
        const Vector p_est = slice_gradient(grid, prev, i, mode);
        Vector u_inj = hamiltonian(prob, x, p_est, t, settings.hamiltonian).argmax;
        for (Index j = 0; j < u_inj.size(); ++j)
          u_inj[j] = std::clamp(u_inj[j], sample_lo[j], sample_hi[j]);
        env.u = u_inj;
        prob.eval_dynamics(env, f_buf);
        const double lval = prob.eval_lagrangian(env);
        best = std::min(best, dt * lval + grid.interpolate(prev, x - dt * f_buf, mode));
      } catch (const NumericError&) {
        // keep the sampled minimum
      }
      next[i] = best;
    });
    out.values.push_back(std::move(next));
  }
  return out;
}

ValueGrid solve_hjb(const ControlProblem& prob, const Expr& phi0, const GridSpec& grid,
                    double T, double dt, const HjbSettings& settings) {
  if (!phi0.valid()) throw UserError("initial data phi0 is empty");
  if (phi0.max_control_index() >= 0 || phi0.uses_time())
    throw UserError("initial data phi0 must depend on state variables only");
  const std::size_t nodes = grid.node_count();
  Vector init(nodes);
  EvalEnv env{Vector(grid.dim()), Vector::Zero(prob.control_dim()), 0.0};
  for (std::size_t i = 0; i < nodes; ++i) {
    env.x = grid.node(i);
    init[i] = phi0.eval(env);
  }
  return solve_hjb_from(prob, std::move(init), grid, 0.0, T, dt, settings);
}

SemigroupOp::SemigroupOp(const ControlProblem& prob, GridSpec grid, double dt,
                         HjbSettings settings)
    : prob_(&prob), grid_(std::move(grid)), dt_(dt), settings_(std::move(settings)) {
  if (!(dt_ > 0)) throw UserError("semigroup time step must be positive");
}

Vector SemigroupOp::apply(const Vector& phi, double s) const {
  if (s < 0) throw UserError("semigroup time must be non-negative");
  if (s == 0) return phi;
  const double steps = s / dt_;
  if (std::abs(steps - std::round(steps)) > 1e-9)
    throw UserError("semigroup time must be a multiple of dt");
  return solve_hjb_from(*prob_, phi, grid_, 0.0, s, dt_, settings_).values.back();
}

namespace {

// Structural + sampled qualification for the Hopf-Lax oracle: f = u and
// L = |u|^2/2 with an unbounded control box.
bool quadratic_family(const ControlProblem& prob) {
  const int n = prob.state_dim();
  if (prob.control_dim() != n) return false;
  for (int j = 0; j < n; ++j)
    if (prob.control_set().bounded(j) || std::isfinite(prob.control_set().lo[j]) ||
        std::isfinite(prob.control_set().hi[j]))
      return false;
  Rng rng(424242);
  EvalEnv env{Vector(n), Vector(n), 0.0};
  Vector f(n);
  for (int it = 0; it < 20; ++it) {
    env.x = rng.uniform_vector(prob.domain().lo, prob.domain().hi);
    for (int j = 0; j < n; ++j) env.u[j] = rng.uniform(-3, 3);
    env.t = rng.uniform(0, prob.horizon());
    try {
      prob.eval_dynamics(env, f);
      if ((f - env.u).lpNorm<Eigen::Infinity>() > 1e-12 * (1 + env.u.norm())) return false;
      const double l = prob.eval_lagrangian(env);
      if (std::abs(l - 0.5 * env.u.squaredNorm()) > 1e-12 * (1 + env.u.squaredNorm()))
        return false;
    } catch (const EvalError&) {
      return false;
    }
  }
  return true;
}

}  // namespace

double hopf_lax_oracle(const ControlProblem& prob, const Expr& phi0, double t,
                       const Vector& x) {
  if (!quadratic_family(prob))
    throw UserError("Hopf-Lax oracle is valid for the quadratic family only "
                    "(f = u, L = |u|^2/2, unbounded controls)");
  if (t < 0) throw UserError("Hopf-Lax oracle requires t >= 0");
  EvalEnv env{x, Vector::Zero(prob.control_dim()), 0.0};
  if (t == 0) return phi0.eval(env);

  const Box& dom = prob.domain();
  const int n = prob.state_dim();
  const auto value = [&](const Vector& y) {
    env.x = y;
    return phi0.eval(env) + (x - y).squaredNorm() / (2.0 * t);
  };

  const int per_dim = 2001;
  Vector best_y(n);
  double best = std::numeric_limits<double>::infinity();
  if (n == 1) {
    for (int i = 0; i < per_dim; ++i) {
      Vector y = Vector::Constant(1, dom.lo[0] + dom.width(0) * i / (per_dim - 1));
      const double v = value(y);
      if (v < best) {
        best = v;
        best_y = y;
      }
    }
  } else {
    for (int i = 0; i < per_dim; ++i) {
      for (int j = 0; j < per_dim; ++j) {
        Vector y(2);
        y << dom.lo[0] + dom.width(0) * i / (per_dim - 1),
            dom.lo[1] + dom.width(1) * j / (per_dim - 1);
        const double v = value(y);
        if (v < best) {
          best = v;
          best_y = y;
        }
      }
    }
  }

  // Coordinate ternary refinement around the best grid point.
  for (int round = 0; round < 4; ++round) {
    for (int axis = 0; axis < n; ++axis) {
      double lo = std::max(dom.lo[axis], best_y[axis] - dom.width(axis) / (per_dim - 1));
      double hi = std::min(dom.hi[axis], best_y[axis] + dom.width(axis) / (per_dim - 1));
      Vector y = best_y;
      for (int it = 0; it < 120; ++it) {
        const double m1 = lo + (hi - lo) / 3.0;
        const double m2 = hi - (hi - lo) / 3.0;
        y[axis] = m1;
        const double v1 = value(y);
        y[axis] = m2;
        const double v2 = value(y);
        if (v1 < v2)
          hi = m2;
        else
          lo = m1;
      }
      y[axis] = 0.5 * (lo + hi);
      const double v = value(y);
      if (v < best) {
        best = v;
        best_y = y;
      }
    }
  }
  return best;
}

ResidualReport viscosity_residual(const ValueGrid& vg, const ControlProblem& prob,
                                  const HamiltonianOptions& hopts) {
  const GridSpec& grid = vg.grid;
  const std::size_t K = vg.steps();
  if (K < 1) throw UserError("viscosity residual requires at least one time step");
  const std::size_t nodes = grid.node_count();
  const int d = grid.dim();

  // Kink detection on the initial slice: flag nodes whose discrete slope jump
  // along any axis is far above the median, then exclude a 3-node
  // neighborhood.
  std::vector<bool> kink(nodes, false);
  {
    std::vector<double> jumps;
    std::vector<std::pair<std::size_t, double>> node_jump;
    const Vector& v0 = vg.values[0];
    std::vector<int> idx(d);
    for (std::size_t i = 0; i < nodes; ++i) {
      std::size_t rem = i;
      for (int axis = d - 1; axis >= 0; --axis) {
        idx[axis] = static_cast<int>(rem % grid.shape[axis]);
        rem /= grid.shape[axis];
      }
      double jump = 0.0;
      for (int axis = 0; axis < d; ++axis) {
        if (idx[axis] == 0 || idx[axis] == grid.shape[axis] - 1) continue;
        std::vector<int> up = idx, down = idx;
        ++up[axis];
        --down[axis];
        const double h = grid.spacing(axis);
        jump = std::max(jump, std::abs((v0[grid.flat_index(up)] - v0[i]) / h -
                                       (v0[i] - v0[grid.flat_index(down)]) / h));
      }
      jumps.push_back(jump);
      node_jump.emplace_back(i, jump);
    }
    std::nth_element(jumps.begin(), jumps.begin() + jumps.size() / 2, jumps.end());
    const double median_jump = jumps[jumps.size() / 2];
    const double threshold = std::max(0.25, 10.0 * median_jump);
    for (const auto& [i, jump] : node_jump) {
      if (jump <= threshold) continue;
      // flag the 3-node neighborhood along every axis
      std::size_t rem = i;
      std::vector<int> at(d);
      for (int axis = d - 1; axis >= 0; --axis) {
        at[axis] = static_cast<int>(rem % grid.shape[axis]);
        rem /= grid.shape[axis];
      }
      std::vector<int> nb(d);
      const int radius = 3;
      if (d == 1) {
        for (int o = -radius; o <= radius; ++o) {
          const int j = at[0] + o;
          if (j >= 0 && j < grid.shape[0]) kink[j] = true;
        }
      } else {
        for (int o0 = -radius; o0 <= radius; ++o0) {
          for (int o1 = -radius; o1 <= radius; ++o1) {
            nb[0] = at[0] + o0;
            nb[1] = at[1] + o1;
            if (nb[0] >= 0 && nb[0] < grid.shape[0] && nb[1] >= 0 && nb[1] < grid.shape[1])
              kink[grid.flat_index(nb)] = true;
          }
        }
      }
    }
  }

  std::vector<double> residuals;
  std::vector<int> idx(d);
  for (std::size_t k = 1; k <= K; ++k) {
    const double t = vg.time(k);
    for (std::size_t i = 0; i < nodes; ++i) {
      if (kink[i]) continue;
      std::size_t rem = i;
      bool interior = true;
      for (int axis = d - 1; axis >= 0; --axis) {
        idx[axis] = static_cast<int>(rem % grid.shape[axis]);
        rem /= grid.shape[axis];
        if (idx[axis] == 0 || idx[axis] == grid.shape[axis] - 1) interior = false;
      }
      if (!interior && prob.boundary() == BoundaryMode::Clamp) continue;

      double dtv;
      if (k < K)
        dtv = (vg.values[k + 1][i] - vg.values[k - 1][i]) / (2.0 * vg.dt);
      else
        dtv = (vg.values[k][i] - vg.values[k - 1][i]) / vg.dt;

      const Vector p = slice_gradient(grid, vg.values[k], i, prob.boundary());
      const double h = hamiltonian(prob, grid.node(i), p, t, hopts).value;
      residuals.push_back(std::abs(dtv + h));
    }
  }

  ResidualReport report;
  report.count = residuals.size();
  if (residuals.empty()) return report;
  std::sort(residuals.begin(), residuals.end());
  report.median = residuals[residuals.size() / 2];
  report.p90 = residuals[static_cast<std::size_t>(
      std::min<double>(static_cast<double>(residuals.size()) - 1,
                       std::floor(0.9 * static_cast<double>(residuals.size()))))];
  return report;
}

}  // namespace charflow
