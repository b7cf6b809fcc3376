/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/characteristics.hpp"

#include <cmath>

#include "charflow/parallel.hpp"

namespace charflow {

std::size_t SeedGrid::size() const {
  std::size_t s = 1;
  for (int c : shape) s *= static_cast<std::size_t>(c);
  return s;
}

Vector SeedGrid::seed(std::size_t flat) const {
  const int d = dim();
  Vector z(d);
  for (int axis = d - 1; axis >= 0; --axis) {
    const std::size_t count = static_cast<std::size_t>(shape[axis]);
    const std::size_t idx = flat % count;
    flat /= count;
    z[axis] = box.lo[axis] + static_cast<double>(idx) * spacing(axis);
  }
  return z;
}

std::size_t SeedGrid::flat_index(const std::vector<int>& idx) const {
  std::size_t flat = 0;
  for (int axis = 0; axis < dim(); ++axis)
    flat = flat * static_cast<std::size_t>(shape[axis]) + static_cast<std::size_t>(idx[axis]);
  return flat;
}

SeedGrid SeedGrid::make(Box box, std::vector<int> shape) {
  if (static_cast<int>(shape.size()) != box.dim())
    throw UserError("seed grid shape does not match box dimension");
  for (int c : shape)
    if (c < 3) throw UserError("seed grid requires at least 3 seeds per dimension");
  return SeedGrid{std::move(box), std::move(shape)};
}

namespace {

struct OdeState {
  Vector X, P;
  double U;
};

// Characteristic right-hand side via the Hamiltonian envelope derivatives.
OdeState rhs(const ControlProblem& prob, const OdeState& s, double t, bool periodic,
             const HamiltonianOptions& hopts) {
  const Vector x_eval = periodic ? prob.domain().wrap(s.X) : s.X;
  HamiltonianEval he;
  try {
    he = hamiltonian(prob, x_eval, s.P, t, hopts);
  } catch (const NumericError& err) {
    throw NumericError(std::string("characteristic integration failed: ") + err.what());
  }
  return OdeState{he.Hp, -he.Hx, -he.value + s.P.dot(he.Hp)};
}

OdeState axpy(const OdeState& a, double c, const OdeState& b) {
  return OdeState{a.X + c * b.X, a.P + c * b.P, a.U + c * b.U};
}

}  // namespace

CharTrajectory integrate_characteristic_from(const ControlProblem& prob, const Vector& x0,
                                             const Vector& p0, double value0, double t0,
                                             double t1, double dt, bool enforce_domain,
                                             const HamiltonianOptions& hopts) {
  if (x0.size() != prob.state_dim() || p0.size() != prob.state_dim())
    throw UserError("characteristic seed dimension mismatch");
  if (t1 < t0) throw UserError("characteristic horizon must satisfy t1 >= t0");
  const double T = t1 - t0;
  const bool periodic = prob.boundary() == BoundaryMode::Periodic;
  const double escape_tol = 1e-9 * std::max(1.0, prob.domain().max_width());

  CharTrajectory traj;
  traj.seed = x0;
  traj.t0 = t0;

  std::size_t steps = 0;
  if (T > 0) {
    if (!(dt > 0)) throw UserError("characteristic step dt must be positive");
    steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
    steps = std::max<std::size_t>(steps, 1);
  }
  traj.dt = steps ? T / static_cast<double>(steps) : 0.0;
  traj.states.reserve(steps + 1);

  OdeState s{x0, p0, value0};
  traj.states.push_back(CharState{s.X, s.P, s.U});
  if (enforce_domain && !periodic && !prob.domain().contains(s.X, escape_tol))
    throw NumericError("characteristic seed outside the domain");

  const double h = traj.dt;
  for (std::size_t k = 0; k < steps; ++k) {
    const double t = t0 + static_cast<double>(k) * h;
    const OdeState k1 = rhs(prob, s, t, periodic, hopts);
    const OdeState k2 = rhs(prob, axpy(s, 0.5 * h, k1), t + 0.5 * h, periodic, hopts);
    const OdeState k3 = rhs(prob, axpy(s, 0.5 * h, k2), t + 0.5 * h, periodic, hopts);
    const OdeState k4 = rhs(prob, axpy(s, h, k3), t + h, periodic, hopts);
    s.X += (h / 6.0) * (k1.X + 2.0 * k2.X + 2.0 * k3.X + k4.X);
    s.P += (h / 6.0) * (k1.P + 2.0 * k2.P + 2.0 * k3.P + k4.P);
    s.U += (h / 6.0) * (k1.U + 2.0 * k2.U + 2.0 * k3.U + k4.U);
    if (enforce_domain && !periodic && !prob.domain().contains(s.X, escape_tol))
      throw NumericError("characteristic escaped the domain at t = " +
                         std::to_string(t + h));
    traj.states.push_back(CharState{s.X, s.P, s.U});
  }
  return traj;
}

CharTrajectory integrate_characteristic(const ControlProblem& prob, const Expr& u0,
                                        const Vector& z, double T, double dt,
                                        const HamiltonianOptions& hopts) {
  if (!u0.valid()) throw UserError("initial potential u0 is empty");
  if (u0.max_control_index() >= 0 || u0.uses_time())
    throw UserError("initial potential u0 must depend on state variables only");
  if (u0.max_state_index() >= prob.state_dim())
    throw UserError("initial potential references an undeclared state variable");

  EvalEnv env{z, Vector::Zero(prob.control_dim()), 0.0};
  Vector p0(prob.state_dim());
  for (int i = 0; i < prob.state_dim(); ++i) p0[i] = u0.diff(VarRef::state(i)).eval(env);
  const double value0 = u0.eval(env);
  return integrate_characteristic_from(prob, z, p0, value0, 0.0, T, dt,
                                       /*enforce_domain=*/true, hopts);
}

namespace {

// Determinant estimates of dX/dz per grid cell by forward differences across
// neighboring seeds. Cells are indexed like seeds with the last index of each
// axis dropped.
Vector cell_dets(const FlowMap& flow, std::size_t stamp) {
  const SeedGrid& grid = flow.grid;
  const int d = grid.dim();
  if (d == 1) {
    const int s0 = grid.shape[0];
    Vector dets(s0 - 1);
    for (int i = 0; i + 1 < s0; ++i) {
      const double dX = flow.trajectories[i + 1].states[stamp].X[0] -
                        flow.trajectories[i].states[stamp].X[0];
      dets[i] = dX / grid.spacing(0);
    }
    return dets;
  }
  if (d == 2) {
    const int s0 = grid.shape[0], s1 = grid.shape[1];
    Vector dets((s0 - 1) * (s1 - 1));
    Index c = 0;
    for (int i = 0; i + 1 < s0; ++i) {
      for (int j = 0; j + 1 < s1; ++j, ++c) {
        const Vector& x00 = flow.trajectories[grid.flat_index({i, j})].states[stamp].X;
        const Vector& x10 = flow.trajectories[grid.flat_index({i + 1, j})].states[stamp].X;
        const Vector& x01 = flow.trajectories[grid.flat_index({i, j + 1})].states[stamp].X;
        const Vector col0 = (x10 - x00) / grid.spacing(0);
        const Vector col1 = (x01 - x00) / grid.spacing(1);
        dets[c] = col0[0] * col1[1] - col0[1] * col1[0];
      }
    }
    return dets;
  }
  throw UserError("flow maps support 1-D and 2-D seed grids only");
}

// Distance between characteristics; periodic domains use the torus metric.
double char_distance(const FlowMap& flow, const Vector& a, const Vector& b) {
  if (flow.boundary != BoundaryMode::Periodic) return (a - b).norm();
  double sq = 0;
  for (Index d = 0; d < a.size(); ++d) {
    const double w = flow.grid.box.width(static_cast<int>(d));
    double delta = std::fmod(std::abs(a[d] - b[d]), w);
    delta = std::min(delta, w - delta);
    sq += delta * delta;
  }
  return std::sqrt(sq);
}

}  // namespace

FlowMap flow_map(const ControlProblem& prob, const Expr& u0, const SeedGrid& grid, double T,
                 double dt, unsigned threads, const HamiltonianOptions& hopts) {
  FlowMap flow;
  flow.grid = grid;
  flow.dt = dt;
  flow.T = T;
  flow.boundary = prob.boundary();
  flow.trajectories.resize(grid.size());
  parallel_for(grid.size(), threads, [&](std::size_t i) {
    flow.trajectories[i] = integrate_characteristic(prob, u0, grid.seed(i), T, dt, hopts);
  });
  const std::size_t stamps = flow.trajectories.front().states.size();
  flow.dets.resize(stamps);
  for (std::size_t k = 0; k < stamps; ++k) flow.dets[k] = cell_dets(flow, k);
  return flow;
}

double caustic_time(const FlowMap& flow) {
  const SeedGrid& grid = flow.grid;
  const std::size_t stamps = flow.stamps();
  if (stamps == 0) return flow.T;

  double min_spacing = grid.spacing(0);
  for (int d = 1; d < grid.dim(); ++d) min_spacing = std::min(min_spacing, grid.spacing(d));
  const double collision = 1e-6 * min_spacing;

  for (std::size_t k = 0; k < stamps; ++k) {
    // Determinants start at 1, so a sign change necessarily passes this
    // threshold as well.
    if (flow.dets[k].minCoeff() < 1e-6) return flow.trajectories.front().time(k);

    // Pairwise near-collision of axis-adjacent characteristics.
    if (grid.dim() == 1) {
      for (int i = 0; i + 1 < grid.shape[0]; ++i) {
        const double gap = char_distance(flow, flow.trajectories[i + 1].states[k].X,
                                         flow.trajectories[i].states[k].X);
        if (gap < collision) return flow.trajectories.front().time(k);
      }
    } else {
      for (int i = 0; i < grid.shape[0]; ++i) {
        for (int j = 0; j < grid.shape[1]; ++j) {
          const Vector& a = flow.trajectories[grid.flat_index({i, j})].states[k].X;
          if (i + 1 < grid.shape[0]) {
            const Vector& b = flow.trajectories[grid.flat_index({i + 1, j})].states[k].X;
            if (char_distance(flow, a, b) < collision)
              return flow.trajectories.front().time(k);
          }
          if (j + 1 < grid.shape[1]) {
            const Vector& b = flow.trajectories[grid.flat_index({i, j + 1})].states[k].X;
            if (char_distance(flow, a, b) < collision)
              return flow.trajectories.front().time(k);
          }
        }
      }
    }
  }
  return flow.T;
}

double caustic_time(const ControlProblem& prob, const Expr& u0, const SeedGrid& grid,
                    double T, double dt, unsigned threads, const HamiltonianOptions& hopts) {
  return caustic_time(flow_map(prob, u0, grid, T, dt, threads, hopts));
}

namespace {

double reconstruct_at_stamp(const FlowMap& flow, std::size_t k, const Vector& x) {
  const SeedGrid& grid = flow.grid;
  if (grid.dim() == 1) {
    const int s0 = grid.shape[0];
    for (int i = 0; i + 1 < s0; ++i) {
      const double xa = flow.trajectories[i].states[k].X[0];
      const double xb = flow.trajectories[i + 1].states[k].X[0];
      const double lo = std::min(xa, xb), hi = std::max(xa, xb);
      if (x[0] >= lo - 1e-12 && x[0] <= hi + 1e-12) {
        const double denom = xb - xa;
        const double theta = std::abs(denom) < 1e-300 ? 0.5 : (x[0] - xa) / denom;
        const double ua = flow.trajectories[i].states[k].U;
        const double ub = flow.trajectories[i + 1].states[k].U;
        return ua + theta * (ub - ua);
      }
    }
    throw UserError("reconstruction point lies outside the deformed seed hull");
  }

  // 2-D: split each deformed cell into two triangles and solve barycentric
  // coordinates; before the caustic time the containing simplex is unique.
  for (int i = 0; i + 1 < grid.shape[0]; ++i) {
    for (int j = 0; j + 1 < grid.shape[1]; ++j) {
      const std::size_t i00 = grid.flat_index({i, j});
      const std::size_t i10 = grid.flat_index({i + 1, j});
      const std::size_t i01 = grid.flat_index({i, j + 1});
      const std::size_t i11 = grid.flat_index({i + 1, j + 1});
      const std::size_t tris[2][3] = {{i00, i10, i11}, {i00, i11, i01}};
      for (const auto& tri : tris) {
        const Vector& a = flow.trajectories[tri[0]].states[k].X;
        const Vector& b = flow.trajectories[tri[1]].states[k].X;
        const Vector& c = flow.trajectories[tri[2]].states[k].X;
        const double det = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        if (std::abs(det) < 1e-300) continue;
        const double l1 = ((x[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (x[1] - a[1])) / det;
        const double l2 = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / det;
        const double l0 = 1.0 - l1 - l2;
        const double tol = -1e-10;
        if (l0 >= tol && l1 >= tol && l2 >= tol) {
          return l0 * flow.trajectories[tri[0]].states[k].U +
                 l1 * flow.trajectories[tri[1]].states[k].U +
                 l2 * flow.trajectories[tri[2]].states[k].U;
        }
      }
    }
  }
  throw UserError("reconstruction point lies outside the deformed seed hull");
}

}  // namespace

double reconstruct_solution(const FlowMap& flow, double t, const Vector& x) {
  if (flow.trajectories.empty()) throw UserError("empty flow map");
  const CharTrajectory& first = flow.trajectories.front();
  if (x.size() != first.seed.size()) throw UserError("reconstruction point dimension mismatch");
  if (t < first.t0 - 1e-12 || t > first.final_time() + 1e-12)
    throw UserError("reconstruction time outside the integrated horizon");
  if (first.steps() == 0) return reconstruct_at_stamp(flow, 0, x);

  const double pos = (t - first.t0) / first.dt;
  const std::size_t k0 = std::min(static_cast<std::size_t>(std::max(0.0, std::floor(pos))),
                                  first.steps() - 1);
  const double frac = std::clamp(pos - static_cast<double>(k0), 0.0, 1.0);
  if (frac < 1e-12) return reconstruct_at_stamp(flow, k0, x);
  if (frac > 1.0 - 1e-12) return reconstruct_at_stamp(flow, k0 + 1, x);
  const double u0 = reconstruct_at_stamp(flow, k0, x);
  const double u1 = reconstruct_at_stamp(flow, k0 + 1, x);
  return u0 + frac * (u1 - u0);
}

}  // namespace charflow
