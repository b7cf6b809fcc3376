/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "charflow/characteristics.hpp"
#include "charflow/hjb.hpp"
#include "charflow/problem.hpp"

using namespace charflow;

namespace {

Vector vec1(double v) { return Vector::Constant(1, v); }

ControlProblem quadratic_problem(double xlo = -2, double xhi = 2) {
  return ControlProblem({parse_expression("u0", {1, 1})},
                        parse_expression("u0*u0/2", {1, 1}), ControlSet::unbounded(1),
                        Box::make(vec1(xlo), vec1(xhi)), 2.0, BoundaryMode::Clamp);
}

double sup_error_vs_oracle(const ControlProblem& prob, const Expr& phi0,
                           const ValueGrid& vg, double t) {
  const std::size_t k = static_cast<std::size_t>(std::llround(t / vg.dt));
  double sup = 0;
  for (std::size_t i = 0; i < vg.grid.node_count(); ++i) {
    const double oracle = hopf_lax_oracle(prob, phi0, t, vg.grid.node(i));
    sup = std::max(sup, std::abs(vg.values[k][i] - oracle));
  }
  return sup;
}

}  // namespace

TEST_CASE("zero initial data stays zero (u = 0 is optimal)") {
  const ControlProblem prob = quadratic_problem();
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {101});
  const ValueGrid vg = solve_hjb(prob, parse_expression("0", {1, 0}), grid, 0.5, 0.01);
  for (const Vector& slice : vg.values) {
    CHECK(slice.lpNorm<Eigen::Infinity>() <= 1e-12);
  }
  const ResidualReport rep = viscosity_residual(vg, prob);
  CHECK(rep.median <= 1e-9);
  CHECK(rep.p90 <= 1e-9);
}

TEST_CASE("Hopf-Lax oracle closed forms") {
  const ControlProblem prob = quadratic_problem();
  CHECK(hopf_lax_oracle(prob, parse_expression("0", {1, 0}), 1.0, vec1(0.3)) ==
        doctest::Approx(0.0).epsilon(1e-12));
  // phi0 = y^2/2: value x^2/(2(1+t))
  CHECK(hopf_lax_oracle(prob, parse_expression("x0^2/2", {1, 0}), 1.0, vec1(1.0)) ==
        doctest::Approx(0.25).epsilon(1e-9));
  // phi0 = -y: min_y -y + y^2/2 = -0.5 at x=0, t=1
  CHECK(hopf_lax_oracle(prob, parse_expression("-x0", {1, 0}), 1.0, vec1(0.0)) ==
        doctest::Approx(-0.5).epsilon(1e-9));
  // t = 0 falls back to phi0
  CHECK(hopf_lax_oracle(prob, parse_expression("x0^2/2", {1, 0}), 0.0, vec1(0.8)) ==
        doctest::Approx(0.32).epsilon(1e-12));

  // Rejected outside the quadratic family.
  const ControlProblem scaled({parse_expression("2*u0", {1, 1})},
                              parse_expression("u0*u0/2", {1, 1}), ControlSet::unbounded(1),
                              Box::make(vec1(-2), vec1(2)), 2.0, BoundaryMode::Clamp);
  CHECK_THROWS_AS(hopf_lax_oracle(scaled, parse_expression("0", {1, 0}), 1.0, vec1(0.0)),
                  UserError);
  const ControlProblem bounded({parse_expression("u0", {1, 1})},
                               parse_expression("u0*u0/2", {1, 1}),
                               ControlSet::box(vec1(-1), vec1(1)),
                               Box::make(vec1(-2), vec1(2)), 2.0, BoundaryMode::Clamp);
  CHECK_THROWS_AS(hopf_lax_oracle(bounded, parse_expression("0", {1, 0}), 1.0, vec1(0.0)),
                  UserError);
}

TEST_CASE("quadratic initial data matches the Hopf-Lax oracle at h=0.02") {
  const ControlProblem prob = quadratic_problem();
  const Expr phi0 = parse_expression("x0^2/2", {1, 0});
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  const ValueGrid vg = solve_hjb(prob, phi0, grid, 1.0, 0.01);

  // V(1, 0.5) = 0.5^2/4
  const std::size_t node = grid.nearest_node(vec1(0.5));
  CHECK(vg.values.back()[node] == doctest::Approx(0.0625).epsilon(5e-3));

  CHECK(sup_error_vs_oracle(prob, phi0, vg, 1.0) <= 1e-2);

  // Residuals of the numerical solution stay small away from kinks.
  const ResidualReport rep = viscosity_residual(vg, prob);
  CHECK(rep.median <= 5e-2);
}

TEST_CASE("grid refinement reduces the oracle error by at least 1.5x") {
  const ControlProblem prob = quadratic_problem();
  const Expr phi0 = parse_expression("x0^2/2", {1, 0});
  const GridSpec coarse = GridSpec::make(Box::make(vec1(-2), vec1(2)), {101});
  const GridSpec fine = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  const double err_coarse =
      sup_error_vs_oracle(prob, phi0, solve_hjb(prob, phi0, coarse, 1.0, 0.02), 1.0);
  const double err_fine =
      sup_error_vs_oracle(prob, phi0, solve_hjb(prob, phi0, fine, 1.0, 0.01), 1.0);
  CHECK(err_coarse / err_fine >= 1.5);
}

TEST_CASE("kinked initial data: phi0 = -|x| hits the Hopf-Lax value at the kink") {
  const ControlProblem prob = quadratic_problem();
  const Expr phi0 = parse_expression("-abs(x0)", {1, 0});
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  const ValueGrid vg = solve_hjb(prob, phi0, grid, 1.0, 0.01);
  const std::size_t node = grid.nearest_node(vec1(0.0));
  // min_y -|y| + y^2/2 = -1/2
  CHECK(vg.values.back()[node] == doctest::Approx(-0.5).epsilon(5e-3));
  CHECK(hopf_lax_oracle(prob, phi0, 1.0, vec1(0.0)) == doctest::Approx(-0.5).epsilon(1e-9));
}

TEST_CASE("semigroup: T_0 is the identity and T_1 = T_0.5 o T_0.5") {
  const ControlProblem prob = quadratic_problem();
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  const SemigroupOp op(prob, grid, 0.01);

  Vector phi(grid.node_count());
  EvalEnv env{Vector(1), Vector(0), 0.0};
  const Expr phi0 = parse_expression("x0^2/2", {1, 0});
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    env.x = grid.node(i);
    phi[i] = phi0.eval(env);
  }

  CHECK((op.apply(phi, 0.0) - phi).lpNorm<Eigen::Infinity>() == 0.0);

  const Vector direct = op.apply(phi, 1.0);
  const Vector composed = op.apply(op.apply(phi, 0.5), 0.5);
  CHECK((direct - composed).lpNorm<Eigen::Infinity>() <= 1e-2);

  CHECK_THROWS_AS(op.apply(phi, 0.005), UserError);  // not a multiple of dt
}

TEST_CASE("semigroup is monotone (scheme-exact comparison principle)") {
  const ControlProblem prob = quadratic_problem();
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {101});
  const SemigroupOp op(prob, grid, 0.02);

  Vector phi(grid.node_count()), psi(grid.node_count());
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const double x = grid.node(i)[0];
    phi[i] = 0.5 * x * x;
    psi[i] = 0.5 * x * x + 0.3 * (1.0 + std::sin(3 * x));
  }
  const Vector tphi = op.apply(phi, 0.5);
  const Vector tpsi = op.apply(psi, 0.5);
  for (std::size_t i = 0; i < grid.node_count(); ++i) CHECK(tphi[i] <= tpsi[i] + 1e-9);
}

TEST_CASE("CFL violation is rejected") {
  // Bounded controls reach |f| = 1 but dt/h = 50 >> 1.
  const ControlProblem prob({parse_expression("u0", {1, 1})},
                            parse_expression("u0*u0/2", {1, 1}),
                            ControlSet::box(vec1(-1), vec1(1)),
                            Box::make(vec1(-2), vec1(2)), 2.0, BoundaryMode::Clamp);
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  CHECK_THROWS_AS(solve_hjb(prob, parse_expression("0", {1, 0}), grid, 1.0, 1.0), UserError);
}

TEST_CASE("single-step residual report is defined (one-sided D_t)") {
  const ControlProblem prob = quadratic_problem();
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {101});
  const ValueGrid vg = solve_hjb(prob, parse_expression("x0^2/2", {1, 0}), grid, 0.02, 0.02);
  REQUIRE(vg.steps() == 1);
  const ResidualReport rep = viscosity_residual(vg, prob);
  CHECK(rep.count > 0);
  CHECK(std::isfinite(rep.median));
}

TEST_CASE("consistency with characteristics before the caustic time") {
  const ControlProblem prob = quadratic_problem(-4, 4);
  const Expr phi0 = parse_expression("x0^2/2", {1, 0});
  const GridSpec grid = GridSpec::make(Box::make(vec1(-2), vec1(2)), {201});
  const ValueGrid vg = solve_hjb(prob, phi0, grid, 0.5, 0.01);

  const SeedGrid seeds = SeedGrid::make(Box::make(vec1(-2.5), vec1(2.5)), {201});
  const FlowMap flow = flow_map(prob, phi0, seeds, 0.5, 1e-2);
  REQUIRE(caustic_time(flow) == 0.5);  // expanding case: no caustic

  double sup = 0;
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const double v_char = reconstruct_solution(flow, 0.5, grid.node(i));
    sup = std::max(sup, std::abs(v_char - vg.values.back()[i]));
  }
  CHECK(sup <= 1e-2);
}

TEST_CASE("periodic boundary agrees with a wide clamped domain on periodic data") {
  const Expr f = parse_expression("u0", {1, 1});
  const Expr L = parse_expression("u0*u0/2", {1, 1});
  const Expr phi0 = parse_expression("sin(2*3.14159265358979324*x0)", {1, 0});

  const ControlProblem periodic({f}, L, ControlSet::unbounded(1),
                                Box::make(vec1(0), vec1(1)), 2.0, BoundaryMode::Periodic);
  const ControlProblem wide({f}, L, ControlSet::unbounded(1),
                            Box::make(vec1(-1), vec1(2)), 2.0, BoundaryMode::Clamp);

  const GridSpec small_grid = GridSpec::make(Box::make(vec1(0), vec1(1)), {101});
  const GridSpec wide_grid = GridSpec::make(Box::make(vec1(-1), vec1(2)), {301});
  const ValueGrid vp = solve_hjb(periodic, phi0, small_grid, 0.2, 0.005);
  const ValueGrid vw = solve_hjb(wide, phi0, wide_grid, 0.2, 0.005);

  // Boundary effects of the wide run cannot reach [0,1] within t = 0.2.
  double sup = 0;
  for (std::size_t i = 0; i < small_grid.node_count(); ++i) {
    const Vector x = small_grid.node(i);
    const std::size_t iw = wide_grid.nearest_node(x);
    sup = std::max(sup, std::abs(vp.values.back()[i] - vw.values.back()[iw]));
  }
  CHECK(sup <= 2e-2);
}

TEST_CASE("2-D quadratic family matches the product closed form") {
  Vector lo(2), hi(2);
  lo << -2, -2;
  hi << 2, 2;
  const ControlProblem prob(
      {parse_expression("u0", {2, 2}), parse_expression("u1", {2, 2})},
      parse_expression("(u0*u0 + u1*u1)/2", {2, 2}), ControlSet::unbounded(2),
      Box::make(lo, hi), 2.0, BoundaryMode::Clamp);
  const GridSpec grid = GridSpec::make(Box::make(lo, hi), {41, 41});
  const Expr phi0 = parse_expression("(x0^2 + x1^2)/2", {2, 0});
  HjbSettings settings;
  settings.threads = 2;
  const ValueGrid vg = solve_hjb(prob, phi0, grid, 0.5, 0.05, settings);
  // V(t,x) = |x|^2 / (2(1+t))
  double sup = 0;
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const Vector x = grid.node(i);
    sup = std::max(sup, std::abs(vg.values.back()[i] - x.squaredNorm() / 3.0));
  }
  CHECK(sup <= 5e-2);
}
