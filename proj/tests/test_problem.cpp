/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "charflow/problem.hpp"
#include "charflow/rng.hpp"

using namespace charflow;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

Vector vec1(double v) { return Vector::Constant(1, v); }

Box box1(double lo, double hi) {
  return Box::make(vec1(lo), vec1(hi));
}

// f = u, L = u^2/2 on a 1-D state box.
ControlProblem quadratic_problem(double ulo = -kInf, double uhi = kInf) {
  std::vector<Expr> f = {parse_expression("u0", {1, 1})};
  Expr L = parse_expression("u0*u0/2", {1, 1});
  return ControlProblem(std::move(f), std::move(L), ControlSet::box(vec1(ulo), vec1(uhi)),
                        box1(-2, 2), 1.0, BoundaryMode::Clamp);
}

// Independent oracle: exhaustive grid search of sup_u <p,f> - L over [lo,hi].
double grid_search_h(const ControlProblem& prob, const Vector& x, const Vector& p, double t,
                     double lo, double hi, double step) {
  double best = -kInf;
  for (double u = lo; u <= hi + 0.5 * step; u += step) {
    const Vector uv = vec1(std::min(u, hi));
    best = std::max(best, p.dot(dynamics(prob, x, uv, t)) - running_cost(prob, x, uv, t));
  }
  return best;
}

}  // namespace

TEST_CASE("quadratic family: H = p^2/2, u* = p (closed form)") {
  const ControlProblem prob = quadratic_problem();
  CHECK(prob.closed_form_hamiltonian());

  const HamiltonianEval he = hamiltonian(prob, vec1(0.3), vec1(1.0), 0.0);
  CHECK(he.value == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(he.argmax[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(he.Hp[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(he.Hx[0] == doctest::Approx(0.0).epsilon(1e-12));

  const HamiltonianEval zero = hamiltonian(prob, vec1(0.0), vec1(0.0), 0.0);
  CHECK(zero.value == doctest::Approx(0.0));
  CHECK(zero.argmax[0] == doctest::Approx(0.0));
}

TEST_CASE("bounded control box clamps the maximizer") {
  const ControlProblem prob = quadratic_problem(-1.0, 1.0);
  const HamiltonianEval he = hamiltonian(prob, vec1(0.0), vec1(2.0), 0.0);
  CHECK(he.value == doctest::Approx(1.5).epsilon(1e-12));
  CHECK(he.argmax[0] == doctest::Approx(1.0).epsilon(1e-12));

  // Grid-search oracle at step 1e-4.
  const double oracle = grid_search_h(prob, vec1(0.0), vec1(2.0), 0.0, -1.0, 1.0, 1e-4);
  CHECK(std::abs(he.value - oracle) <= 1e-6);
}

TEST_CASE("numeric branch agrees with the closed form") {
  // f = x0*u0 (affine in u with x-dependent slope), L = u^2/2 + cos(x0)*u0.
  std::vector<Expr> f = {parse_expression("x0*u0", {1, 1})};
  Expr L = parse_expression("u0*u0/2 + cos(x0)*u0", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                            box1(-2, 2), 1.0, BoundaryMode::Clamp);
  CHECK(prob.closed_form_hamiltonian());

  HamiltonianOptions numeric;
  numeric.use_closed_form = false;

  Rng rng(11);
  for (int k = 0; k < 25; ++k) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const Vector p = vec1(rng.uniform(-3, 3));
    const HamiltonianEval cf = hamiltonian(prob, x, p, 0.0);
    const HamiltonianEval num = hamiltonian(prob, x, p, 0.0, numeric);
    CHECK(std::abs(cf.value - num.value) <= 1e-6 * (1.0 + std::abs(cf.value)));
    CHECK(std::abs(cf.argmax[0] - num.argmax[0]) <= 1e-4);
  }
}

TEST_CASE("numeric branch handles 2-D controls against a grid oracle") {
  // Quartic terms disable the closed form; compare with a tensor grid search.
  Vector lo(1), hi(1);
  lo << -2;
  hi << 2;
  std::vector<Expr> f = {parse_expression("u0 + u1/2", {1, 2})};
  Expr L = parse_expression("u0^2/2 + u0^4/10 + u1^2/2 + u1^4/10", {1, 2});
  Vector ulo(2), uhi(2);
  ulo << -2, -2;
  uhi << 2, 2;
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::box(ulo, uhi),
                            Box::make(lo, hi), 1.0, BoundaryMode::Clamp);
  CHECK(!prob.closed_form_hamiltonian());

  Rng rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const Vector p = vec1(rng.uniform(-2, 2));
    const HamiltonianEval he = hamiltonian(prob, x, p, 0.0);

    double oracle = -kInf;
    const int steps = 400;
    for (int a = 0; a <= steps; ++a) {
      for (int b = 0; b <= steps; ++b) {
        Vector u(2);
        u << -2.0 + 4.0 * a / steps, -2.0 + 4.0 * b / steps;
        oracle = std::max(oracle,
                          p.dot(dynamics(prob, x, u, 0.0)) - running_cost(prob, x, u, 0.0));
      }
    }
    CHECK(he.value >= oracle - 1e-7);          // search dominates the coarse grid
    CHECK(he.value <= oracle + 1e-3);          // and does not overshoot the sup
  }
}

TEST_CASE("sup property: H dominates <p,f(x,u)> - L for admissible u") {
  const ControlProblem prob = quadratic_problem(-1.0, 1.0);
  Rng rng(42);
  for (int k = 0; k < 1000; ++k) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const Vector p = vec1(rng.uniform(-4, 4));
    const double t = rng.uniform(0, 1);
    const Vector u = vec1(rng.uniform(-1, 1));
    const HamiltonianEval he = hamiltonian(prob, x, p, t);
    const double lower = p.dot(dynamics(prob, x, u, t)) - running_cost(prob, x, u, t);
    CHECK(he.value + 1e-7 >= lower);
  }
}

TEST_CASE("H is convex in p (midpoint inequality)") {
  const ControlProblem prob = quadratic_problem(-1.0, 1.0);
  Rng rng(43);
  for (int k = 0; k < 200; ++k) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const Vector p1 = vec1(rng.uniform(-4, 4));
    const Vector p2 = vec1(rng.uniform(-4, 4));
    const double mid = hamiltonian(prob, x, 0.5 * (p1 + p2), 0.0).value;
    const double h1 = hamiltonian(prob, x, p1, 0.0).value;
    const double h2 = hamiltonian(prob, x, p2, 0.0).value;
    CHECK(mid <= 0.5 * (h1 + h2) + 1e-7);
  }
}

TEST_CASE("envelope rule: Hp matches finite differences of H in p at interior argmax") {
  const ControlProblem prob = quadratic_problem();
  Rng rng(44);
  for (int k = 0; k < 50; ++k) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const Vector p = vec1(rng.uniform(-2, 2));
    const HamiltonianEval he = hamiltonian(prob, x, p, 0.0);
    const double h = 1e-6;
    const double hp_fd = (hamiltonian(prob, x, vec1(p[0] + h), 0.0).value -
                          hamiltonian(prob, x, vec1(p[0] - h), 0.0).value) /
                         (2.0 * h);
    CHECK(std::abs(he.Hp[0] - hp_fd) <= 1e-4);
  }
}

TEST_CASE("dynamics and running cost evaluate componentwise") {
  {
    const ControlProblem prob = quadratic_problem();
    CHECK(dynamics(prob, vec1(0.0), vec1(2.0), 0.0)[0] == 2.0);
  }
  {
    // Double integrator f = (x1, u0).
    std::vector<Expr> f = {parse_expression("x1", {2, 1}), parse_expression("u0", {2, 1})};
    Expr L = parse_expression("1", {2, 1});
    Vector lo(2), hi(2);
    lo << -5, -5;
    hi << 5, 5;
    const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                              Box::make(lo, hi), 1.0, BoundaryMode::Clamp);
    Vector x(2);
    x << 1, 2;
    const Vector v = dynamics(prob, x, vec1(3.0), 0.0);
    CHECK(v[0] == 2.0);
    CHECK(v[1] == 3.0);
    CHECK(running_cost(prob, x, vec1(3.0), 0.5) == 1.0);
  }
}

TEST_CASE("unbounded maximization raises the superlinearity error") {
  // L = -u^4 makes <p,f> - L grow without bound.
  std::vector<Expr> f = {parse_expression("u0", {1, 1})};
  Expr L = parse_expression("-u0^4", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                            box1(-1, 1), 1.0, BoundaryMode::Clamp);
  CHECK(!prob.closed_form_hamiltonian());
  CHECK_THROWS_AS(hamiltonian(prob, vec1(0.0), vec1(1.0), 0.0), NumericError);
}

TEST_CASE("construction rejects invalid problems") {
  // time-dependent dynamics
  CHECK_THROWS_AS(ControlProblem({parse_expression("u0*t", {1, 1})},
                                 parse_expression("u0*u0/2", {1, 1}),
                                 ControlSet::unbounded(1), box1(-1, 1), 1.0,
                                 BoundaryMode::Clamp),
                  UserError);
  // mismatched domain dimension
  CHECK_THROWS_AS(ControlProblem({parse_expression("u0", {1, 1}),
                                  parse_expression("u0", {1, 1})},
                                 parse_expression("u0*u0/2", {1, 1}),
                                 ControlSet::unbounded(1), box1(-1, 1), 1.0,
                                 BoundaryMode::Clamp),
                  UserError);
  // invalid control box
  CHECK_THROWS_AS(ControlSet::box(vec1(1.0), vec1(-1.0)), UserError);
  // non-positive horizon
  CHECK_THROWS_AS(ControlProblem({parse_expression("u0", {1, 1})},
                                 parse_expression("u0*u0/2", {1, 1}),
                                 ControlSet::unbounded(1), box1(-1, 1), 0.0,
                                 BoundaryMode::Clamp),
                  UserError);
}

TEST_CASE("check_assumptions: quadratic family has K1 = 0 and passes") {
  const ControlProblem prob = quadratic_problem();
  const AssumptionReport rep = check_assumptions(prob, 400, 7);
  CHECK(rep.k1 == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(!rep.growth_warning);
  CHECK(!rep.superlinearity_warning);
}

TEST_CASE("check_assumptions: f = x*u has K1 close to the analytic constant 1") {
  std::vector<Expr> f = {parse_expression("x0*u0", {1, 1})};
  Expr L = parse_expression("u0*u0/2", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L),
                            ControlSet::box(vec1(-1), vec1(1)), box1(-1, 1), 1.0,
                            BoundaryMode::Clamp);
  const AssumptionReport rep = check_assumptions(prob, 2000, 7);
  CHECK(rep.k1 > 0.8);
  CHECK(rep.k1 <= 1.0 + 1e-9);
}

TEST_CASE("check_assumptions: exp(u0) counts as superlinear (flag not raised)") {
  std::vector<Expr> f = {parse_expression("u0", {1, 1})};
  Expr L = parse_expression("exp(u0)", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                            box1(-1, 1), 1.0, BoundaryMode::Clamp);
  const AssumptionReport rep = check_assumptions(prob, 400, 7);
  CHECK(!rep.superlinearity_warning);
}

TEST_CASE("check_assumptions: linear L raises the superlinearity flag") {
  std::vector<Expr> f = {parse_expression("u0", {1, 1})};
  Expr L = parse_expression("abs(u0)", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                            box1(-1, 1), 1.0, BoundaryMode::Clamp);
  const AssumptionReport rep = check_assumptions(prob, 400, 7);
  CHECK(rep.superlinearity_warning);
}

TEST_CASE("check_assumptions: superlinear-growth dynamics raise the growth warning") {
  std::vector<Expr> f = {parse_expression("x0^2", {1, 1})};
  Expr L = parse_expression("u0*u0/2", {1, 1});
  const ControlProblem prob(std::move(f), std::move(L), ControlSet::unbounded(1),
                            box1(-4, 4), 1.0, BoundaryMode::Clamp);
  const AssumptionReport rep = check_assumptions(prob, 400, 7);
  CHECK(rep.growth_warning);
}
