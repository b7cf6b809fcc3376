/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 *
 * End-to-end acceptance suite. Each criterion prints one PASS/FAIL line with
 * its measured quantities and wall time; the process exits non-zero if any
 * criterion fails.
 */

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "charflow/characteristics.hpp"
#include "charflow/cost.hpp"
#include "charflow/hjb.hpp"
#include "charflow/problem.hpp"
#include "charflow/rng.hpp"
#include "charflow/transport.hpp"

using namespace charflow;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

Vector vec1(double v) { return Vector::Constant(1, v); }

ControlProblem quadratic_problem_1d(double xlo, double xhi, double ulo, double uhi) {
  return ControlProblem({parse_expression("u0", {1, 1})},
                        parse_expression("u0*u0/2", {1, 1}),
                        ControlSet::box(vec1(ulo), vec1(uhi)),
                        Box::make(vec1(xlo), vec1(xhi)), 2.0, BoundaryMode::Clamp);
}

ControlProblem quadratic_problem_2d(double ulo, double uhi) {
  Vector xlo(2), xhi(2), lo(2), hi(2);
  xlo << -2, -2;
  xhi << 2, 2;
  lo << ulo, ulo;
  hi << uhi, uhi;
  return ControlProblem(
      {parse_expression("u0", {2, 2}), parse_expression("u1", {2, 2})},
      parse_expression("(u0*u0 + u1*u1)/2", {2, 2}), ControlSet::box(lo, hi),
      Box::make(xlo, xhi), 2.0, BoundaryMode::Clamp);
}

double inverse_normal_cdf(double p) {
  // Bisection on the normal CDF; deterministic and accurate to ~1e-13.
  double lo = -10, hi = 10;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (0.5 * (1.0 + std::erf(mid / std::sqrt(2.0))) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

DiscreteMeasure gaussian_quantiles(int count, double mean, double sigma) {
  std::vector<Vector> atoms;
  for (int i = 0; i < count; ++i)
    atoms.push_back(vec1(mean + sigma * inverse_normal_cdf((i + 0.5) / count)));
  return DiscreteMeasure::create(std::move(atoms), Vector::Constant(count, 1.0 / count));
}

double brute_force_permutation_min(const Matrix& cost) {
  const int n = static_cast<int>(cost.rows());
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double total = 0;
    for (int i = 0; i < n; ++i) total += cost(i, perm[i]);
    best = std::min(best, total / n);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

int failures = 0;

void report(int criterion, const char* name, bool pass, const std::string& detail,
            double seconds) {
  std::printf("[%s] criterion %d: %s (%s) [%.2f s]\n", pass ? "PASS" : "FAIL", criterion,
              name, detail.c_str(), seconds);
  std::fflush(stdout);
  if (!pass) ++failures;
}

void run_criterion(int criterion, const char* name, double budget_seconds,
                   const std::function<std::pair<bool, std::string>()>& body) {
  const auto start = Clock::now();
  bool pass = false;
  std::string detail;
  try {
    std::tie(pass, detail) = body();
  } catch (const std::exception& e) {
    pass = false;
    detail = std::string("exception: ") + e.what();
  }
  const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
  if (budget_seconds > 0) {
    std::ostringstream budget;
    budget << detail << ", runtime " << seconds << " s <= " << budget_seconds << " s";
    detail = budget.str();
    if (seconds > budget_seconds) pass = false;
  }
  report(criterion, name, pass, detail, seconds);
}

unsigned worker_threads() {
  return std::min(4u, std::max(1u, std::thread::hardware_concurrency()));
}

// --- criteria ---------------------------------------------------------------

std::pair<bool, std::string> criterion1_hamiltonian() {
  const double kInf = std::numeric_limits<double>::infinity();
  Rng rng(101);

  // Unbounded quadratic family: H(x,p) = |p|^2/2 to 1e-9 (1-D and 2-D).
  double worst_free = 0;
  const ControlProblem free1 = quadratic_problem_1d(-2, 2, -kInf, kInf);
  const ControlProblem free2 = quadratic_problem_2d(-kInf, kInf);
  for (int k = 0; k < 1000; ++k) {
    const Vector x1 = vec1(rng.uniform(-2, 2));
    const Vector p1 = vec1(rng.uniform(-5, 5));
    worst_free = std::max(
        worst_free, std::abs(hamiltonian(free1, x1, p1, 0.0).value - 0.5 * p1.squaredNorm()));
    Vector x2(2), p2(2);
    x2 << rng.uniform(-2, 2), rng.uniform(-2, 2);
    p2 << rng.uniform(-5, 5), rng.uniform(-5, 5);
    worst_free = std::max(
        worst_free, std::abs(hamiltonian(free2, x2, p2, 0.0).value - 0.5 * p2.squaredNorm()));
  }

  // Bounded box vs the grid-search oracle at step 1e-4.
  const ControlProblem boxed = quadratic_problem_1d(-2, 2, -1, 1);
  double worst_boxed = 0;
  for (int k = 0; k < 50; ++k) {
    const Vector x = vec1(rng.uniform(-2, 2));
    const double p = rng.uniform(-3, 3);
    double oracle = -kInf;
    for (double u = -1.0; u <= 1.0 + 1e-12; u += 1e-4)
      oracle = std::max(oracle, p * u - 0.5 * u * u);
    worst_boxed =
        std::max(worst_boxed, std::abs(hamiltonian(boxed, x, vec1(p), 0.0).value - oracle));
  }

  std::ostringstream detail;
  detail << "free err " << worst_free << " <= 1e-9, boxed err " << worst_boxed
         << " <= 1e-6";
  return {worst_free <= 1e-9 && worst_boxed <= 1e-6, detail.str()};
}

std::pair<bool, std::string> criterion2_characteristics() {
  const double kInf = std::numeric_limits<double>::infinity();
  const ControlProblem prob = quadratic_problem_1d(-4, 4, -kInf, kInf);
  const SeedGrid grid = SeedGrid::make(Box::make(vec1(-1), vec1(1)), {41});

  // Focusing potential: X(t,z) = z(1-t), caustic at t = 1.
  const FlowMap flow =
      flow_map(prob, parse_expression("-x0^2/2", {1, 0}), grid, 2.0, 1e-3, worker_threads());
  double worst_x = 0;
  for (std::size_t s = 0; s < flow.trajectories.size(); ++s) {
    const CharTrajectory& traj = flow.trajectories[s];
    const double z = traj.seed[0];
    for (std::size_t k = 0; k < traj.states.size(); ++k)
      worst_x = std::max(worst_x,
                         std::abs(traj.states[k].X[0] - z * (1.0 - traj.time(k))));
  }
  const double tstar = caustic_time(flow);

  // Expanding potential: no caustic up to T = 2.
  const double tstar_expanding = caustic_time(
      prob, parse_expression("x0^2/2", {1, 0}), grid, 2.0, 1e-3, worker_threads());

  std::ostringstream detail;
  detail << "max |X - z(1-t)| = " << worst_x << " <= 1e-8, T* = " << tstar
         << " in [0.95, 1], expanding T* = " << tstar_expanding << " = 2";
  return {worst_x <= 1e-8 && tstar >= 0.95 && tstar <= 1.0 && tstar_expanding == 2.0,
          detail.str()};
}

double hjb_sup_error(const ControlProblem& prob, const Expr& phi0, int nodes, double dt,
                     double T) {
  const GridSpec grid = GridSpec::make(prob.domain(), {nodes});
  HjbSettings settings;
  settings.threads = worker_threads();
  const ValueGrid vg = solve_hjb(prob, phi0, grid, T, dt, settings);
  double sup = 0;
  for (std::size_t i = 0; i < grid.node_count(); ++i)
    sup = std::max(sup, std::abs(vg.values.back()[i] -
                                 hopf_lax_oracle(prob, phi0, T, grid.node(i))));
  return sup;
}

std::pair<bool, std::string> criterion3_hjb() {
  const double kInf = std::numeric_limits<double>::infinity();
  const ControlProblem prob = quadratic_problem_1d(-2, 2, -kInf, kInf);
  const Expr phi0 = parse_expression("x0^2/2", {1, 0});
  const double coarse = hjb_sup_error(prob, phi0, 201, 0.01, 1.0);   // h = 0.02
  const double fine = hjb_sup_error(prob, phi0, 401, 0.005, 1.0);    // h = 0.01
  std::ostringstream detail;
  detail << "sup error " << coarse << " <= 1e-2, refinement factor "
         << coarse / fine << " >= 1.5";
  return {coarse <= 1e-2 && coarse / fine >= 1.5, detail.str()};
}

std::pair<bool, std::string> criterion4_semigroup() {
  const double kInf = std::numeric_limits<double>::infinity();
  const ControlProblem prob = quadratic_problem_1d(-2, 2, -kInf, kInf);
  const GridSpec grid = GridSpec::make(prob.domain(), {201});
  HjbSettings settings;
  settings.threads = worker_threads();
  const SemigroupOp op(prob, grid, 0.01, settings);

  Vector phi(grid.node_count());
  for (std::size_t i = 0; i < grid.node_count(); ++i) {
    const double x = grid.node(i)[0];
    phi[i] = 0.5 * x * x;
  }
  const Vector direct = op.apply(phi, 1.0);
  const Vector composed = op.apply(op.apply(phi, 0.5), 0.5);
  const double diff = (direct - composed).lpNorm<Eigen::Infinity>();
  std::ostringstream detail;
  detail << "||T_1 phi - T_0.5 T_0.5 phi||_inf = " << diff << " <= 1e-2";
  return {diff <= 1e-2, detail.str()};
}

std::pair<bool, std::string> criterion5_cost() {
  const double kInf = std::numeric_limits<double>::infinity();
  const ControlProblem prob = quadratic_problem_1d(-2, 2, -kInf, kInf);
  const GridSpec grid = GridSpec::make(prob.domain(), {401});  // h = 0.01
  Rng rng(505);

  double worst_shoot = 0, worst_transcribe = 0, worst_oracle = 0;
  for (int k = 0; k < 20; ++k) {
    // Snap to grid nodes so the DP oracle precondition holds.
    const double x = std::round(rng.uniform(-1, 1) * 100.0) / 100.0;
    const double y = std::round(rng.uniform(-1, 1) * 100.0) / 100.0;
    const double closed_form = 0.5 * (x - y) * (x - y);
    const CostQuery q{vec1(x), vec1(y), 0.0, 1.0};

    const CostResult shot = cost_shooting(prob, q);
    if (!shot.ok()) return {false, "shooting failed to converge"};
    worst_shoot = std::max(worst_shoot, std::abs(shot.value - closed_form));

    const CostResult tr = cost_transcription(prob, q, 50);
    if (!tr.ok()) return {false, "transcription failed to converge"};
    worst_transcribe = std::max(worst_transcribe, std::abs(tr.value - closed_form));

    const double oracle = cost_dp_oracle(prob, q, grid, 0.1);
    worst_oracle = std::max(worst_oracle, std::abs(oracle - closed_form));
  }

  // Minimum-energy double integrator: cost 6 between rest states one unit apart.
  Vector dlo(2), dhi(2);
  dlo << -5, -10;
  dhi << 5, 10;
  const ControlProblem di(
      {parse_expression("x1", {2, 1}), parse_expression("u0", {2, 1})},
      parse_expression("u0*u0/2", {2, 1}), ControlSet::unbounded(1), Box::make(dlo, dhi),
      1.0, BoundaryMode::Clamp);
  Vector a(2), b(2);
  a << 1, 0;
  b << 0, 0;
  const CostResult shot_di = cost_shooting(di, {a, b});
  const CostResult tr_di = cost_transcription(di, {a, b}, 100);
  const bool di_ok = shot_di.ok() && std::abs(shot_di.value - 6.0) <= 0.1 && tr_di.ok() &&
                     std::abs(tr_di.value - 6.0) <= 0.1;

  std::ostringstream detail;
  detail << "shooting err " << worst_shoot << " <= 1e-6, transcription err "
         << worst_transcribe << " <= 1e-3, oracle err " << worst_oracle
         << " <= 5e-3, double integrator " << (di_ok ? "ok" : "failed");
  return {worst_shoot <= 1e-6 && worst_transcribe <= 1e-3 && worst_oracle <= 5e-3 && di_ok,
          detail.str()};
}

std::pair<bool, std::string> criterion6_mk_exactness() {
  Rng rng(606);
  double worst_obj = 0, worst_gap = 0, worst_support = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng.uniform(0, 6));  // up to 7 atoms per side
    std::vector<Vector> xs, ys;
    for (int i = 0; i < n; ++i) {
      xs.push_back(vec1(rng.uniform(-2, 2) + 1e-3 * i));
      ys.push_back(vec1(rng.uniform(-2, 2) + 1e-3 * i));
    }
    const DiscreteMeasure mu0 =
        DiscreteMeasure::create(xs, Vector::Constant(n, 1.0 / n));
    const DiscreteMeasure mu1 =
        DiscreteMeasure::create(ys, Vector::Constant(n, 1.0 / n));
    Matrix cost(n, n);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        cost(i, j) = trial % 2 == 0
                         ? 0.5 * (mu0.atoms[i] - mu1.atoms[j]).squaredNorm()
                         : rng.uniform(0, 3);
    const MkResult result = solve_mk(cost, mu0, mu1);
    worst_obj = std::max(worst_obj,
                         std::abs(result.primal - brute_force_permutation_min(cost)));
    worst_gap = std::max(worst_gap, result.gap);
    worst_support = std::max(
        worst_support,
        check_support_condition(result.plan, result.pair, cost).max_violation);
  }
  std::ostringstream detail;
  detail << "brute-force diff " << worst_obj << " <= 1e-12, gap " << worst_gap
         << " <= 1e-8, support " << worst_support << " <= 1e-7";
  return {worst_obj <= 1e-12 && worst_gap <= 1e-8 && worst_support <= 1e-7, detail.str()};
}

std::pair<bool, std::string> criterion7_monge_map() {
  const double kInf = std::numeric_limits<double>::infinity();
  const ControlProblem prob = quadratic_problem_1d(-10, 10, -kInf, kInf);
  const int atoms = 400;
  const DiscreteMeasure mu0 = gaussian_quantiles(atoms, 0.0, 1.0);
  const DiscreteMeasure mu1 = gaussian_quantiles(atoms, 1.0, 2.0);

  CostSettings cost_settings;
  cost_settings.shooting.dt = 0.02;  // exact for linear characteristics
  cost_settings.keep_paths = false;
  const CostMatrix C =
      cost_matrix(prob, mu0.atoms, mu1.atoms, cost_settings,
                  CostPolicy::ShootingThenTranscription, worker_threads());

  const MkResult mk = solve_mk(C, mu0, mu1);

  const CostFn cost_fn = [&](const Vector& x, const Vector& y) {
    CostResult r = compute_cost(prob, CostQuery{x, y, 0.0, 1.0}, cost_settings,
                                CostPolicy::ShootingOnly);
    if (!r.ok()) throw NumericError("cost evaluator failed");
    return r.value;
  };
  MongeSettings settings;
  settings.flow_dt = 0.01;
  settings.envelope_candidates = 16;
  settings.threads = worker_threads();
  const MongeMap map = monge_map(prob, mu0, mk, mu1, cost_fn, &C.values, settings);

  double max_dev = 0;
  for (std::size_t k = 0; k < map.atoms.size(); ++k)
    max_dev = std::max(max_dev,
                       std::abs(map.images[k][0] - (1.0 + 2.0 * map.atoms[k][0])));

  const DiscreteMeasure pushed = pushforward(map);
  double spacing = 0;
  for (std::size_t i = 0; i + 1 < mu1.size(); ++i)
    spacing = std::max(spacing, mu1.atoms[i + 1][0] - mu1.atoms[i][0]);
  const double w1 = wasserstein1_1d(pushed, mu1);
  const double action = initial_measure_action(map, cost_fn);
  const double action_rel = std::abs(action - mk.primal) / std::max(1e-12, mk.primal);

  std::ostringstream detail;
  detail << "map dev " << max_dev << " <= 0.05, W1 " << w1 << " <= " << 2 * spacing
         << ", action rel " << action_rel << " <= 0.02, skipped " << map.skipped_mass
         << " <= 0.01";
  return {max_dev <= 0.05 && w1 <= 2 * spacing && action_rel <= 0.02 &&
              map.skipped_mass <= 0.01,
          detail.str()};
}

std::pair<bool, std::string> criterion8_monotonicity() {
  Rng rng(808);
  for (int trial = 0; trial < 100; ++trial) {
    const int n0 = 3 + static_cast<int>(rng.uniform(0, 6));
    const int n1 = 3 + static_cast<int>(rng.uniform(0, 6));
    std::vector<Vector> xs, ys;
    Vector w0(n0), w1(n1);
    for (int i = 0; i < n0; ++i) {
      xs.push_back(vec1(rng.uniform(-2, 2) + 1e-4 * i));
      w0[i] = 0.2 + rng.uniform();
    }
    for (int j = 0; j < n1; ++j) {
      ys.push_back(vec1(rng.uniform(-2, 2) + 1e-4 * j));
      w1[j] = 0.2 + rng.uniform();
    }
    w0 /= w0.sum();
    // Normalize twice so both sums hit 1 at machine precision.
    w0 /= w0.sum();
    w1 /= w1.sum();
    w1 /= w1.sum();
    const DiscreteMeasure mu0 = DiscreteMeasure::create(xs, w0);
    const DiscreteMeasure mu1 = DiscreteMeasure::create(ys, w1);

    // Convex ground cost h(x - y): mix quadratic and quartic trials.
    Matrix cost(n0, n1);
    for (int i = 0; i < n0; ++i) {
      for (int j = 0; j < n1; ++j) {
        const double d = mu0.atoms[i][0] - mu1.atoms[j][0];
        cost(i, j) = trial % 2 == 0 ? 0.5 * d * d : 0.25 * d * d * d * d;
      }
    }
    const MkResult result = solve_mk(cost, mu0, mu1);
    const auto arcs = result.plan.support();
    for (const auto& a : arcs) {
      for (const auto& b : arcs) {
        const double xi = mu0.atoms[a.i][0], xk = mu0.atoms[b.i][0];
        const double yj = mu1.atoms[a.j][0], yl = mu1.atoms[b.j][0];
        if (xi < xk - 1e-12 && yj > yl + 1e-9) {
          std::ostringstream detail;
          detail << "crossing pair in trial " << trial;
          return {false, detail.str()};
        }
      }
    }
  }
  return {true, "no crossing pair across 100 instances"};
}

std::pair<bool, std::string> criterion9_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "CLI binary path missing (argv[1])"};
  const fs::path dir = fs::temp_directory_path() / "charflow_acceptance_determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);

  {
    std::ofstream spec(dir / "spec.ini");
    spec << "[problem]\n"
            "state_dim = 1\ncontrol_dim = 1\ndynamics = [\"u0\"]\n"
            "lagrangian = \"u0*u0/2\"\ncontrol_lo = [-inf]\ncontrol_hi = [inf]\n"
            "domain_lo = [-4]\ndomain_hi = [4]\nhorizon = 2.0\nboundary = \"clamp\"\n"
            "[characteristics]\nu0 = \"-x0^2/2\"\nseeds = [41]\n"
            "seed_lo = [-1]\nseed_hi = [1]\nT = 1.0\ndt = 0.001\n"
            "[hjb]\nphi0 = \"x0^2/2\"\nresolution = [201]\nT = 1.0\ndt = 0.01\n"
            "[transport]\nmu0_atoms = [0, 1, 2]\n"
            "mu0_weights = [0.333333333333333333, 0.333333333333333333, "
            "0.333333333333333334]\n"
            "mu1_atoms = [0.5, 1.5, 2.5]\n"
            "mu1_weights = [0.333333333333333333, 0.333333333333333333, "
            "0.333333333333333334]\nshooting_dt = 0.01\nflow_dt = 0.01\n";
  }

  const auto run_cmd = [&](const std::string& args) {
    const std::string cmd = cli + " " + args + " > /dev/null 2>&1";
    return std::system(cmd.c_str()) == 0;
  };
  const auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
  };

  const std::string spec = (dir / "spec.ini").string();
  const std::vector<std::pair<std::string, std::vector<std::string>>> pipelines = {
      {"characteristics", {"trajectories.csv"}},
      {"hjb", {"value_grid.csv"}},
      {"transport",
       {"cost_matrix.csv", "plan.csv", "potentials.csv", "map.csv", "pushforward.csv",
        "summary.json"}},
  };
  for (const auto& [command, files] : pipelines) {
    const fs::path out_a = dir / (command + "_a");
    const fs::path out_b = dir / (command + "_b");
    if (!run_cmd(command + " --spec " + spec + " --out " + out_a.string() +
                 " --seed 7 --threads 2") ||
        !run_cmd(command + " --spec " + spec + " --out " + out_b.string() +
                 " --seed 7 --threads 1"))
      return {false, command + " pipeline failed"};
    for (const std::string& file : files) {
      if (slurp(out_a / file) != slurp(out_b / file))
        return {false, command + "/" + file + " differs between reruns"};
      if (slurp(out_a / file).empty()) return {false, command + "/" + file + " is empty"};
    }
  }
  return {true, "all pipeline outputs byte-identical across reruns"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::string cli = argc > 1 ? argv[1] : "";

  run_criterion(1, "Hamiltonian correctness", 1.0, criterion1_hamiltonian);
  run_criterion(2, "characteristics and caustic time", 5.0, criterion2_characteristics);
  run_criterion(3, "HJB vs Hopf-Lax", 30.0, criterion3_hjb);
  run_criterion(4, "semigroup property", 60.0, criterion4_semigroup);
  run_criterion(5, "cost agreement", 60.0, criterion5_cost);
  run_criterion(6, "MK exactness", 10.0, criterion6_mk_exactness);
  run_criterion(7, "Monge map on Gaussian quantiles", 300.0, criterion7_monge_map);
  run_criterion(8, "1-D monotonicity", 30.0, criterion8_monotonicity);
  run_criterion(9, "CLI determinism", 0.0, [&] { return criterion9_determinism(cli); });

  if (failures) {
    std::printf("%d criterion(s) FAILED\n", failures);
    return 1;
  }
  std::printf("all 9 criteria passed\n");
  return 0;
}
