/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "charflow/characteristics.hpp"
#include "charflow/cost.hpp"
#include "charflow/csv.hpp"
#include "charflow/hjb.hpp"
#include "charflow/problem.hpp"
#include "charflow/spec_file.hpp"
#include "charflow/transport.hpp"

namespace {

using namespace charflow;

constexpr int kExitOk = 0;
constexpr int kExitUser = 1;
constexpr int kExitInternal = 2;

struct GlobalOptions {
  std::string spec_path;
  std::string out_dir = ".";
  unsigned threads = 1;
  std::uint64_t seed = 0;
};

std::string base_dir_of(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  return parent.empty() ? std::string(".") : parent.string();
}

std::ofstream open_output(const std::string& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  const std::string path = dir + "/" + name;
  std::ofstream out(path);
  if (!out) throw UserError("cannot write output file: " + path);
  return out;
}

Vector parse_vector_flag(const std::string& text, int expected, const char* what) {
  std::vector<double> values;
  std::string token;
  std::istringstream in(text);
  while (std::getline(in, token, ',')) {
    try {
      values.push_back(std::stod(token));
    } catch (const std::exception&) {
      throw UserError(std::string("malformed ") + what + " component: " + token);
    }
  }
  if (static_cast<int>(values.size()) != expected)
    throw UserError(std::string(what) + " must have " + std::to_string(expected) +
                    " comma-separated components");
  Vector v(expected);
  for (int i = 0; i < expected; ++i) v[i] = values[i];
  return v;
}

// --- subcommands -------------------------------------------------------------

int cmd_hamiltonian(const GlobalOptions& go, const std::string& x_text,
                    const std::string& p_text, double t) {
  const SpecFile spec = SpecFile::load(go.spec_path);
  const ControlProblem prob = spec.build_problem();
  const Vector x = parse_vector_flag(x_text, prob.state_dim(), "--x");
  const Vector p = parse_vector_flag(p_text, prob.state_dim(), "--p");
  HamiltonianOptions opts;
  opts.seed = 20260811 + go.seed;
  const HamiltonianEval he = hamiltonian(prob, x, p, t, opts);
  std::cout << "value = " << fmt17(he.value) << "\n";
  std::cout << "argmax_u = " << fmt17(he.argmax) << "\n";
  std::cout << "Hx = " << fmt17(he.Hx) << "\n";
  std::cout << "Hp = " << fmt17(he.Hp) << "\n";
  return kExitOk;
}

int cmd_characteristics(const GlobalOptions& go) {
  const SpecFile spec = SpecFile::load(go.spec_path);
  const ControlProblem prob = spec.build_problem();
  const Dims d = spec.dims();
  const Expr u0 = parse_expression(spec.text("characteristics", "u0"), {d.n, 0});
  const double T = spec.number("characteristics", "T");
  const double dt = spec.number("characteristics", "dt");

  const auto counts = spec.numbers("characteristics", "seeds");
  if (static_cast<int>(counts.size()) != d.n)
    throw UserError("characteristics.seeds must list one count per state dimension");
  std::vector<int> shape;
  for (double c : counts) {
    if (c < 1) throw UserError("characteristics.seeds entries must be positive");
    shape.push_back(static_cast<int>(c));
  }
  Vector seed_lo = prob.domain().lo, seed_hi = prob.domain().hi;
  if (spec.has("characteristics", "seed_lo")) {
    const auto lo = spec.numbers("characteristics", "seed_lo");
    const auto hi = spec.numbers("characteristics", "seed_hi");
    if (static_cast<int>(lo.size()) != d.n || static_cast<int>(hi.size()) != d.n)
      throw UserError("characteristics.seed_lo/seed_hi must have state_dim entries");
    for (int k = 0; k < d.n; ++k) {
      seed_lo[k] = lo[k];
      seed_hi[k] = hi[k];
    }
  }
  const SeedGrid grid = SeedGrid::make(Box::make(seed_lo, seed_hi), shape);

  const FlowMap flow = flow_map(prob, u0, grid, T, dt, go.threads);
  const double tstar = caustic_time(flow);

  std::ofstream out = open_output(go.out_dir, "trajectories.csv");
  out << "t";
  for (int k = 0; k < d.n; ++k) out << ",z" << k;
  for (int k = 0; k < d.n; ++k) out << ",X" << k;
  for (int k = 0; k < d.n; ++k) out << ",P" << k;
  out << ",U\n";
  for (const CharTrajectory& traj : flow.trajectories) {
    for (std::size_t s = 0; s < traj.states.size(); ++s) {
      out << fmt17(traj.time(s));
      out << "," << fmt17(traj.seed);
      out << "," << fmt17(traj.states[s].X);
      out << "," << fmt17(traj.states[s].P);
      out << "," << fmt17(traj.states[s].U) << "\n";
    }
  }
  std::cout << "caustic_time = " << fmt17(tstar) << "\n";
  std::cout << "trajectories = " << flow.trajectories.size() << "\n";
  return kExitOk;
}

int cmd_hjb(const GlobalOptions& go) {
  const SpecFile spec = SpecFile::load(go.spec_path);
  const ControlProblem prob = spec.build_problem();
  const Dims d = spec.dims();
  const Expr phi0 = parse_expression(spec.text("hjb", "phi0"), {d.n, 0});
  const double T = spec.number("hjb", "T");
  const double dt = spec.number("hjb", "dt");

  const auto res = spec.numbers("hjb", "resolution");
  if (static_cast<int>(res.size()) != d.n)
    throw UserError("hjb.resolution must list one node count per state dimension");
  std::vector<int> shape;
  for (double c : res) shape.push_back(static_cast<int>(c));
  const GridSpec grid = GridSpec::make(prob.domain(), shape);

  HjbSettings settings;
  settings.control_samples =
      static_cast<int>(spec.number_or("hjb", "control_samples", 33));
  settings.threads = go.threads;
  const ValueGrid vg = solve_hjb(prob, phi0, grid, T, dt, settings);

  std::ofstream out = open_output(go.out_dir, "value_grid.csv");
  out << "# dim=" << d.n << " shape=";
  for (std::size_t k = 0; k < shape.size(); ++k) out << (k ? "x" : "") << shape[k];
  out << " lo=" << fmt17(grid.box.lo) << " hi=" << fmt17(grid.box.hi)
      << " dt=" << fmt17(dt) << " steps=" << vg.steps() << " boundary="
      << (prob.boundary() == BoundaryMode::Periodic ? "periodic" : "clamp") << "\n";
  out << "k,node";
  for (int k = 0; k < d.n; ++k) out << ",x" << k;
  out << ",V\n";
  for (std::size_t k = 0; k < vg.values.size(); ++k) {
    for (std::size_t i = 0; i < grid.node_count(); ++i) {
      out << k << "," << i << "," << fmt17(grid.node(i)) << ","
          << fmt17(vg.values[k][i]) << "\n";
    }
  }

  const ResidualReport rep = viscosity_residual(vg, prob);
  std::cout << "residual_median = " << fmt17(rep.median) << "\n";
  std::cout << "residual_p90 = " << fmt17(rep.p90) << "\n";

  // Oracle comparison when the problem qualifies for Hopf-Lax.
  try {
    double sup = 0;
    for (std::size_t i = 0; i < grid.node_count(); ++i)
      sup = std::max(sup, std::abs(vg.values.back()[i] -
                                   hopf_lax_oracle(prob, phi0, T, grid.node(i))));
    std::cout << "hopf_lax_sup_error = " << fmt17(sup) << "\n";
  } catch (const UserError&) {
    std::cout << "hopf_lax_sup_error = n/a (not the quadratic family)\n";
  }
  return kExitOk;
}

int cmd_transport(const GlobalOptions& go) {
  const SpecFile spec = SpecFile::load(go.spec_path);
  const ControlProblem prob = spec.build_problem();
  const std::string base = base_dir_of(go.spec_path);
  const DiscreteMeasure mu0 = spec.load_measure("mu0", base);
  const DiscreteMeasure mu1 = spec.load_measure("mu1", base);
  for (const DiscreteMeasure* mu : {&mu0, &mu1})
    for (const Vector& a : mu->atoms)
      if (!prob.domain().contains(a))
        throw UserError("measure atom outside the problem domain: " + fmt17(a));

  CostSettings cost_settings;
  cost_settings.shooting.dt = spec.number_or("transport", "shooting_dt", 1e-3);
  cost_settings.shooting.seed = 911 + go.seed;
  cost_settings.transcription_intervals =
      static_cast<int>(spec.number_or("transport", "transcription_N", 50));
  cost_settings.keep_paths = false;
  const double t1 = spec.number_or("transport", "t1", 1.0);

  const CostMatrix C = cost_matrix(prob, mu0.atoms, mu1.atoms, cost_settings,
                                   CostPolicy::ShootingThenTranscription, go.threads,
                                   0.0, t1);

  {
    std::ofstream out = open_output(go.out_dir, "cost_matrix.csv");
    out << "x\\y";
    for (std::size_t j = 0; j < mu1.size(); ++j)
      out << "," << fmt17(mu1.atoms[j], ';');
    out << "\n";
    for (std::size_t i = 0; i < mu0.size(); ++i) {
      out << fmt17(mu0.atoms[i], ';');
      for (std::size_t j = 0; j < mu1.size(); ++j) out << "," << fmt17(C.values(i, j));
      out << "\n";
    }
  }

  const MkResult mk = solve_mk(C, mu0, mu1);
  const SupportReport support = check_support_condition(mk.plan, mk.pair, C.values);

  {
    std::ofstream out = open_output(go.out_dir, "plan.csv");
    out << "i,j,mass\n";
    for (const auto& arc : mk.plan.support())
      out << arc.i << "," << arc.j << "," << fmt17(arc.mass) << "\n";
  }
  {
    std::ofstream out = open_output(go.out_dir, "potentials.csv");
    out << "measure,index,potential\n";
    for (Index i = 0; i < mk.pair.phi0.size(); ++i)
      out << "0," << i << "," << fmt17(mk.pair.phi0[i]) << "\n";
    for (Index j = 0; j < mk.pair.phi1.size(); ++j)
      out << "1," << j << "," << fmt17(mk.pair.phi1[j]) << "\n";
  }

  // Cost evaluator for the envelope section and the action.
  CostFn cost_fn = [&](const Vector& x, const Vector& y) {
    CostResult r = compute_cost(prob, CostQuery{x, y, 0.0, t1}, cost_settings);
    if (!r.ok()) throw NumericError("cost evaluation failed inside the envelope");
    return r.value;
  };

  MongeSettings monge_settings;
  monge_settings.flow_dt = spec.number_or("transport", "flow_dt", 1e-3);
  monge_settings.grad_step_rel = spec.number_or("transport", "grad_step_rel", 1e-4);
  monge_settings.envelope_candidates =
      static_cast<int>(spec.number_or("transport", "envelope_candidates", 16));
  monge_settings.t1 = t1;
  monge_settings.threads = go.threads;
  const MongeMap map = monge_map(prob, mu0, mk, mu1, cost_fn, &C.values, monge_settings);

  {
    std::ofstream out = open_output(go.out_dir, "map.csv");
    for (int k = 0; k < mu0.dim(); ++k) out << (k ? "," : "") << "x" << k;
    for (int k = 0; k < mu0.dim(); ++k) out << ",p0_" << k;
    for (int k = 0; k < mu0.dim(); ++k) out << ",T" << k;
    out << ",weight\n";
    for (std::size_t i = 0; i < map.atoms.size(); ++i) {
      out << fmt17(map.atoms[i]) << "," << fmt17(map.p0[i]) << ","
          << fmt17(map.images[i]) << "," << fmt17(map.weights[static_cast<Index>(i)])
          << "\n";
    }
  }

  const DiscreteMeasure pushed = pushforward(map);
  write_measure_csv(go.out_dir + "/pushforward.csv", pushed);

  double w1;
  if (mu0.dim() == 1) {
    w1 = wasserstein1_1d(pushed, mu1);
  } else {
    Matrix l1_cost(pushed.size(), mu1.size());
    for (std::size_t i = 0; i < pushed.size(); ++i)
      for (std::size_t j = 0; j < mu1.size(); ++j)
        l1_cost(i, j) = (pushed.atoms[i] - mu1.atoms[j]).norm();
    w1 = solve_mk(l1_cost, pushed, mu1).primal;
  }
  const double action = initial_measure_action(map, cost_fn);

  std::ofstream summary = open_output(go.out_dir, "summary.json");
  summary << "{\n"
          << "  \"schema\": 1,\n"
          << "  \"primal\": " << fmt17(mk.primal) << ",\n"
          << "  \"dual\": " << fmt17(mk.dual) << ",\n"
          << "  \"gap\": " << fmt17(mk.gap) << ",\n"
          << "  \"support_violation\": " << fmt17(support.max_violation) << ",\n"
          << "  \"pushforward_W1\": " << fmt17(w1) << ",\n"
          << "  \"action\": " << fmt17(action) << ",\n"
          << "  \"skipped_mass\": " << fmt17(map.skipped_mass) << "\n"
          << "}\n";

  std::cout << "primal = " << fmt17(mk.primal) << "\n";
  std::cout << "dual = " << fmt17(mk.dual) << "\n";
  std::cout << "gap = " << fmt17(mk.gap) << "\n";
  std::cout << "support_violation = " << fmt17(support.max_violation) << "\n";
  std::cout << "pushforward_W1 = " << fmt17(w1) << "\n";
  std::cout << "action = " << fmt17(action) << "\n";
  std::cout << "skipped_mass = " << fmt17(map.skipped_mass) << "\n";
  return kExitOk;
}

int cmd_validate(const GlobalOptions& go) {
  const SpecFile spec = SpecFile::load(go.spec_path);
  const ControlProblem prob = spec.build_problem();
  const int samples = static_cast<int>(spec.number_or("validate", "samples", 400));
  const AssumptionReport rep = check_assumptions(prob, samples, 7 + go.seed);
  std::cout << "K0 = " << fmt17(rep.k0) << "\n";
  std::cout << "K1 = " << fmt17(rep.k1) << "\n";
  std::cout << "K2 = " << fmt17(rep.k2) << "\n";
  std::cout << "alpha_R = " << fmt17(rep.alpha_r) << "\n";
  std::cout << "growth_warning = " << (rep.growth_warning ? "yes" : "no") << "\n";
  std::cout << "lipschitz_warning = " << (rep.lipschitz_warning ? "yes" : "no") << "\n";
  std::cout << "superlinearity_warning = " << (rep.superlinearity_warning ? "yes" : "no")
            << "\n";
  std::cout << "velocity_cost_set_convexity = not checked\n";
  for (const std::string& note : rep.notes) std::cout << "note: " << note << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"charflow: optimal transport with control-generated ground costs"};
  app.require_subcommand(1);

  GlobalOptions go;

  const auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--spec", go.spec_path, "problem-spec file (INI-style or JSON)")
        ->required();
    cmd->add_option("--out", go.out_dir, "output directory");
    cmd->add_option("--threads", go.threads, "worker cap for parallel maps");
    cmd->add_option("--seed", go.seed, "seed offset for randomized internals");
  };

  std::string x_text, p_text;
  double t_value = 0.0;
  CLI::App* hamiltonian_cmd =
      app.add_subcommand("hamiltonian", "evaluate H(x,p,t) with its maximizer");
  add_common(hamiltonian_cmd);
  hamiltonian_cmd->add_option("--x", x_text, "state, comma-separated")->required();
  hamiltonian_cmd->add_option("--p", p_text, "costate, comma-separated")->required();
  hamiltonian_cmd->add_option("--t", t_value, "time");

  CLI::App* characteristics_cmd = app.add_subcommand(
      "characteristics", "integrate the characteristic flow and estimate T*");
  add_common(characteristics_cmd);

  CLI::App* hjb_cmd =
      app.add_subcommand("hjb", "solve the HJB Cauchy problem on a grid");
  add_common(hjb_cmd);

  CLI::App* transport_cmd = app.add_subcommand(
      "transport", "cost matrix, Kantorovich solve, duals, Monge map");
  add_common(transport_cmd);

  CLI::App* validate_cmd =
      app.add_subcommand("validate", "sampled regularity checks of the problem data");
  add_common(validate_cmd);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kExitOk : kExitUser;
  }

  try {
    if (hamiltonian_cmd->parsed()) return cmd_hamiltonian(go, x_text, p_text, t_value);
    if (characteristics_cmd->parsed()) return cmd_characteristics(go);
    if (hjb_cmd->parsed()) return cmd_hjb(go);
    if (transport_cmd->parsed()) return cmd_transport(go);
    if (validate_cmd->parsed()) return cmd_validate(go);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUser;
  } catch (const EvalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitInternal;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUser;
}
