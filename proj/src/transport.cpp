/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/transport.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "charflow/characteristics.hpp"
#include "charflow/network_simplex.hpp"
#include "charflow/parallel.hpp"

namespace charflow {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kMassTol = 1e-12;
}  // namespace

DiscreteMeasure DiscreteMeasure::create(std::vector<Vector> atoms, Vector weights) {
  if (atoms.empty() || static_cast<std::size_t>(weights.size()) != atoms.size())
    throw UserError("measure requires matching non-empty atoms and weights");
  const int d = static_cast<int>(atoms.front().size());
  double total = 0;
  for (Index i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0)) throw UserError("measure weights must be positive");
    total += weights[i];
    if (static_cast<int>(atoms[i].size()) != d)
      throw UserError("measure atoms must share one dimension");
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw UserError("measure weights must sum to 1 (got " + std::to_string(total) + ")");
  for (std::size_t a = 0; a < atoms.size(); ++a)
    for (std::size_t b = a + 1; b < atoms.size(); ++b)
      if ((atoms[a] - atoms[b]).lpNorm<Eigen::Infinity>() == 0.0)
        throw UserError("measure atoms must be distinct");
  return DiscreteMeasure{std::move(atoms), std::move(weights)};
}

std::vector<TransportPlan::SupportArc> TransportPlan::support(double mass_tol) const {
  std::vector<SupportArc> arcs;
  for (Index i = 0; i < coupling.rows(); ++i)
    for (Index j = 0; j < coupling.cols(); ++j)
      if (coupling(i, j) > mass_tol)
        arcs.push_back({static_cast<int>(i), static_cast<int>(j), coupling(i, j)});
  return arcs;
}

namespace {

// Union-find over mu0 atoms (ids 0..n0-1) and mu1 atoms (ids n0..n0+n1-1).
struct UnionFind {
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int a) {
    while (parent[a] != a) a = parent[a] = parent[parent[a]];
    return a;
  }
  void unite(int a, int b) { parent[find(a)] = find(b); }
  std::vector<int> parent;
};

// Spanning-tree duals tie exactly (slack 0) on zero-flow basic arcs, which
// makes the c-transform envelope non-differentiable at most atoms. Shift each
// support component by a constant centered inside its admissibility slack:
// offsets cancel within components (row mass equals column mass there), so
// primal/dual objectives, admissibility, and support equalities all survive,
// while generically slack arcs become strictly slack.
void center_component_offsets(const Matrix& cost, const TransportPlan& plan,
                              KantorovichPair& pair) {
  const int n0 = static_cast<int>(pair.phi0.size());
  const int n1 = static_cast<int>(pair.phi1.size());
  UnionFind uf(n0 + n1);
  for (const auto& arc : plan.support(kMassTol)) uf.unite(arc.i, n0 + arc.j);

  std::map<int, int> comp_ids;  // root -> compact id
  for (int a = 0; a < n0 + n1; ++a) comp_ids.emplace(uf.find(a), 0);
  int next_id = 0;
  for (auto& [root, id] : comp_ids) id = next_id++;
  const int comps = next_id;
  if (comps <= 1) return;

  const auto comp_of_row = [&](int i) { return comp_ids.at(uf.find(i)); };
  const auto comp_of_col = [&](int j) { return comp_ids.at(uf.find(n0 + j)); };

  // Minimal admissibility slack per ordered component pair (A -> B) over arcs
  // from a row in A to a column in B. Constraint: kappa_B - kappa_A <= slack.
  std::map<std::pair<int, int>, double> min_slack;
  for (int i = 0; i < n0; ++i) {
    for (int j = 0; j < n1; ++j) {
      if (!std::isfinite(cost(i, j))) continue;
      const int a = comp_of_row(i), b = comp_of_col(j);
      if (a == b) continue;
      const double slack = std::max(0.0, cost(i, j) - (pair.phi1[j] - pair.phi0[i]));
      auto [it, inserted] = min_slack.emplace(std::make_pair(a, b), slack);
      if (!inserted) it->second = std::min(it->second, slack);
    }
  }

  // Bucket the constraints per component for the sweeps.
  struct Bound {
    int other;
    double slack;
  };
  std::vector<std::vector<Bound>> uppers(comps), lowers(comps);
  for (const auto& [key, slack] : min_slack) {
    const auto& [a, b] = key;
    uppers[b].push_back({a, slack});  // kappa_b <= kappa_a + slack
    lowers[a].push_back({b, slack});  // kappa_a >= kappa_b - slack
  }

  // Midpoint Gauss-Seidel on the interval system; the zero vector is always
  // feasible, the gauge component stays pinned.
  const int gauge_comp = comp_of_row(0);
  Vector kappa = Vector::Zero(comps);
  const int max_sweeps = std::min(20000, 20 * comps + 200);
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    double change = 0;
    for (int c = 0; c < comps; ++c) {
      if (c == gauge_comp) continue;
      double lo = -kInf, hi = kInf;
      for (const Bound& bnd : uppers[c]) hi = std::min(hi, kappa[bnd.other] + bnd.slack);
      for (const Bound& bnd : lowers[c]) lo = std::max(lo, kappa[bnd.other] - bnd.slack);
      double target = kappa[c];
      if (std::isfinite(lo) && std::isfinite(hi)) {
        if (lo <= hi) target = 0.5 * (lo + hi);
      } else if (std::isfinite(hi)) {
        target = std::min(kappa[c], hi);  // repair only; do not create a tie at hi
      } else if (std::isfinite(lo)) {
        target = std::max(kappa[c], lo);
      }
      change = std::max(change, std::abs(target - kappa[c]));
      kappa[c] = target;
    }
    if (change < 1e-13) break;
  }

  for (int i = 0; i < n0; ++i) pair.phi0[i] += kappa[comp_of_row(i)];
  for (int j = 0; j < n1; ++j) pair.phi1[j] += kappa[comp_of_col(j)];
}

}  // namespace

MkResult solve_mk(const Matrix& cost, const DiscreteMeasure& mu0,
                  const DiscreteMeasure& mu1) {
  if (cost.rows() != static_cast<Index>(mu0.size()) ||
      cost.cols() != static_cast<Index>(mu1.size()))
    throw UserError("cost matrix shape does not match the measures");

  bool any_forbidden = false;
  for (Index i = 0; i < cost.rows() && !any_forbidden; ++i)
    for (Index j = 0; j < cost.cols(); ++j)
      if (!std::isfinite(cost(i, j))) {
        any_forbidden = true;
        break;
      }
  if (any_forbidden && !transport_feasible(cost, mu0.weights, mu1.weights))
    throw UserError("transport instance is infeasible: forbidden arcs disconnect supply "
                    "from demand");

  const TransportLpResult lp = transport_network_simplex(cost, mu0.weights, mu1.weights);

  MkResult result;
  result.plan.coupling = lp.flow;
  result.plan.objective = lp.objective;
  result.primal = lp.objective;
  result.pivots = lp.pivots;
  result.pair.phi0 = lp.row_potential;
  result.pair.phi1 = lp.col_potential;

  center_component_offsets(cost, result.plan, result.pair);

  // Gauge phi0[0] = 0 (potentials are defined up to a constant).
  const double gauge = result.pair.phi0[0];
  result.pair.phi0.array() -= gauge;
  result.pair.phi1.array() -= gauge;

  result.dual = result.pair.phi1.dot(mu1.weights) - result.pair.phi0.dot(mu0.weights);
  result.gap = std::abs(result.primal - result.dual);
  if (result.gap > 1e-8)
    throw NumericError("strong duality certificate failed: |primal - dual| = " +
                       std::to_string(result.gap));
  return result;
}

MkResult solve_mk(const CostMatrix& cost, const DiscreteMeasure& mu0,
                  const DiscreteMeasure& mu1) {
  return solve_mk(cost.values, mu0, mu1);
}

Vector c_transform_forward(const Vector& phi0, const Matrix& cost) {
  Vector phi1(cost.cols());
  for (Index j = 0; j < cost.cols(); ++j) {
    double best = kInf;
    for (Index i = 0; i < cost.rows(); ++i)
      if (std::isfinite(cost(i, j))) best = std::min(best, phi0[i] + cost(i, j));
    if (!std::isfinite(best))
      throw UserError("c-transform undefined: atom " + std::to_string(j) +
                      " has no finite arcs");
    phi1[j] = best;
  }
  return phi1;
}

Vector c_transform_backward(const Vector& phi1, const Matrix& cost) {
  Vector phi0(cost.rows());
  for (Index i = 0; i < cost.rows(); ++i) {
    double best = -kInf;
    for (Index j = 0; j < cost.cols(); ++j)
      if (std::isfinite(cost(i, j))) best = std::max(best, phi1[j] - cost(i, j));
    if (!std::isfinite(best))
      throw UserError("c-transform undefined: atom " + std::to_string(i) +
                      " has no finite arcs");
    phi0[i] = best;
  }
  return phi0;
}

SupportReport check_support_condition(const TransportPlan& plan, const KantorovichPair& pair,
                                      const Matrix& cost) {
  SupportReport report;
  for (const auto& arc : plan.support(kMassTol)) {
    const double violation =
        std::abs(pair.phi1[arc.j] - pair.phi0[arc.i] - cost(arc.i, arc.j));
    report.max_violation = std::max(report.max_violation, violation);
    ++report.checked;
  }
  return report;
}

PointwiseDualityReport pointwise_duality(int i, int j,
                                         const std::vector<KantorovichPair>& pairs,
                                         const Matrix& cost, const TransportPlan* plan) {
  if (pairs.empty()) throw UserError("pointwise duality requires at least one pair");
  PointwiseDualityReport report;
  report.cost_value = cost(i, j);
  report.best_lower = -kInf;
  for (const KantorovichPair& pair : pairs)
    report.best_lower = std::max(report.best_lower, pair.phi1[j] - pair.phi0[i]);
  report.slack = report.cost_value - report.best_lower;
  report.on_support = plan != nullptr && plan->coupling(i, j) > kMassTol;
  return report;
}

SectionResult monge_section(const CostFn& cost_fn, const Vector& phi1,
                            const std::vector<Vector>& y_atoms, const Vector& x,
                            double grad_step, int candidate_cap,
                            const Vector* center_costs, int preferred_branch,
                            double tie_tol) {
  const int n = static_cast<int>(x.size());
  const int n1 = static_cast<int>(y_atoms.size());
  if (phi1.size() != n1) throw UserError("monge_section: phi1 size mismatch");

  // Candidate branches, strongest center scores first when capped.
  std::vector<int> candidates(n1);
  std::iota(candidates.begin(), candidates.end(), 0);
  Vector center_score(n1);
  for (int j = 0; j < n1; ++j) {
    const double c = center_costs ? (*center_costs)[j] : cost_fn(x, y_atoms[j]);
    center_score[j] = phi1[j] - c;
  }
  if (candidate_cap > 0 && candidate_cap < n1) {
    std::stable_sort(candidates.begin(), candidates.end(),
                     [&](int a, int b) { return center_score[a] > center_score[b]; });
    candidates.resize(candidate_cap);
    std::sort(candidates.begin(), candidates.end());
    if (preferred_branch >= 0 &&
        std::find(candidates.begin(), candidates.end(), preferred_branch) ==
            candidates.end())
      candidates.push_back(preferred_branch);
  }

  double center_max = -kInf;
  int center_arg = -1;
  for (int j : candidates) {
    if (center_score[j] > center_max) {
      center_max = center_score[j];
      center_arg = j;
    }
  }
  const double scale_tol = tie_tol * (1.0 + std::abs(center_max));

  // A plan-carrying branch that reaches the center max wins any tie: zero-flow
  // basic arcs of the simplex tree bind admissibility exactly, and the section
  // through the support pair attains the potential identity exactly. A branch
  // strictly below the envelope would contradict complementary slackness.
  bool branch_mode = false;
  if (preferred_branch >= 0) {
    if (center_score[preferred_branch] < center_max - scale_tol) {
      SectionResult bad;
      bad.branch = center_arg;
      bad.p0 = Vector::Zero(n);
      return bad;  // differentiable = false
    }
    branch_mode = true;
    center_arg = preferred_branch;
  }

  SectionResult result;
  result.branch = center_arg;
  result.p0 = Vector::Zero(n);
  result.differentiable = true;

  for (int d = 0; d < n; ++d) {
    Vector up = x, down = x;
    up[d] += grad_step;
    down[d] -= grad_step;
    if (branch_mode) {
      // Differentiate the support branch alone.
      result.p0[d] = (cost_fn(down, y_atoms[center_arg]) - cost_fn(up, y_atoms[center_arg])) /
                     (2.0 * grad_step);
      continue;
    }
    double v_up = -kInf, v_down = -kInf;
    int arg_up = -1, arg_down = -1;
    for (int j : candidates) {
      const double vu = phi1[j] - cost_fn(up, y_atoms[j]);
      if (vu > v_up) {
        v_up = vu;
        arg_up = j;
      }
      const double vd = phi1[j] - cost_fn(down, y_atoms[j]);
      if (vd > v_down) {
        v_down = vd;
        arg_down = j;
      }
    }
    if (arg_up != center_arg || arg_down != center_arg) {
      result.differentiable = false;
      return result;
    }
    result.p0[d] = (v_up - v_down) / (2.0 * grad_step);
  }
  return result;
}

MongeMap monge_map(const ControlProblem& prob, const DiscreteMeasure& mu0,
                   const MkResult& mk, const DiscreteMeasure& mu1, const CostFn& cost_fn,
                   const Matrix* cost_matrix, const MongeSettings& settings) {
  const std::size_t n0 = mu0.size();
  const KantorovichPair& pair = mk.pair;
  if (static_cast<std::size_t>(pair.phi0.size()) != n0 ||
      static_cast<std::size_t>(pair.phi1.size()) != mu1.size())
    throw UserError("monge_map: potentials do not match the measures");

  const double grad_step = settings.grad_step_rel * prob.domain().max_width();

  // Plan partners per mu0 atom; mass split across two or more partners means
  // no single characteristic carries the atom.
  std::vector<int> partner(n0, -1);
  std::vector<bool> split(n0, false);
  for (const auto& arc : mk.plan.support(1e-9)) {
    if (partner[arc.i] == -1)
      partner[arc.i] = arc.j;
    else
      split[arc.i] = true;
  }

  struct AtomOutcome {
    bool accepted = false;
    Vector p0;
    Vector image;
  };
  std::vector<AtomOutcome> outcomes(n0);

  parallel_for(n0, settings.threads, [&](std::size_t i) {
    if (split[i]) return;
    Vector center;
    const Vector* center_ptr = nullptr;
    if (cost_matrix) {
      center = cost_matrix->row(static_cast<Index>(i)).transpose();
      center_ptr = &center;
    }
    const SectionResult section =
        monge_section(cost_fn, pair.phi1, mu1.atoms, mu0.atoms[i], grad_step,
                      settings.envelope_candidates, center_ptr, partner[i]);
    if (!section.differentiable) return;
    try {
      const CharTrajectory traj = integrate_characteristic_from(
          prob, mu0.atoms[i], section.p0, 0.0, settings.t0, settings.t1, settings.flow_dt,
          /*enforce_domain=*/true, settings.hamiltonian);
      outcomes[i].accepted = true;
      outcomes[i].p0 = section.p0;
      outcomes[i].image = traj.back().X;
    } catch (const NumericError&) {
      // escape: the atom joins the skipped set
    }
  });

  MongeMap map;
  double accepted_mass = 0;
  std::vector<double> weights;
  for (std::size_t i = 0; i < n0; ++i) {
    if (!outcomes[i].accepted) {
      map.skipped.push_back(i);
      map.skipped_mass += mu0.weights[static_cast<Index>(i)];
      continue;
    }
    map.atoms.push_back(mu0.atoms[i]);
    map.p0.push_back(outcomes[i].p0);
    map.images.push_back(prob.boundary() == BoundaryMode::Periodic
                             ? prob.domain().wrap(outcomes[i].image)
                             : outcomes[i].image);
    weights.push_back(mu0.weights[static_cast<Index>(i)]);
    accepted_mass += weights.back();
  }
  map.weights = Eigen::Map<const Vector>(weights.data(), weights.size());

  if (map.skipped_mass > settings.max_skipped_mass)
    throw NumericError("monge_map: skipped mass " + std::to_string(map.skipped_mass) +
                       " exceeds the acceptable fraction");
  (void)accepted_mass;
  return map;
}

namespace {

DiscreteMeasure merge_atoms(std::vector<Vector> atoms, std::vector<double> weights) {
  std::vector<Vector> merged;
  std::vector<double> merged_w;
  for (std::size_t k = 0; k < atoms.size(); ++k) {
    bool placed = false;
    for (std::size_t m = 0; m < merged.size(); ++m) {
      if ((merged[m] - atoms[k]).lpNorm<Eigen::Infinity>() <= 1e-9) {
        merged_w[m] += weights[k];
        placed = true;
        break;
      }
    }
    if (!placed) {
      merged.push_back(std::move(atoms[k]));
      merged_w.push_back(weights[k]);
    }
  }
  double total = 0;
  for (double w : merged_w) total += w;
  Vector wv(merged_w.size());
  for (std::size_t m = 0; m < merged_w.size(); ++m) wv[m] = merged_w[m] / total;
  return DiscreteMeasure::create(std::move(merged), std::move(wv));
}

}  // namespace

DiscreteMeasure pushforward(const std::function<Vector(const Vector&)>& map,
                            const DiscreteMeasure& mu) {
  std::vector<Vector> atoms;
  std::vector<double> weights;
  atoms.reserve(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i) {
    atoms.push_back(map(mu.atoms[i]));
    weights.push_back(mu.weights[static_cast<Index>(i)]);
  }
  return merge_atoms(std::move(atoms), std::move(weights));
}

DiscreteMeasure pushforward(const MongeMap& map) {
  if (map.images.empty()) throw UserError("pushforward of an empty Monge map");
  std::vector<double> weights(map.weights.data(), map.weights.data() + map.weights.size());
  return merge_atoms(map.images, std::move(weights));
}

double initial_measure_action(const MongeMap& map, const CostFn& cost_fn) {
  double action = 0;
  for (std::size_t i = 0; i < map.atoms.size(); ++i)
    action += map.weights[static_cast<Index>(i)] * cost_fn(map.atoms[i], map.images[i]);
  return action;
}

double wasserstein1_1d(const DiscreteMeasure& mu, const DiscreteMeasure& nu) {
  if (mu.dim() != 1 || nu.dim() != 1)
    throw UserError("wasserstein1_1d requires 1-D measures");
  const auto sorted = [](const DiscreteMeasure& m) {
    std::vector<std::pair<double, double>> entries;  // (position, weight)
    for (std::size_t i = 0; i < m.size(); ++i)
      entries.emplace_back(m.atoms[i][0], m.weights[static_cast<Index>(i)]);
    std::sort(entries.begin(), entries.end());
    return entries;
  };
  const auto a = sorted(mu);
  const auto b = sorted(nu);

  // Integrate |F_mu^{-1}(q) - F_nu^{-1}(q)| dq over merged quantile segments.
  double w1 = 0;
  std::size_t ia = 0, ib = 0;
  double q = 0;
  double ca = a[0].second;  // cumulative mass through atom ia
  double cb = b[0].second;
  while (ia < a.size() && ib < b.size() && q < 1.0 - 1e-15) {
    const double next_q = std::min(ca, cb);
    w1 += (next_q - q) * std::abs(a[ia].first - b[ib].first);
    q = next_q;
    if (ca <= next_q + 1e-15) {
      ++ia;
      if (ia < a.size()) ca += a[ia].second;
    }
    if (cb <= next_q + 1e-15) {
      ++ib;
      if (ib < b.size()) cb += b[ib].second;
    }
  }
  return w1;
}

}  // namespace charflow
