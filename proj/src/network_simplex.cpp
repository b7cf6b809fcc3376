/* SPDX-License-Identifier: Apache-2.0
 *
 * Copyright 2026 The Charflow Authors
 */

#include "charflow/network_simplex.hpp"

#include <cmath>
#include <limits>
#include <queue>
#include <vector>

namespace charflow {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// --- Dinic max-flow ----------------------------------------------------------

class Dinic {
 public:
  explicit Dinic(int nodes) : head_(nodes, -1), level_(nodes), it_(nodes) {}

  void add_edge(int from, int to, double capacity) {
    edges_.push_back({to, head_[from], capacity});
    head_[from] = static_cast<int>(edges_.size()) - 1;
    edges_.push_back({from, head_[to], 0.0});
    head_[to] = static_cast<int>(edges_.size()) - 1;
  }

  double max_flow(int s, int t) {
    double total = 0;
    while (bfs(s, t)) {
      it_ = head_;
      double pushed;
      while ((pushed = dfs(s, t, kInf)) > 1e-15) total += pushed;
    }
    return total;
  }

 private:
  struct Edge {
    int to;
    int next;
    double cap;
  };

  bool bfs(int s, int t) {
    std::fill(level_.begin(), level_.end(), -1);
    std::queue<int> q;
    q.push(s);
    level_[s] = 0;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int e = head_[u]; e != -1; e = edges_[e].next) {
        if (edges_[e].cap > 1e-15 && level_[edges_[e].to] == -1) {
          level_[edges_[e].to] = level_[u] + 1;
          q.push(edges_[e].to);
        }
      }
    }
    return level_[t] != -1;
  }

  double dfs(int u, int t, double limit) {
    if (u == t || limit <= 1e-15) return limit;
    for (int& e = it_[u]; e != -1; e = edges_[e].next) {
      Edge& edge = edges_[e];
      if (edge.cap > 1e-15 && level_[edge.to] == level_[u] + 1) {
        const double pushed = dfs(edge.to, t, std::min(limit, edge.cap));
        if (pushed > 1e-15) {
          edge.cap -= pushed;
          edges_[e ^ 1].cap += pushed;
          return pushed;
        }
      }
    }
    return 0;
  }

  std::vector<Edge> edges_;
  std::vector<int> head_, level_, it_;
};

}  // namespace

bool transport_feasible(const Matrix& cost, const Vector& supply, const Vector& demand) {
  const int n0 = static_cast<int>(supply.size());
  const int n1 = static_cast<int>(demand.size());
  const int s = 0, t = n0 + n1 + 1;
  Dinic dinic(n0 + n1 + 2);
  for (int i = 0; i < n0; ++i) dinic.add_edge(s, 1 + i, supply[i]);
  for (int j = 0; j < n1; ++j) dinic.add_edge(1 + n0 + j, t, demand[j]);
  for (int i = 0; i < n0; ++i)
    for (int j = 0; j < n1; ++j)
      if (std::isfinite(cost(i, j))) dinic.add_edge(1 + i, 1 + n0 + j, kInf);
  return dinic.max_flow(s, t) >= supply.sum() - 1e-9;
}

namespace {

struct Arc {
  int tail;
  int head;
  double cost;
  bool artificial;
  int row = -1, col = -1;  // real arcs: matrix entry
};

}  // namespace

TransportLpResult transport_network_simplex(const Matrix& cost, const Vector& supply,
                                            const Vector& demand) {
  const int n0 = static_cast<int>(supply.size());
  const int n1 = static_cast<int>(demand.size());
  if (cost.rows() != n0 || cost.cols() != n1)
    throw UserError("cost matrix shape does not match supply/demand sizes");
  for (int i = 0; i < n0; ++i)
    if (!(supply[i] > 0)) throw UserError("supplies must be positive");
  for (int j = 0; j < n1; ++j)
    if (!(demand[j] > 0)) throw UserError("demands must be positive");
  if (std::abs(supply.sum() - demand.sum()) > 1e-9)
    throw UserError("unbalanced transport instance: total supply != total demand");

  const int root = n0 + n1;
  const int num_nodes = n0 + n1 + 1;

  std::vector<Arc> arcs;
  arcs.reserve(static_cast<std::size_t>(n0) * n1 + n0 + n1);
  double cost_scale = 0;
  for (int i = 0; i < n0; ++i) {
    for (int j = 0; j < n1; ++j) {
      if (!std::isfinite(cost(i, j))) continue;
      arcs.push_back({i, n0 + j, cost(i, j), false, i, j});
      cost_scale += std::abs(cost(i, j));
    }
  }
  const double big = 1.0 + cost_scale;
  const int first_artificial = static_cast<int>(arcs.size());
  for (int i = 0; i < n0; ++i) arcs.push_back({i, root, big, true, -1, -1});
  for (int j = 0; j < n1; ++j) arcs.push_back({root, n0 + j, big, true, -1, -1});

  std::vector<double> flow(arcs.size(), 0.0);
  std::vector<char> in_tree(arcs.size(), 0);
  for (int a = first_artificial; a < static_cast<int>(arcs.size()); ++a) in_tree[a] = 1;
  for (int i = 0; i < n0; ++i) flow[first_artificial + i] = supply[i];
  for (int j = 0; j < n1; ++j) flow[first_artificial + n0 + j] = demand[j];

  std::vector<int> basic;
  for (int a = first_artificial; a < static_cast<int>(arcs.size()); ++a) basic.push_back(a);

  std::vector<int> parent(num_nodes, -1), parent_arc(num_nodes, -1);
  std::vector<double> pi(num_nodes, 0.0);

  // Rebuild parent pointers and potentials from the basic-arc set (BFS from
  // the root; the basic set always forms a spanning tree).
  std::vector<std::vector<int>> adjacency(num_nodes);
  const auto rebuild_tree = [&]() {
    for (auto& lst : adjacency) lst.clear();
    for (int a : basic) {
      adjacency[arcs[a].tail].push_back(a);
      adjacency[arcs[a].head].push_back(a);
    }
    std::fill(parent.begin(), parent.end(), -1);
    std::fill(parent_arc.begin(), parent_arc.end(), -1);
    pi[root] = 0.0;
    std::queue<int> q;
    q.push(root);
    std::vector<char> seen(num_nodes, 0);
    seen[root] = 1;
    while (!q.empty()) {
      const int u = q.front();
      q.pop();
      for (int a : adjacency[u]) {
        const int w = arcs[a].tail == u ? arcs[a].head : arcs[a].tail;
        if (seen[w]) continue;
        seen[w] = 1;
        parent[w] = u;
        parent_arc[w] = a;
        // zero reduced cost on tree arcs: c + pi[tail] - pi[head] = 0
        pi[w] = arcs[a].tail == u ? arcs[a].cost + pi[u] : pi[u] - arcs[a].cost;
        q.push(w);
      }
    }
    for (int v = 0; v < num_nodes; ++v)
      if (!seen[v]) throw NumericError("network simplex basis lost connectivity");
  };
  rebuild_tree();

  const double enter_eps = 1e-11 * (1.0 + big);
  const std::size_t pivot_cap =
      1000 + 200 * static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(num_nodes);

  // Dantzig pricing by default; Bland's rule engages during degenerate runs
  // and supplies the anti-cycling guarantee.
  int degenerate_run = 0;
  const int bland_threshold = 32 + num_nodes / 4;

  TransportLpResult result;
  for (result.pivots = 0;; ++result.pivots) {
    if (result.pivots > pivot_cap)
      throw NumericError("network simplex exceeded the pivot cap");

    int entering = -1;
    if (degenerate_run > bland_threshold) {
      // Bland: first arc with negative reduced cost.
      for (int a = 0; a < static_cast<int>(arcs.size()); ++a) {
        if (in_tree[a]) continue;
        const double rc = arcs[a].cost + pi[arcs[a].tail] - pi[arcs[a].head];
        if (rc < -enter_eps) {
          entering = a;
          break;
        }
      }
    } else {
      // Dantzig: most negative reduced cost, smallest index among ties.
      double best_rc = -enter_eps;
      for (int a = 0; a < static_cast<int>(arcs.size()); ++a) {
        if (in_tree[a]) continue;
        const double rc = arcs[a].cost + pi[arcs[a].tail] - pi[arcs[a].head];
        if (rc < best_rc) {
          best_rc = rc;
          entering = a;
        }
      }
    }
    if (entering == -1) break;

    // Cycle: entering arc (u -> v) plus the tree path v .. u. Push direction
    // runs along the entering arc u -> v, then v up to the LCA, then down to u.
    const int u = arcs[entering].tail;
    const int v = arcs[entering].head;
    std::vector<char> on_up(num_nodes, 0);
    for (int w = u; w != -1; w = parent[w]) on_up[w] = 1;
    int lca = v;
    while (!on_up[lca]) lca = parent[lca];

    // v -> lca: traversal goes child -> parent, so the arc is forward in the
    // cycle when it points child -> parent. u -> lca: the cycle traverses
    // these parent -> child, so the arc is forward when it points that way.
    std::vector<std::pair<int, bool>> cycle;  // (arc, forward)
    for (int w = v; w != lca; w = parent[w])
      cycle.emplace_back(parent_arc[w], arcs[parent_arc[w]].tail == w);
    for (int w = u; w != lca; w = parent[w])
      cycle.emplace_back(parent_arc[w], arcs[parent_arc[w]].head == w);

    double theta = kInf;
    int leaving = -1;
    for (const auto& [a, forward] : cycle) {
      if (forward) continue;
      if (flow[a] < theta - 1e-15) {
        theta = flow[a];
        leaving = a;
      } else if (flow[a] <= theta + 1e-15 && leaving != -1 && a < leaving) {
        leaving = a;  // Bland: smallest-index leaving arc among ties
      }
    }
    if (leaving == -1)
      throw NumericError("network simplex found an unbounded direction");
    degenerate_run = theta <= 1e-15 ? degenerate_run + 1 : 0;

    flow[entering] += theta;
    for (const auto& [a, forward] : cycle) flow[a] += forward ? theta : -theta;
    flow[leaving] = 0.0;  // exact basis exit

    in_tree[entering] = 1;
    in_tree[leaving] = 0;
    for (int& b : basic)
      if (b == leaving) b = entering;
    rebuild_tree();
  }

  // Artificial arcs must end up (numerically) empty, else no feasible plan
  // avoided them.
  for (int a = first_artificial; a < static_cast<int>(arcs.size()); ++a) {
    if (flow[a] > 1e-9)
      throw UserError("transport instance is infeasible: forbidden arcs disconnect "
                      "supply from demand");
  }

  result.flow = Matrix::Zero(n0, n1);
  result.objective = 0.0;
  for (int a = 0; a < first_artificial; ++a) {
    if (flow[a] <= 0) continue;
    result.flow(arcs[a].row, arcs[a].col) = flow[a];
    result.objective += flow[a] * arcs[a].cost;
  }
  result.row_potential = Vector(n0);
  result.col_potential = Vector(n1);
  for (int i = 0; i < n0; ++i) result.row_potential[i] = pi[i];
  for (int j = 0; j < n1; ++j) result.col_potential[j] = pi[n0 + j];
  return result;
}

}  // namespace charflow
