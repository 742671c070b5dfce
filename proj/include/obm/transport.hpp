#pragma once

// Optimal class-selection plan for the Myopic policy.
//
// With joint masses R(c,d) = Q(c,d) nu(d) the program is a balanced
// transportation problem: rows carry b, columns carry nu, and the objective
// maximises sum R(c,d) a(c,d). It is solved exactly by successive shortest
// paths; the optimal face is then read off the dual (complementary
// slackness) and a canonical optimum is picked on it:
//   * if the independent coupling R = b nu^T is optimal it is returned
//     (every plan ties, e.g. a constant affinity matrix);
//   * otherwise the lexicographically smallest R (row-major) on the face,
//     which is a vertex, found greedily with max-flow feasibility checks.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "obm/model.hpp"

namespace obm {

struct QPlan {
  Matrix plan;        // Q(c,d): conditional selection weights, columns sum to 1
  Matrix mass;        // R(c,d) = Q(c,d) nu(d): joint class-pair mass
  double objective = 0.0;  // sum R(c,d) a(c,d) / N

  /// Probability of selecting class c when an arrival of class d shows up.
  double select_probability(std::size_t c, std::size_t d) const { return plan(c, d); }
};

namespace transport_detail {

inline constexpr double kEps = 1e-15;

struct Edge {
  std::size_t to;
  std::size_t rev;
  double cap;
  double cost;
};

class FlowGraph {
 public:
  explicit FlowGraph(std::size_t n) : adj_(n) {}

  std::size_t add_edge(std::size_t u, std::size_t v, double cap, double cost) {
    adj_[u].push_back({v, adj_[v].size(), cap, cost});
    adj_[v].push_back({u, adj_[u].size() - 1, 0.0, -cost});
    return adj_[u].size() - 1;
  }

  std::size_t size() const { return adj_.size(); }
  std::vector<Edge>& out(std::size_t u) { return adj_[u]; }
  const std::vector<Edge>& out(std::size_t u) const { return adj_[u]; }

  // Bellman-Ford over residual edges. With `all_sources` every node starts at
  // distance 0 (virtual super-source), which yields feasible potentials.
  bool shortest_paths(std::size_t s, bool all_sources, std::vector<double>& dist,
                      std::vector<std::size_t>& pnode, std::vector<std::size_t>& pedge) const {
    const double inf = std::numeric_limits<double>::infinity();
    const std::size_t n = adj_.size();
    dist.assign(n, all_sources ? 0.0 : inf);
    pnode.assign(n, n);
    pedge.assign(n, 0);
    if (!all_sources) dist[s] = 0.0;
    for (std::size_t round = 0; round < n; ++round) {
      bool changed = false;
      for (std::size_t u = 0; u < n; ++u) {
        if (dist[u] == inf) continue;
        for (std::size_t k = 0; k < adj_[u].size(); ++k) {
          const Edge& e = adj_[u][k];
          if (e.cap <= kEps) continue;
          const double nd = dist[u] + e.cost;
          if (nd < dist[e.to] - 1e-13) {
            dist[e.to] = nd;
            pnode[e.to] = u;
            pedge[e.to] = k;
            changed = true;
          }
        }
      }
      if (!changed) return true;
    }
    return false;
  }

 private:
  std::vector<std::vector<Edge>> adj_;
};

// Maximum flow (Edmonds-Karp) through a bipartite network given by
// row supplies, column demands and allowed cells.
inline double bipartite_max_flow(const std::vector<double>& rows, const std::vector<double>& cols,
                                 const std::vector<std::pair<std::size_t, std::size_t>>& cells) {
  const std::size_t R = rows.size(), K = cols.size();
  const std::size_t s = R + K, t = s + 1;
  FlowGraph g(t + 1);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < R; ++i)
    if (rows[i] > kEps) g.add_edge(s, i, rows[i], 0.0);
  for (std::size_t j = 0; j < K; ++j)
    if (cols[j] > kEps) g.add_edge(R + j, t, cols[j], 0.0);
  for (auto [i, j] : cells) g.add_edge(i, R + j, inf, 0.0);
  double flow = 0.0;
  for (;;) {
    std::vector<std::size_t> pnode(g.size(), g.size()), pedge(g.size(), 0);
    std::deque<std::size_t> queue{s};
    pnode[s] = s;
    while (!queue.empty() && pnode[t] == g.size()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      for (std::size_t k = 0; k < g.out(u).size(); ++k) {
        const Edge& e = g.out(u)[k];
        if (e.cap > kEps && pnode[e.to] == g.size()) {
          pnode[e.to] = u;
          pedge[e.to] = k;
          queue.push_back(e.to);
        }
      }
    }
    if (pnode[t] == g.size()) break;
    double push = inf;
    for (std::size_t v = t; v != s; v = pnode[v]) push = std::min(push, g.out(pnode[v])[pedge[v]].cap);
    for (std::size_t v = t; v != s; v = pnode[v]) {
      Edge& e = g.out(pnode[v])[pedge[v]];
      e.cap -= push;
      g.out(v)[e.rev].cap += push;
    }
    flow += push;
  }
  return flow;
}

}  // namespace transport_detail

/// Solves for the Myopic plan. Columns with nu(d) = 0 get Q(c,d) = b_c and
/// do not enter the objective. Throws std::runtime_error when the marginals
/// are unbalanced by more than 1e-9.
inline QPlan solve_qstar(const ModelParams& p) {
  using namespace transport_detail;
  const std::size_t C = p.C(), D = p.D();
  std::vector<std::size_t> active;
  for (std::size_t d = 0; d < D; ++d)
    if (p.arrival_law[d] > 0.0) active.push_back(d);
  const std::size_t K = active.size();

  const double row_total = std::accumulate(p.budgets.begin(), p.budgets.end(), 0.0);
  double col_total = 0.0;
  for (std::size_t d : active) col_total += p.arrival_law[d];
  if (std::abs(row_total - col_total) > 1e-9) {
    throw std::runtime_error("solve_qstar: unbalanced marginals");
  }

  // Min-cost flow with cost -a on row->column arcs.
  const std::size_t s = C + K, t = s + 1;
  FlowGraph g(t + 1);
  const double inf = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < C; ++c) g.add_edge(s, c, p.budgets[c], 0.0);
  for (std::size_t j = 0; j < K; ++j) g.add_edge(C + j, t, p.arrival_law[active[j]], 0.0);
  std::vector<std::vector<std::size_t>> arc(C, std::vector<std::size_t>(K));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < K; ++j) arc[c][j] = g.add_edge(c, C + j, inf, -p.a(c, active[j]));

  const double target = std::min(row_total, col_total);
  double flow = 0.0;
  std::vector<double> dist;
  std::vector<std::size_t> pnode, pedge;
  for (std::size_t iter = 0; flow < target - 1e-13 && iter < 10 * (C + K + 4) * (C + K + 4);
       ++iter) {
    if (!g.shortest_paths(s, false, dist, pnode, pedge) || pnode[t] == g.size()) break;
    double push = inf;
    for (std::size_t v = t; v != s; v = pnode[v]) push = std::min(push, g.out(pnode[v])[pedge[v]].cap);
    push = std::min(push, target - flow);
    for (std::size_t v = t; v != s; v = pnode[v]) {
      Edge& e = g.out(pnode[v])[pedge[v]];
      e.cap -= push;
      g.out(v)[e.rev].cap += push;
    }
    flow += push;
  }

  // Dual potentials -> zero reduced-cost cells = support of the optimal face.
  g.shortest_paths(s, true, dist, pnode, pedge);
  double amax = 0.0;
  for (double v : p.affinity.data()) amax = std::max(amax, v);
  const double tol = 1e-9 * (1.0 + amax);
  std::vector<std::vector<bool>> face(C, std::vector<bool>(K, false));
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t j = 0; j < K; ++j) {
      const double rc = -p.a(c, active[j]) + dist[c] - dist[C + j];
      face[c][j] = rc <= tol;
    }

  Matrix mass(C, D, 0.0);
  bool independent_optimal = true;
  for (std::size_t c = 0; c < C && independent_optimal; ++c)
    for (std::size_t j = 0; j < K; ++j)
      if (p.budgets[c] > 0.0 && !face[c][j]) {
        independent_optimal = false;
        break;
      }

  if (independent_optimal) {
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t j = 0; j < K; ++j) mass(c, active[j]) = p.budgets[c] * p.arrival_law[active[j]];
  } else {
    std::vector<double> row_rem(p.budgets), col_rem(K);
    for (std::size_t j = 0; j < K; ++j) col_rem[j] = p.arrival_law[active[j]];
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t j = 0; j < K; ++j) {
        if (!face[c][j]) continue;
        std::vector<std::pair<std::size_t, std::size_t>> later;
        for (std::size_t c2 = c; c2 < C; ++c2)
          for (std::size_t j2 = (c2 == c ? j + 1 : 0); j2 < K; ++j2)
            if (face[c2][j2]) later.emplace_back(c2, j2);
        const double remaining = std::accumulate(row_rem.begin(), row_rem.end(), 0.0);
        const double routed = bipartite_max_flow(row_rem, col_rem, later);
        double x = std::max(0.0, remaining - routed);
        x = std::min({x, row_rem[c], col_rem[j]});
        if (x < 1e-14) x = 0.0;
        mass(c, active[j]) = x;
        row_rem[c] -= x;
        col_rem[j] -= x;
      }
    }
  }

  QPlan q;
  q.mass = mass;
  q.plan = Matrix(C, D, 0.0);
  for (std::size_t d = 0; d < D; ++d) {
    const double nu = p.arrival_law[d];
    for (std::size_t c = 0; c < C; ++c) q.plan(c, d) = nu > 0.0 ? mass(c, d) / nu : p.budgets[c];
  }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) q.objective += mass(c, d) * p.edge_probability(c, d);
  return q;
}

/// Largest violation of the QPlan marginal and sign invariants.
inline double qplan_marginal_error(const ModelParams& p, const QPlan& q) {
  double err = 0.0;
  for (std::size_t c = 0; c < p.C(); ++c) {
    double row = 0.0;
    for (std::size_t d = 0; d < p.D(); ++d) {
      row += q.plan(c, d) * p.arrival_law[d];
      err = std::max(err, -q.plan(c, d));
    }
    err = std::max(err, std::abs(row - p.budgets[c]));
  }
  for (std::size_t d = 0; d < p.D(); ++d) {
    double col = 0.0;
    for (std::size_t c = 0; c < p.C(); ++c) col += q.plan(c, d);
    err = std::max(err, std::abs(col - 1.0));
  }
  return err;
}

}  // namespace obm
