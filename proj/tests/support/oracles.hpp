#pragma once

// Independent reference implementations used only by tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "obm/model.hpp"
#include "obm/rng.hpp"

namespace oracle {

/// max c^T x s.t. A x = b, x >= 0 (b >= 0, A full row rank), by a dense
/// two-phase tableau simplex with Bland's rule.
inline double dense_lp_max(const std::vector<double>& c, const std::vector<std::vector<double>>& A,
                           const std::vector<double>& b, std::vector<double>* x_out = nullptr) {
  const std::size_t m = A.size(), n = c.size();
  const std::size_t cols = n + m;  // structural + artificial
  std::vector<std::vector<double>> T(m + 1, std::vector<double>(cols + 1, 0.0));
  std::vector<std::size_t> basis(m);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) T[i][j] = A[i][j];
    T[i][n + i] = 1.0;
    T[i][cols] = b[i];
    basis[i] = n + i;
  }
  const double eps = 1e-12;
  auto pivot = [&](std::size_t r, std::size_t k) {
    const double pv = T[r][k];
    for (auto& v : T[r]) v /= pv;
    for (std::size_t i = 0; i <= m; ++i) {
      if (i == r || T[i][k] == 0.0) continue;
      const double f = T[i][k];
      for (std::size_t j = 0; j <= cols; ++j) T[i][j] -= f * T[r][j];
    }
    basis[r] = k;
  };
  // The objective row stores reduced costs of a minimisation.
  auto run = [&](std::size_t allowed) {
    for (int it = 0; it < 10000; ++it) {
      std::size_t k = cols;
      for (std::size_t j = 0; j < allowed; ++j)
        if (T[m][j] < -eps) {
          k = j;
          break;
        }
      if (k == cols) return;
      std::size_t r = m;
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < m; ++i) {
        if (T[i][k] > eps) {
          const double ratio = T[i][cols] / T[i][k];
          if (ratio < best - eps || (std::abs(ratio - best) <= eps && r < m && basis[i] < basis[r])) {
            best = ratio;
            r = i;
          }
        }
      }
      if (r == m) throw std::runtime_error("dense_lp_max: unbounded");
      pivot(r, k);
    }
    throw std::runtime_error("dense_lp_max: iteration limit");
  };
  // Phase 1: minimise the sum of artificials.
  for (std::size_t j = 0; j <= cols; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += T[i][j];
    T[m][j] = (j >= n && j < cols) ? 0.0 : -s;
  }
  run(cols);
  if (T[m][cols] < -1e-9) throw std::runtime_error("dense_lp_max: infeasible");
  for (std::size_t i = 0; i < m; ++i) {
    if (basis[i] < n) continue;
    for (std::size_t j = 0; j < n; ++j)
      if (std::abs(T[i][j]) > 1e-10) {
        pivot(i, j);
        break;
      }
  }
  // Phase 2 on structural columns: minimise -c.
  for (std::size_t j = 0; j <= cols; ++j) T[m][j] = (j < n) ? -c[j] : 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t k = basis[i];
    if (k >= n || T[m][k] == 0.0) continue;
    const double f = T[m][k];
    for (std::size_t j = 0; j <= cols; ++j) T[m][j] -= f * T[i][j];
  }
  run(n);
  std::vector<double> x(n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    if (basis[i] < n) x[basis[i]] = T[i][cols];
  if (x_out) *x_out = x;
  double v = 0.0;
  for (std::size_t j = 0; j < n; ++j) v += c[j] * x[j];
  return v;
}

/// Optimal value of max sum a(c,d) R(c,d) / N over joint plans with row
/// sums b and column sums nu (last column constraint dropped as redundant).
inline double transport_lp_value(const obm::ModelParams& p) {
  const std::size_t C = p.C(), D = p.D();
  std::vector<double> cost(C * D);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) cost[c * D + d] = p.a(c, d) / p.N();
  std::vector<std::vector<double>> A;
  std::vector<double> b;
  for (std::size_t c = 0; c < C; ++c) {
    std::vector<double> row(C * D, 0.0);
    for (std::size_t d = 0; d < D; ++d) row[c * D + d] = 1.0;
    A.push_back(row);
    b.push_back(p.budgets[c]);
  }
  for (std::size_t d = 0; d + 1 < D; ++d) {
    std::vector<double> row(C * D, 0.0);
    for (std::size_t c = 0; c < C; ++c) row[c * D + d] = 1.0;
    A.push_back(row);
    b.push_back(p.arrival_law[d]);
  }
  return dense_lp_max(cost, A, b);
}

inline std::vector<double> dirichlet(obm::Engine& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = -std::log1p(-obm::uniform01(rng)) + 1e-3;
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

/// Random valid instance with affinities in [lo, hi].
inline obm::ModelParams random_instance(std::uint64_t seed, std::size_t C, std::size_t D,
                                        std::int64_t N = 1000, double alpha = 2.0, double lo = 0.2,
                                        double hi = 4.0) {
  obm::Engine rng = obm::make_stream(seed, obm::Stream::instance);
  obm::ModelParams p;
  p.num_offline_classes = C;
  p.num_online_classes = D;
  p.offline_scale = N;
  p.horizon_factor = alpha;
  p.affinity = obm::Matrix(C, D);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < D; ++d) p.affinity(c, d) = lo + (hi - lo) * obm::uniform01(rng);
  p.affinity_cap = hi;
  p.budgets = dirichlet(rng, C);
  p.arrival_law = dirichlet(rng, D);
  obm::normalize_simplices(p);
  obm::validate(p);
  return p;
}

inline double f_plain(const obm::ModelParams& p, std::size_t c, double m) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d)
    s += (1.0 - std::exp(-p.a(c, d) * (p.budgets[c] - m))) * p.arrival_law[d];
  return s;
}

/// Projected Euler for the Balance inclusion: each step moves the exact
/// argmax class (ties split equally) by dt f_c, clipped at b_c. Returns
/// m at every multiple of `record_every` steps, starting with t = 0.
inline std::vector<std::vector<double>> projected_euler(const obm::ModelParams& p, double t_end,
                                                        double dt, std::size_t record_every) {
  const std::size_t C = p.C();
  std::vector<double> m(C, 0.0), f(C);
  std::vector<std::vector<double>> out{m};
  const auto steps = static_cast<std::size_t>(std::llround(t_end / dt));
  for (std::size_t s = 1; s <= steps; ++s) {
    double best = -1.0;
    for (std::size_t c = 0; c < C; ++c) {
      f[c] = f_plain(p, c, m[c]);
      best = std::max(best, f[c]);
    }
    std::size_t ties = 0;
    for (std::size_t c = 0; c < C; ++c) ties += (f[c] == best);
    for (std::size_t c = 0; c < C; ++c)
      if (f[c] == best) m[c] = std::min(p.budgets[c], m[c] + dt * f[c] / static_cast<double>(ties));
    if (s % record_every == 0) out.push_back(m);
  }
  return out;
}

}  // namespace oracle
