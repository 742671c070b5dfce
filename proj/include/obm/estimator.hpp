#pragma once

// Failure-probability estimator for unknown affinities.
//
// D(c,d,m) = (1 - a(c,d)/N)^(cap_c - m) is the probability that an arrival
// of class d finds no neighbour among the cap_c - m free nodes of class c.
// Observations taken at nearby matching sizes m' are pooled: with
// e(m') = (cap - m') / (cap - m), the pooled failure frequency Theta(m) has
// mean g(D(m)) where g(x) = sum_m' T(m') x^e(m') / T_total, so
// Dhat(m) = g^{-1}(Theta(m)). The pool is V_m = {m' : e(m') in [1/2, 2]}.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <stdexcept>
#include <vector>

#include "obm/model.hpp"
#include "obm/numerics.hpp"

namespace obm {

struct Interval {
  std::int64_t lo = 0;
  std::int64_t hi = -1;  // inclusive; empty when hi < lo

  bool empty() const { return hi < lo; }
  std::int64_t size() const { return empty() ? 0 : hi - lo + 1; }
  bool contains(std::int64_t m) const { return m >= lo && m <= hi; }
  friend bool operator==(const Interval&, const Interval&) = default;
};

/// Bandit feedback: per (c, d, m) the number of observations and the number
/// of failures (no match).
class CountsTable {
 public:
  struct Cell {
    std::int64_t observations = 0;
    std::int64_t failures = 0;
  };

  CountsTable() = default;
  CountsTable(std::size_t num_offline, std::size_t num_online,
              std::vector<std::int64_t> capacities)
      : C_(num_offline), D_(num_online), caps_(std::move(capacities)) {
    if (caps_.size() != C_) throw std::invalid_argument("CountsTable: capacity length mismatch");
    cells_.resize(C_ * D_);
    versions_.assign(C_ * D_, 0);
    for (std::size_t c = 0; c < C_; ++c)
      for (std::size_t d = 0; d < D_; ++d)
        cells_[c * D_ + d].assign(static_cast<std::size_t>(std::max<std::int64_t>(caps_[c], 0)), {});
  }

  std::size_t num_offline() const { return C_; }
  std::size_t num_online() const { return D_; }
  std::int64_t capacity(std::size_t c) const { return caps_[c]; }
  const std::vector<std::int64_t>& capacities() const { return caps_; }

  /// Records one observation taken when class c had m matched nodes.
  void record(std::size_t c, std::size_t d, std::int64_t m, bool matched) {
    if (m < 0 || m >= caps_[c]) return;  // a full class yields no information
    Cell& cell = cells_[c * D_ + d][static_cast<std::size_t>(m)];
    ++cell.observations;
    if (!matched) ++cell.failures;
    ++versions_[c * D_ + d];
    ++total_;
  }

  /// Adds pre-aggregated counts (used by synthetic feeds and log replay).
  void add(std::size_t c, std::size_t d, std::int64_t m, std::int64_t observations,
           std::int64_t failures) {
    if (failures < 0 || failures > observations)
      throw std::invalid_argument("CountsTable::add: need 0 <= failures <= observations");
    Cell& cell = cells_.at(c * D_ + d).at(static_cast<std::size_t>(m));
    cell.observations += observations;
    cell.failures += failures;
    ++versions_[c * D_ + d];
    total_ += observations;
  }

  const Cell& cell(std::size_t c, std::size_t d, std::int64_t m) const {
    return cells_[c * D_ + d][static_cast<std::size_t>(m)];
  }

  std::int64_t total_observations() const { return total_; }
  std::uint64_t version(std::size_t c, std::size_t d) const { return versions_[c * D_ + d]; }

 private:
  std::size_t C_ = 0, D_ = 0;
  std::vector<std::int64_t> caps_;
  std::vector<std::vector<Cell>> cells_;
  std::vector<std::uint64_t> versions_;
  std::int64_t total_ = 0;
};

/// Pooling window V_m = {m' in [0, cap) : (cap-m')/(cap-m) in [1/2, 2]}.
inline Interval neighborhood(std::int64_t m, std::int64_t cap) {
  if (m < 0 || m >= cap) throw std::domain_error("neighborhood: need 0 <= m < cap");
  const std::int64_t free = cap - m;
  return {std::max<std::int64_t>(0, 2 * m - cap), cap - (free + 1) / 2};
}

struct ThetaResult {
  double theta = 0.0;
  std::int64_t t_total = 0;
  Interval window;
};

/// Pooled failure frequency over V_m; nullopt means "no data".
inline std::optional<ThetaResult> theta(const CountsTable& counts, std::size_t c, std::size_t d,
                                        std::int64_t m) {
  const Interval w = neighborhood(m, counts.capacity(c));
  std::int64_t obs = 0, fail = 0;
  for (std::int64_t k = w.lo; k <= w.hi; ++k) {
    const auto& cell = counts.cell(c, d, k);
    obs += cell.observations;
    fail += cell.failures;
  }
  if (obs == 0) return std::nullopt;
  return ThetaResult{static_cast<double>(fail) / static_cast<double>(obs), obs, w};
}

/// One pooled cell: observation count and exponent (cap - m') / (cap - m).
struct PowerWeight {
  double count = 0.0;
  double exponent = 1.0;
};

inline std::vector<PowerWeight> pooling_weights(const CountsTable& counts, std::size_t c,
                                                std::size_t d, std::int64_t m) {
  const std::int64_t cap = counts.capacity(c);
  const Interval w = neighborhood(m, cap);
  std::vector<PowerWeight> out;
  const double denom = static_cast<double>(cap - m);
  for (std::int64_t k = w.lo; k <= w.hi; ++k) {
    const auto& cell = counts.cell(c, d, k);
    if (cell.observations > 0)
      out.push_back({static_cast<double>(cell.observations), static_cast<double>(cap - k) / denom});
  }
  return out;
}

/// Weighted power mean g(x) = sum T x^e / sum T on x in [lower, 1].
inline double g_eval(double x, const std::vector<PowerWeight>& weights, double lower = 0.0) {
  if (weights.empty()) throw std::invalid_argument("g_eval: empty weight set");
  if (!(x >= lower && x <= 1.0)) throw std::domain_error("g_eval: x outside [lower, 1]");
  double total = 0.0, acc = 0.0;
  const double lx = std::log(x);
  for (const auto& w : weights) {
    total += w.count;
    acc += w.count * (x == 0.0 ? (w.exponent == 0.0 ? 1.0 : 0.0) : std::exp(w.exponent * lx));
  }
  return acc / total;
}

struct GInverse {
  double x = 0.0;
  bool clamped = false;
};

/// Inverts g on [lower, 1] to absolute tolerance 1e-12. Targets outside
/// [g(lower), 1] are clamped to the nearest endpoint and flagged.
inline GInverse g_invert(double y, const std::vector<PowerWeight>& weights, double lower) {
  if (weights.empty()) throw std::invalid_argument("g_invert: empty weight set");
  const double glo = g_eval(lower, weights, lower);
  if (y <= glo) return {lower, y < glo};
  if (y >= 1.0) return {1.0, y > 1.0};
  double total = 0.0;
  for (const auto& w : weights) total += w.count;
  auto fdf = [&](double x) {
    const double lx = std::log(x);
    double v = 0.0, dv = 0.0;
    for (const auto& w : weights) {
      const double px = std::exp(w.exponent * lx);
      v += w.count * px;
      dv += w.count * w.exponent * px / x;
    }
    return std::pair{v / total - y, dv / total};
  };
  // Newton steps stay inside the shrinking bracket; the bracket width
  // bounds the error.
  auto r = numerics::newton_bisect(fdf, lower, 1.0, 1e-15, 1e-13);
  return {r.x, false};
}

/// The pooled cells of one window in integer form. With F = cap - m and
/// k = cap - m', x^{k/F} = y^k for y = x^{1/F}, so g and g' need one
/// multiplication per cell instead of one pow.
struct PooledSeries {
  double denom = 1.0;                // cap - m
  std::vector<std::int64_t> offset;  // cap - m', strictly decreasing
  std::vector<double> count;
  double total = 0.0;
  std::int64_t failures = 0;

  bool empty() const { return offset.empty(); }

  /// {g(x), g'(x)} for x in (0, 1].
  std::pair<double, double> eval(double x) const {
    const double ly = std::log(x) / denom;
    const double y = std::exp(ly);
    double v = 0.0, dv = 0.0;
    double pw = std::exp(static_cast<double>(offset.back()) * ly);
    for (std::size_t i = offset.size(); i-- > 0;) {
      if (i + 1 < offset.size()) {
        const std::int64_t gap = offset[i] - offset[i + 1];
        pw *= gap == 1 ? y : std::exp(static_cast<double>(gap) * ly);
      }
      v += count[i] * pw;
      dv += count[i] * static_cast<double>(offset[i]) * pw;
    }
    return {v / total, dv / (total * denom * x)};
  }
};

inline PooledSeries pooled_series(const CountsTable& counts, std::size_t c, std::size_t d,
                                  std::int64_t m) {
  const std::int64_t cap = counts.capacity(c);
  const Interval w = neighborhood(m, cap);
  PooledSeries s;
  s.denom = static_cast<double>(cap - m);
  for (std::int64_t k = w.lo; k <= w.hi; ++k) {
    const auto& cell = counts.cell(c, d, k);
    if (cell.observations == 0) continue;
    s.offset.push_back(cap - k);
    s.count.push_back(static_cast<double>(cell.observations));
    s.total += static_cast<double>(cell.observations);
    s.failures += cell.failures;
  }
  return s;
}

/// Same contract as g_invert, on a pooled series, starting Newton at `guess`.
inline GInverse g_invert_series(double y, const PooledSeries& s, double lower, double guess) {
  if (s.empty()) throw std::invalid_argument("g_invert_series: empty series");
  const double glo = s.eval(lower).first;
  if (y <= glo) return {lower, y < glo};
  if (y >= 1.0) return {1.0, y > 1.0};
  auto fdf = [&](double x) {
    const auto [v, dv] = s.eval(x);
    return std::pair{v - y, dv};
  };
  auto r = numerics::newton_bisect_from(fdf, lower, 1.0, guess, 1e-15, 1e-13);
  return {r.x, false};
}

struct EstimateReport {
  double dhat = 1.0;
  double theta = 1.0;
  std::int64_t t_total = 0;
  double radius = 0.0;
  Interval window;
  bool clamped = false;
};

/// Lower end of the estimator's domain, (1 - a_max/N)^cap.
inline double dhat_lower_bound(const ModelParams& p, std::int64_t cap) {
  return std::exp(static_cast<double>(cap) * std::log1p(-p.affinity_cap / p.N()));
}

/// Hoeffding radius pushed through the 2 e^{a_max} Lipschitz bound of g^{-1}.
inline double confidence_radius(double affinity_cap, double delta, std::int64_t t_total) {
  return 2.0 * std::exp(affinity_cap) *
         std::sqrt(std::log(2.0 / delta) / (2.0 * static_cast<double>(t_total)));
}

/// Dhat(c,d,m) with its confidence radius at level delta; nullopt when the
/// window holds no observations. `guess` only seeds the root search.
inline std::optional<EstimateReport> dhat(const CountsTable& counts, const ModelParams& p,
                                          std::size_t c, std::size_t d, std::int64_t m,
                                          double delta, double guess = -1.0) {
  const auto s = pooled_series(counts, c, d, m);
  if (s.empty()) return std::nullopt;
  const double lower = dhat_lower_bound(p, counts.capacity(c));
  EstimateReport r;
  r.theta = static_cast<double>(s.failures) / s.total;
  r.t_total = static_cast<std::int64_t>(s.total);
  const auto inv = g_invert_series(r.theta, s, lower, guess);
  r.dhat = inv.x;
  r.radius = confidence_radius(p.affinity_cap, delta, r.t_total);
  r.window = neighborhood(m, counts.capacity(c));
  r.clamped = inv.clamped;
  return r;
}

/// Exact failure probability (1 - a(c,d)/N)^(cap - m).
inline double d_exact(const ModelParams& p, std::size_t c, std::size_t d, std::int64_t m,
                      std::int64_t cap) {
  if (m < 0 || m > cap) throw std::domain_error("d_exact: need 0 <= m <= cap");
  const std::int64_t free = cap - m;
  if (free == 0) return 1.0;
  return std::exp(static_cast<double>(free) * std::log1p(-p.edge_probability(c, d)));
}

}  // namespace obm
