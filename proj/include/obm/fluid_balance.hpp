#pragma once

// Explicit fluid limit of the Balance policy.
//
// f_{c,beta}(z) = sum_d (1 - exp(-a(c,d)(beta - z))) nu(d) is the limiting
// match probability of class c after z further matches out of a free budget
// beta. Classes are sorted by f_{c,b_c}(0), descending. During phase k the
// first k classes share one match probability that decays at a common rate
// while the others are idle; the common amount matched per class follows
//   mu' = F(mu),  F = (sum_{i<k} f_i^{-1})^{-1},  mu(0) = 0,
// until the probability reaches the level of the next class, which then
// joins. The schedule stores phase start times and the per-class free
// budgets at each phase start.
//
// All indices here are 0-based: phase k has k+1 active classes
// (sorted positions 0..k) and starts at t[k]; t[C] is the horizon.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "obm/model.hpp"
#include "obm/numerics.hpp"

namespace obm {

/// Raised when F vanishes inside an integration range (the phase never ends).
class HorizonExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr double kFluidMaxStep = 1e-3;
/// f_inverse searches z in [beta - kInverseGuard, beta].
inline constexpr double kInverseGuard = 1e4;

inline double f_eval(const ModelParams& p, std::size_t c, double beta, double z) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    const double nu = p.arrival_law[d];
    if (nu <= 0.0) continue;
    s += -std::expm1(-p.a(c, d) * (beta - z)) * nu;
  }
  return s;
}

/// df/dz (negative wherever some a(c,d) nu(d) > 0).
inline double f_slope(const ModelParams& p, std::size_t c, double beta, double z) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    const double nu = p.arrival_law[d];
    if (nu <= 0.0) continue;
    s -= p.a(c, d) * nu * std::exp(-p.a(c, d) * (beta - z));
  }
  return s;
}

/// lim_{z -> -inf} f = total arrival mass with positive affinity.
inline double f_supremum(const ModelParams& p, std::size_t c) {
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d)
    if (p.a(c, d) > 0.0) s += p.arrival_law[d];
  return s;
}

/// Unique z with f_{c,beta}(z) = prob.
inline double f_inverse(const ModelParams& p, std::size_t c, double beta, double prob) {
  if (prob == 0.0) return beta;
  if (!(prob > 0.0)) throw std::domain_error("f_inverse: probability must be >= 0");
  double lo = beta - 1.0;
  while (f_eval(p, c, beta, lo) < prob) {
    lo = beta - 2.0 * (beta - lo);
    if (beta - lo > kInverseGuard)
      throw std::domain_error("f_inverse: probability " + std::to_string(prob) +
                              " outside the range of f for class " + std::to_string(c));
  }
  auto fdf = [&](double z) {
    return std::pair{f_eval(p, c, beta, z) - prob, f_slope(p, c, beta, z)};
  };
  return numerics::newton_bisect(fdf, lo, beta, 1e-15, 1e-16).x;
}

/// Active classes of a phase: the first k entries of `order`, with budgets
/// given in the same (sorted) positions.
struct ActiveSet {
  std::span<const std::size_t> classes;
  std::span<const double> beta;
};

/// sum_i f_i^{-1}(q) over the active classes.
inline double active_inverse_sum(const ModelParams& p, const ActiveSet& s, double q) {
  double z = 0.0;
  for (std::size_t i = 0; i < s.classes.size(); ++i) z += f_inverse(p, s.classes[i], s.beta[i], q);
  return z;
}

/// F(z): the common probability q at which the active classes have matched
/// a total of z beyond their phase-start budgets.
inline double bigF_eval(const ModelParams& p, const ActiveSet& s, double z) {
  if (s.classes.empty()) throw std::invalid_argument("bigF_eval: empty active set");
  double total = 0.0;
  double qmax = std::numeric_limits<double>::infinity();
  double qstart = 0.0;
  for (std::size_t i = 0; i < s.classes.size(); ++i) {
    total += s.beta[i];
    qmax = std::min(qmax, f_supremum(p, s.classes[i]));
    qstart = std::max(qstart, f_eval(p, s.classes[i], s.beta[i], 0.0));
  }
  if (z > total + 1e-12) throw std::domain_error("bigF_eval: z beyond the total free budget");
  if (z >= total) return 0.0;
  double hi = std::min(qstart, qmax * (1.0 - 1e-12));
  auto h = [&](double q) { return active_inverse_sum(p, s, q); };
  for (int it = 0; h(hi) > z; ++it) {
    if (it > 60) throw std::domain_error("bigF_eval: z below the range of F");
    hi = 0.5 * (hi + qmax);
  }
  auto fdf = [&](double q) {
    double v = 0.0, dv = 0.0;
    for (std::size_t i = 0; i < s.classes.size(); ++i) {
      const double zi = f_inverse(p, s.classes[i], s.beta[i], q);
      v += zi;
      dv += 1.0 / f_slope(p, s.classes[i], s.beta[i], zi);
    }
    return std::pair{v - z, dv};
  };
  return numerics::newton_bisect(fdf, 0.0, hi, 1e-14, 1e-15).x;
}

/// Time for mu to reach z: integral_0^z du / F(u), adaptive Simpson (1e-10).
inline double mu_inverse_time(const ModelParams& p, const ActiveSet& s, double z,
                              double tol = 1e-10) {
  if (z < 0.0) throw std::domain_error("mu_inverse_time: need z >= 0");
  if (z == 0.0) return 0.0;
  auto integrand = [&](double u) {
    const double F = bigF_eval(p, s, u);
    if (!(F > 0.0)) throw HorizonExceeded("mu_inverse_time: F vanishes before z (horizon exceeded)");
    return 1.0 / F;
  };
  return numerics::adaptive_simpson(integrand, 0.0, z, tol).value;
}

/// mu(t) by RK4 with steps no larger than 1e-3.
inline double mu_eval(const ModelParams& p, const ActiveSet& s, double t,
                      double max_step = kFluidMaxStep) {
  if (t < 0.0) throw std::domain_error("mu_eval: need t >= 0");
  return numerics::rk4_integrate_scalar([&](double mu) { return bigF_eval(p, s, mu); }, 0.0, t,
                                        max_step);
}

struct PhaseSchedule {
  std::vector<std::size_t> order;          // sorted position -> class
  std::vector<std::vector<double>> beta;   // [phase][sorted position] free budget at phase start
  std::vector<double> t;                   // C+1 entries: phase starts (clamped at alpha), then alpha
  std::vector<double> levels;              // [phase] f_{order[k], b}(0)
  std::size_t reached = 0;                 // phases that start at or before alpha
  double horizon = 0.0;                    // alpha

  std::size_t size() const { return order.size(); }

  ActiveSet active(std::size_t k) const {
    return {std::span<const std::size_t>(order.data(), k + 1),
            std::span<const double>(beta[k].data(), k + 1)};
  }

  /// Phase in force at time t: the last reached phase with t >= start.
  std::size_t phase_at(double time) const {
    std::size_t k = 0;
    for (std::size_t j = 1; j < reached; ++j)
      if (time >= t[j]) k = j;
    return k;
  }

  /// End of phase k in fluid time.
  double phase_end(std::size_t k) const { return (k + 1 < reached) ? t[k + 1] : horizon; }
};

inline PhaseSchedule build_schedule(const ModelParams& p) {
  const std::size_t C = p.C();
  PhaseSchedule s;
  s.horizon = p.horizon_factor;
  s.order.resize(C);
  std::iota(s.order.begin(), s.order.end(), 0);
  std::vector<double> initial(C);
  for (std::size_t c = 0; c < C; ++c) initial[c] = f_eval(p, c, p.budgets[c], 0.0);
  std::stable_sort(s.order.begin(), s.order.end(),
                   [&](std::size_t i, std::size_t j) { return initial[i] > initial[j]; });
  s.levels.resize(C);
  for (std::size_t k = 0; k < C; ++k) s.levels[k] = initial[s.order[k]];

  s.beta.assign(C, std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < C; ++i) s.beta[0][i] = p.budgets[s.order[i]];
  s.t.assign(C + 1, s.horizon);
  s.t[0] = 0.0;
  s.reached = 1;
  bool open = true;  // every phase so far started within the horizon
  for (std::size_t k = 1; k < C; ++k) {
    double consumed = 0.0;
    for (std::size_t i = 0; i < C; ++i) {
      if (i >= k) {
        s.beta[k][i] = p.budgets[s.order[i]];
        continue;
      }
      double used = 0.0;
      if (s.levels[k] > 0.0) {
        try {
          used = f_inverse(p, s.order[i], s.beta[k - 1][i], s.levels[k]);
        } catch (const std::exception& e) {
          throw std::runtime_error("build_schedule: phase " + std::to_string(k) + ": " + e.what());
        }
      } else {
        used = s.beta[k - 1][i];  // a class with zero match probability is never reached
      }
      used = std::clamp(used, 0.0, s.beta[k - 1][i]);
      s.beta[k][i] = s.beta[k - 1][i] - used;
      consumed += used;
    }
    if (!open || !(s.levels[k] > 0.0)) {
      open = false;
      continue;
    }
    double dt = 0.0;
    try {
      dt = mu_inverse_time(p, s.active(k - 1), consumed);
    } catch (const HorizonExceeded&) {
      open = false;
      continue;
    } catch (const std::exception& e) {
      throw std::runtime_error("build_schedule: phase " + std::to_string(k) + ": " + e.what());
    }
    const double start = s.t[k - 1] + dt;
    if (start > s.horizon) {
      open = false;
      continue;
    }
    s.t[k] = start;
    s.reached = k + 1;
  }
  return s;
}

/// Matched mass per class (original indices) at time t from a schedule,
/// for active set values (phase k, common probability q).
inline std::vector<double> m_star_from_level(const ModelParams& p, const PhaseSchedule& s,
                                             std::size_t k, double q) {
  const std::size_t C = p.C();
  std::vector<double> m(C, 0.0);
  for (std::size_t i = 0; i < C; ++i) {
    const std::size_t c = s.order[i];
    const double beta = s.beta[k][i];
    double extra = 0.0;
    if (q < f_eval(p, c, beta, 0.0)) extra = std::max(0.0, f_inverse(p, c, beta, q));
    m[c] = (p.budgets[c] - beta) + extra;
  }
  return m;
}

/// m*(t) straight from the definitions (RK4 for mu from the phase start).
inline std::vector<double> m_star(const ModelParams& p, const PhaseSchedule& s, double t) {
  if (t < 0.0 || t > s.horizon + 1e-12) throw std::domain_error("m_star: t outside [0, alpha]");
  const std::size_t k = s.phase_at(t);
  const auto act = s.active(k);
  const double mu = mu_eval(p, act, t - s.t[k]);
  return m_star_from_level(p, s, k, bigF_eval(p, act, mu));
}

/// Schedule plus a dense RK4 table of mu per phase (cubic Hermite in
/// between), for evaluating m* on many time points.
class BalanceFluid {
 public:
  explicit BalanceFluid(const ModelParams& p, double max_step = kFluidMaxStep)
      : p_(p), schedule_(build_schedule(p)) {
    tables_.resize(schedule_.reached);
    for (std::size_t k = 0; k < schedule_.reached; ++k) {
      Table& tb = tables_[k];
      const double span = schedule_.phase_end(k) - schedule_.t[k];
      const std::size_t n = std::max<std::size_t>(1, numerics::substeps(span, max_step));
      tb.h = span / static_cast<double>(n);
      const auto act = schedule_.active(k);
      auto F = [&](double mu) { return bigF_eval(p_, act, mu); };
      tb.mu.assign(n + 1, 0.0);
      tb.rate.assign(n + 1, 0.0);
      tb.rate[0] = F(0.0);
      for (std::size_t j = 0; j < n; ++j) {
        const double y = tb.mu[j];
        const double k1 = tb.rate[j];
        const double k2 = F(y + 0.5 * tb.h * k1);
        const double k3 = F(y + 0.5 * tb.h * k2);
        const double k4 = F(y + tb.h * k3);
        tb.mu[j + 1] = y + tb.h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
        tb.rate[j + 1] = F(tb.mu[j + 1]);
      }
    }
  }

  const PhaseSchedule& schedule() const { return schedule_; }
  const ModelParams& params() const { return p_; }

  /// mu of phase k at elapsed time s within the phase.
  double mu(std::size_t k, double s) const {
    const Table& tb = tables_.at(k);
    if (tb.h <= 0.0 || s <= 0.0) return 0.0;
    const double x = s / tb.h;
    std::size_t j = static_cast<std::size_t>(x);
    if (j >= tb.mu.size() - 1) j = tb.mu.size() - 2;
    return numerics::hermite(static_cast<double>(j) * tb.h, static_cast<double>(j + 1) * tb.h,
                             tb.mu[j], tb.mu[j + 1], tb.rate[j], tb.rate[j + 1], s);
  }

  /// Common match probability of the active classes at time t.
  double level(double t) const {
    const std::size_t k = schedule_.phase_at(t);
    return bigF_eval(p_, schedule_.active(k), mu(k, t - schedule_.t[k]));
  }

  std::vector<double> m_star(double t) const {
    if (t < 0.0 || t > schedule_.horizon + 1e-12) throw std::domain_error("m_star: t outside [0, alpha]");
    const std::size_t k = schedule_.phase_at(t);
    const double q = bigF_eval(p_, schedule_.active(k), mu(k, t - schedule_.t[k]));
    return m_star_from_level(p_, schedule_, k, q);
  }

  /// True when some class is (numerically) exhausted at time t; there the
  /// availability-guarded inclusion may differ from the unguarded one.
  bool saturated(double t, double tol = 1e-9) const {
    const auto m = m_star(t);
    for (std::size_t c = 0; c < p_.C(); ++c)
      if (m[c] >= p_.budgets[c] - tol) return true;
    return false;
  }

 private:
  struct Table {
    double h = 0.0;
    std::vector<double> mu;
    std::vector<double> rate;
  };
  ModelParams p_;
  PhaseSchedule schedule_;
  std::vector<Table> tables_;
};

// ---- deviation bound for the Balance process --------------------------------

struct BalanceBoundInputs {
  double L = 0.0;                  // max_c sum_d a nu
  std::vector<double> delta;       // (1/N) sum_d (a/e) nu
  double epsilon = 0.0;
  std::vector<double> c_growth;    // linear-growth constant per class
  std::vector<double> K_alpha;     // (c alpha + eps) e^{c alpha} / c
  std::vector<double> U;           // sum_d (1 - e^{-a b}) nu
  std::vector<double> A, B, Cc;
  double b_mart = 1.0;             // second-moment bound of unit increments
};

struct BalanceBound {
  BalanceBoundInputs inputs;
  std::vector<double> bound;       // per class
  double failure_prob = 0.0;       // b alpha / (N eps^2)
};

inline BalanceBound balance_deviation_bound(const ModelParams& p, double N, double epsilon) {
  if (!(epsilon > 0.0)) throw std::domain_error("balance_deviation_bound: need epsilon > 0");
  const std::size_t C = p.C();
  const double alpha = p.horizon_factor;
  BalanceBound out;
  auto& in = out.inputs;
  in.epsilon = epsilon;
  for (std::size_t c = 0; c < C; ++c) {
    double s = 0.0;
    for (std::size_t d = 0; d < p.D(); ++d) s += p.a(c, d) * p.arrival_law[d];
    in.L = std::max(in.L, s);
  }
  in.delta.resize(C);
  in.c_growth.resize(C);
  in.K_alpha.resize(C);
  in.U.resize(C);
  in.A.resize(C);
  in.B.resize(C);
  in.Cc.resize(C);
  out.bound.resize(C);
  const double pref = in.L > 0.0 ? std::min(alpha, std::exp(in.L * alpha) / std::sqrt(2.0 * in.L)) : alpha;
  for (std::size_t c = 0; c < C; ++c) {
    double dsum = 0.0, usum = 0.0, amin = std::numeric_limits<double>::infinity();
    for (std::size_t d = 0; d < p.D(); ++d) {
      dsum += p.a(c, d) / std::exp(1.0) * p.arrival_law[d];
      usum += -std::expm1(-p.a(c, d) * p.budgets[c]) * p.arrival_law[d];
      amin = std::min(amin, p.a(c, d));
    }
    in.delta[c] = dsum / N;
    in.U[c] = usum;
    const double ac = std::log1p(-amin / N);
    const double e = std::exp(ac * N * p.budgets[c]);
    in.c_growth[c] = std::max(std::abs(1.0 - e), std::abs(ac * e));
    const double cg = in.c_growth[c];
    in.K_alpha[c] = cg > 0.0 ? (cg * alpha + epsilon) * std::exp(cg * alpha) / cg
                             : std::numeric_limits<double>::infinity();
    const double U = in.U[c], K = in.K_alpha[c];
    in.A[c] = U * (U * U + 14.0 * U / 3.0 + 2.0 * K);
    in.B[c] = 2.0 * U * U + 4.0 * in.L * in.delta[c] + 12.0 * K;
    in.Cc[c] = 2.0 * U * U + 4.0 * in.L * epsilon + 8.0 * K;
    out.bound[c] = pref * std::sqrt(in.A[c] / N + in.delta[c] * in.B[c] + epsilon * in.Cc[c]);
  }
  out.failure_prob = in.b_mart * alpha / (N * epsilon * epsilon);
  return out;
}

}  // namespace obm
