#pragma once

// Deterministic limit of the Myopic policy. Class c evolves independently:
//   y_c' = sum_d (1 - exp(-a(c,d) (b_c - y_c))) R(c,d),   y_c(0) = 0,
// with R the joint mass of the transport plan. The linearised surrogate
// b_c (1 - exp(-L_c t)) dominates y_c, and the gap is at most
// (J_c / L_c)(1 - exp(-L_c t)).

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "obm/model.hpp"
#include "obm/numerics.hpp"
#include "obm/transport.hpp"

namespace obm {

inline constexpr double kMyopicMaxStep = 1e-3;

struct MyopicFluid {
  std::vector<double> grid;
  std::vector<std::vector<double>> y;        // [class][grid]
  std::vector<std::vector<double>> y_tilde;  // [class][grid]
  std::vector<std::vector<double>> err_env;  // [class][grid]
  std::vector<double> L;                     // sum_d a R
  std::vector<double> J;                     // (b^2/2) sum_d a^2 R
  double halving_error = 0.0;                // max |y(h) - y(h/2)| on the grid
};

/// L_c = sum_d a(c,d) R(c,d).
inline std::vector<double> myopic_rates(const ModelParams& p, const QPlan& q) {
  std::vector<double> L(p.C(), 0.0);
  for (std::size_t c = 0; c < p.C(); ++c)
    for (std::size_t d = 0; d < p.D(); ++d) L[c] += p.a(c, d) * q.mass(c, d);
  return L;
}

/// J_c = (b_c^2 / 2) sum_d a(c,d)^2 R(c,d).
inline std::vector<double> myopic_curvatures(const ModelParams& p, const QPlan& q) {
  std::vector<double> J(p.C(), 0.0);
  for (std::size_t c = 0; c < p.C(); ++c) {
    double s = 0.0;
    for (std::size_t d = 0; d < p.D(); ++d) s += p.a(c, d) * p.a(c, d) * q.mass(c, d);
    J[c] = 0.5 * p.budgets[c] * p.budgets[c] * s;
  }
  return J;
}

inline double myopic_drift(const ModelParams& p, const QPlan& q, std::size_t c, double y) {
  const double free = p.budgets[c] - y;
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    const double r = q.mass(c, d);
    if (r == 0.0) continue;
    s += -std::expm1(-p.a(c, d) * free) * r;
  }
  return s;
}

namespace fluid_detail {

inline std::vector<std::vector<double>> integrate_myopic(const ModelParams& p, const QPlan& q,
                                                         const std::vector<double>& grid,
                                                         double max_step) {
  std::vector<std::vector<double>> y(p.C(), std::vector<double>(grid.size(), 0.0));
  for (std::size_t c = 0; c < p.C(); ++c) {
    auto rhs = [&](double v) { return myopic_drift(p, q, c, v); };
    double v = 0.0;
    for (std::size_t i = 1; i < grid.size(); ++i) {
      const double span = grid[i] - grid[i - 1];
      const std::size_t n = numerics::substeps(span, max_step);
      const double h = n ? span / static_cast<double>(n) : 0.0;
      for (std::size_t k = 0; k < n; ++k) v = numerics::rk4_step_scalar(rhs, h, v);
      y[c][i] = v;
    }
  }
  return y;
}

}  // namespace fluid_detail

struct SurrogateValue {
  double y_tilde = 0.0;
  double err_env = 0.0;
};

/// Closed-form surrogate and envelope at fluid time t for every class.
inline std::vector<SurrogateValue> surrogate(const ModelParams& p, const QPlan& q, double t) {
  if (t < 0.0) throw std::domain_error("surrogate: negative time");
  const auto L = myopic_rates(p, q);
  const auto J = myopic_curvatures(p, q);
  std::vector<SurrogateValue> out(p.C());
  for (std::size_t c = 0; c < p.C(); ++c) {
    if (L[c] <= 0.0) continue;
    const double decay = -std::expm1(-L[c] * t);
    out[c].y_tilde = p.budgets[c] * decay;
    out[c].err_env = J[c] / L[c] * decay;
  }
  return out;
}

/// RK4 solution of the per-class ODE on `grid` (must start at 0 and
/// increase), with surrogate, envelope and a step-halving error estimate.
inline MyopicFluid solve_ode(const ModelParams& p, const QPlan& q, const std::vector<double>& grid) {
  if (grid.empty() || grid.front() != 0.0) throw std::invalid_argument("solve_ode: grid must start at 0");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("solve_ode: grid must increase");
  MyopicFluid f;
  f.grid = grid;
  f.L = myopic_rates(p, q);
  f.J = myopic_curvatures(p, q);
  f.y = fluid_detail::integrate_myopic(p, q, grid, kMyopicMaxStep);
  const auto half = fluid_detail::integrate_myopic(p, q, grid, 0.5 * kMyopicMaxStep);
  f.y_tilde.assign(p.C(), std::vector<double>(grid.size(), 0.0));
  f.err_env.assign(p.C(), std::vector<double>(grid.size(), 0.0));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const auto s = surrogate(p, q, grid[i]);
    for (std::size_t c = 0; c < p.C(); ++c) {
      f.y_tilde[c][i] = s[c].y_tilde;
      f.err_env[c][i] = s[c].err_env;
      f.halving_error = std::max(f.halving_error, std::abs(f.y[c][i] - half[c][i]));
    }
  }
  return f;
}

/// Uniform grid of n+1 points on [0, t_end].
inline std::vector<double> uniform_grid(double t_end, std::size_t n) {
  std::vector<double> g(n + 1);
  for (std::size_t i = 0; i <= n; ++i) g[i] = t_end * static_cast<double>(i) / static_cast<double>(n);
  return g;
}

struct DeviationBound {
  double deviation = 0.0;
  double failure_prob = 0.0;
};

/// 3 L e^{alpha L} / N^{1/3}, holding except with probability
/// 2 C exp(-N^{1/3} L^2 / (8 alpha)).
inline DeviationBound wormald_bound(const ModelParams& p, double L, double N) {
  if (N < 1.0) throw std::domain_error("wormald_bound: need N >= 1");
  const double alpha = p.horizon_factor;
  const double n13 = std::cbrt(N);
  return {3.0 * L * std::exp(alpha * L) / n13,
          2.0 * static_cast<double>(p.C()) * std::exp(-n13 * L * L / (8.0 * alpha))};
}

/// Closed-form solution when a(c,.) = a is constant over online classes:
///   y(t) = -(1/a) ln(e^{-ab} + (1 - e^{-ab}) e^{-a S t}),  S = sum_d R(c,d).
inline double er_closed_form(double a, double b, double S, double t) {
  if (!(a > 0.0)) throw std::domain_error("er_closed_form: need a > 0");
  const double e = std::exp(-a * b);
  return -std::log(e + (1.0 - e) * std::exp(-a * S * t)) / a;
}

/// The variant -(1/a) ln(1 + (e^{-ab} - 1) e^{-aSt}). It equals b at t = 0,
/// so it is not a solution of the initial-value problem; kept only to check
/// that discrepancy.
inline double er_alternate_form(double a, double b, double S, double t) {
  return -std::log(1.0 + std::expm1(-a * b) * std::exp(-a * S * t)) / a;
}

}  // namespace obm
