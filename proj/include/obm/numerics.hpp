#pragma once

// Small numerical toolbox: bracketed root finding, fixed-step RK4,
// adaptive Simpson quadrature and least-squares line fits.

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace obm::numerics {

struct RootResult {
  double x = 0.0;
  int iterations = 0;
};

// Bisection for a monotone function on [lo, hi]; f(lo) and f(hi) must
// bracket zero (either orientation).
template <class F>
RootResult bisect(F&& f, double lo, double hi, double tol = 1e-12, int max_iter = 200) {
  double flo = f(lo);
  double fhi = f(hi);
  if (flo == 0.0) return {lo, 0};
  if (fhi == 0.0) return {hi, 0};
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw std::domain_error("bisect: root not bracketed");
  }
  int it = 0;
  while (it < max_iter && hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    ++it;
    if (fm == 0.0) return {mid, it};
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return {0.5 * (lo + hi), it};
}

// Newton iteration kept inside a shrinking bracket; falls back to bisection
// whenever the Newton step leaves the bracket. `fdf(x)` returns {f, f'}.
// Terminates when |f| <= ftol or the bracket is narrower than xtol.
template <class FdF>
RootResult newton_bisect_from(FdF&& fdf, double lo, double hi, double x0, double ftol = 1e-14,
                              double xtol = 1e-15, int max_iter = 200) {
  auto [flo, dlo] = fdf(lo);
  auto [fhi, dhi] = fdf(hi);
  (void)dlo;
  (void)dhi;
  if (flo == 0.0) return {lo, 0};
  if (fhi == 0.0) return {hi, 0};
  if ((flo > 0.0) == (fhi > 0.0)) {
    throw std::domain_error("newton_bisect: root not bracketed");
  }
  const bool increasing = flo < 0.0;
  double x = (x0 > lo && x0 < hi) ? x0 : 0.5 * (lo + hi);
  for (int it = 1; it <= max_iter; ++it) {
    auto [fx, dfx] = fdf(x);
    if (std::abs(fx) <= ftol) return {x, it};
    if ((fx < 0.0) == increasing) {
      lo = x;
    } else {
      hi = x;
    }
    if (hi - lo <= xtol * std::max(1.0, std::abs(x))) return {x, it};
    double next = (dfx != 0.0) ? x - fx / dfx : lo - 1.0;
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == x) return {x, it};
    x = next;
  }
  return {x, max_iter};
}

template <class FdF>
RootResult newton_bisect(FdF&& fdf, double lo, double hi, double ftol = 1e-14,
                         double xtol = 1e-15, int max_iter = 200) {
  return newton_bisect_from(fdf, lo, hi, 0.5 * (lo + hi), ftol, xtol, max_iter);
}

// One classical RK4 step for a vector field rhs(t, y, dy).
template <class Rhs>
void rk4_step(Rhs&& rhs, double t, double h, std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> k1(n), k2(n), k3(n), k4(n), tmp(n);
  rhs(t, y, k1);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k1[i];
  rhs(t + 0.5 * h, tmp, k2);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + 0.5 * h * k2[i];
  rhs(t + 0.5 * h, tmp, k3);
  for (std::size_t i = 0; i < n; ++i) tmp[i] = y[i] + h * k3[i];
  rhs(t + h, tmp, k4);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  }
}

// Scalar autonomous RK4 step for y' = rhs(y).
template <class Rhs>
double rk4_step_scalar(Rhs&& rhs, double h, double y) {
  const double k1 = rhs(y);
  const double k2 = rhs(y + 0.5 * h * k1);
  const double k3 = rhs(y + 0.5 * h * k2);
  const double k4 = rhs(y + h * k3);
  return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

// Number of equal substeps needed to cover `span` with steps <= max_step.
inline std::size_t substeps(double span, double max_step) {
  if (span <= 0.0) return 0;
  return static_cast<std::size_t>(std::ceil(span / max_step - 1e-12));
}

// Integrate the scalar autonomous ODE y' = rhs(y) from 0 to t with steps
// no larger than max_step, landing exactly on t.
template <class Rhs>
double rk4_integrate_scalar(Rhs&& rhs, double y0, double t, double max_step) {
  const std::size_t n = substeps(t, max_step);
  if (n == 0) return y0;
  const double h = t / static_cast<double>(n);
  double y = y0;
  for (std::size_t i = 0; i < n; ++i) y = rk4_step_scalar(rhs, h, y);
  return y;
}

namespace detail {

template <class F>
double simpson_recurse(F& f, double a, double b, double fa, double fm, double fb,
                       double whole, double tol, int depth, int& evals) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  evals += 2;
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double diff = left + right - whole;
  if (depth <= 0 || std::abs(diff) <= 15.0 * tol) {
    return left + right + diff / 15.0;
  }
  return simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1, evals) +
         simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1, evals);
}

}  // namespace detail

struct QuadratureResult {
  double value = 0.0;
  int evaluations = 0;
};

// Adaptive Simpson quadrature with absolute tolerance `tol`.
template <class F>
QuadratureResult adaptive_simpson(F&& f, double a, double b, double tol = 1e-10,
                                  int max_depth = 40) {
  if (a == b) return {0.0, 0};
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  int evals = 3;
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  const double v = detail::simpson_recurse(f, a, b, fa, fm, fb, whole, tol, max_depth, evals);
  return {v, evals};
}

// Cubic Hermite interpolation on [x0, x1] from values and slopes.
inline double hermite(double x0, double x1, double y0, double y1, double d0, double d1,
                      double x) {
  const double h = x1 - x0;
  if (h <= 0.0) return y0;
  const double s = (x - x0) / h;
  const double s2 = s * s;
  const double s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * h * d0 + (-2 * s3 + 3 * s2) * y1 +
         (s3 - s2) * h * d1;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double residual = 0.0;  // sum of squared residuals
};

inline LineFit fit_line(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size() || xs.size() < 2) {
    throw std::invalid_argument("fit_line: need at least two paired points");
  }
  const double n = static_cast<double>(xs.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sx += xs[i];
    sy += ys[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  if (sxx == 0.0) throw std::invalid_argument("fit_line: degenerate abscissae");
  LineFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = ys[i] - (fit.intercept + fit.slope * xs[i]);
    fit.residual += r * r;
  }
  return fit;
}

// Log-log slope of y against x.
inline LineFit fit_power_law(std::span<const double> xs, std::span<const double> ys) {
  std::vector<double> lx, ly;
  lx.reserve(xs.size());
  ly.reserve(ys.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    lx.push_back(std::log(xs[i]));
    ly.push_back(std::log(ys[i]));
  }
  return fit_line(lx, ly);
}

}  // namespace obm::numerics
