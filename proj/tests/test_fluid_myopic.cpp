#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "obm/fluid_myopic.hpp"
#include "support/oracles.hpp"

using namespace obm;

namespace {

ModelParams single(double a, double b_scale_alpha = 1.0) {
  ModelParams p;
  p.num_offline_classes = 1;
  p.num_online_classes = 1;
  p.offline_scale = 1000;
  p.horizon_factor = b_scale_alpha;
  p.affinity = Matrix{{a}};
  p.affinity_cap = a;
  p.budgets = {1.0};
  p.arrival_law = {1.0};
  validate(p);
  return p;
}

// Plain RK4 on the class ODE with a fine fixed step, independent of the
// library integrator.
double reference_ode(const ModelParams& p, const QPlan& q, std::size_t c, double t, double h) {
  auto rhs = [&](double y) {
    double s = 0.0;
    for (std::size_t d = 0; d < p.D(); ++d) s += -std::expm1(-p.a(c, d) * (p.budgets[c] - y)) * q.mass(c, d);
    return s;
  };
  const auto n = static_cast<std::size_t>(std::ceil(t / h));
  const double dt = t / static_cast<double>(n);
  double y = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double k1 = rhs(y), k2 = rhs(y + 0.5 * dt * k1), k3 = rhs(y + 0.5 * dt * k2), k4 = rhs(y + dt * k3);
    y += dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
  }
  return y;
}

}  // namespace

TEST(MyopicFluid, SingleClassMatchesClosedForm) {
  for (double a : {0.3, 1.0, 2.5}) {
    const auto p = single(a, 3.0);
    const auto q = solve_qstar(p);
    const auto f = solve_ode(p, q, uniform_grid(3.0, 30));
    for (std::size_t i = 0; i < f.grid.size(); ++i)
      EXPECT_NEAR(f.y[0][i], er_closed_form(a, 1.0, 1.0, f.grid[i]), 1e-6) << a << " " << f.grid[i];
    EXPECT_LT(f.halving_error, 1e-9);
  }
}

TEST(MyopicFluid, ConstantRowClosedFormWithSeveralOnlineClasses) {
  ModelParams p;
  p.num_offline_classes = 2;
  p.num_online_classes = 3;
  p.offline_scale = 1000;
  p.horizon_factor = 2.0;
  p.affinity = Matrix{{1.5, 1.5, 1.5}, {0.7, 0.7, 0.7}};
  p.affinity_cap = 1.5;
  p.budgets = {0.4, 0.6};
  p.arrival_law = {0.2, 0.3, 0.5};
  validate(p);
  const auto q = solve_qstar(p);
  const auto f = solve_ode(p, q, uniform_grid(2.0, 20));
  for (std::size_t c = 0; c < 2; ++c) {
    double S = 0.0;
    for (std::size_t d = 0; d < 3; ++d) S += q.mass(c, d);
    for (std::size_t i = 0; i < f.grid.size(); ++i)
      EXPECT_NEAR(f.y[c][i], er_closed_form(p.a(c, 0), p.budgets[c], S, f.grid[i]), 1e-6);
  }
}

TEST(MyopicFluid, AgreesWithIndependentRk4) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto p = oracle::random_instance(s, 3, 4, 1000, 2.0, 0.2, 4.0);
    const auto q = solve_qstar(p);
    const auto f = solve_ode(p, q, uniform_grid(2.0, 8));
    for (std::size_t c = 0; c < p.C(); ++c)
      for (std::size_t i = 1; i < f.grid.size(); ++i)
        EXPECT_NEAR(f.y[c][i], reference_ode(p, q, c, f.grid[i], 1e-4), 1e-9);
  }
}

TEST(MyopicFluid, SurrogateReferenceValues) {
  // a = b = nu = 1: L = 1, J = 1/2.
  const auto p = single(1.0);
  const auto q = solve_qstar(p);
  EXPECT_DOUBLE_EQ(myopic_rates(p, q)[0], 1.0);
  EXPECT_DOUBLE_EQ(myopic_curvatures(p, q)[0], 0.5);
  const auto s = surrogate(p, q, 1.0);
  EXPECT_NEAR(s[0].y_tilde, 0.632121, 5e-7);
  EXPECT_NEAR(s[0].err_env, 0.5 * 0.632121, 5e-7);
  EXPECT_NEAR(surrogate(p, q, 50.0)[0].err_env, 0.5, 1e-12);
  EXPECT_EQ(surrogate(p, q, 0.0)[0].y_tilde, 0.0);
  EXPECT_THROW(surrogate(p, q, -1.0), std::domain_error);
}

TEST(MyopicFluid, SurrogateDominatesWithinEnvelope) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = oracle::random_instance(40 + s, 1 + s % 5, 1 + s % 4, 1000, 5.0, 0.0, 5.0);
    const auto q = solve_qstar(p);
    const auto f = solve_ode(p, q, uniform_grid(5.0, 100));
    for (std::size_t c = 0; c < p.C(); ++c)
      for (std::size_t i = 0; i < f.grid.size(); ++i) {
        const double gap = f.y_tilde[c][i] - f.y[c][i];
        EXPECT_GE(gap, -1e-8) << "seed " << s;
        EXPECT_LE(gap, f.err_env[c][i] + 1e-8) << "seed " << s;
      }
  }
}

TEST(MyopicFluid, TrajectoryStaysInBudgetAndIncreases) {
  const auto p = oracle::random_instance(7, 4, 3, 1000, 10.0, 0.5, 5.0);
  const auto q = solve_qstar(p);
  const auto f = solve_ode(p, q, uniform_grid(10.0, 200));
  for (std::size_t c = 0; c < p.C(); ++c)
    for (std::size_t i = 1; i < f.grid.size(); ++i) {
      EXPECT_GE(f.y[c][i], f.y[c][i - 1]);
      EXPECT_LE(f.y[c][i], p.budgets[c] + 1e-12);
    }
}

TEST(MyopicFluid, GridValidation) {
  const auto p = single(1.0);
  const auto q = solve_qstar(p);
  EXPECT_THROW(solve_ode(p, q, {0.5, 1.0}), std::invalid_argument);
  EXPECT_THROW(solve_ode(p, q, {0.0, 1.0, 1.0}), std::invalid_argument);
}

TEST(WormaldBound, ReferenceValues) {
  ModelParams p = single(1.0);
  p.num_offline_classes = 2;
  p.affinity = Matrix{{1.0}, {1.0}};
  p.budgets = {0.5, 0.5};
  const auto w = wormald_bound(p, 1.0, 1e6);
  EXPECT_NEAR(w.deviation, 0.08155, 5e-6);
  EXPECT_NEAR(w.failure_prob, 1.49e-5, 5e-8);
  EXPECT_THROW(wormald_bound(p, 1.0, 0.5), std::domain_error);
}

TEST(ClosedForm, AlternateVariantFailsInitialCondition) {
  EXPECT_NEAR(er_closed_form(2.0, 0.7, 1.3, 0.0), 0.0, 1e-15);
  EXPECT_NEAR(er_alternate_form(2.0, 0.7, 1.3, 0.0), 0.7, 1e-12);
  EXPECT_NEAR(er_closed_form(2.0, 0.7, 1.3, 100.0), 0.7, 1e-12);
}
