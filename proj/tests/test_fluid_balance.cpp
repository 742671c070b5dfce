#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "obm/fluid_balance.hpp"
#include "obm/fluid_myopic.hpp"
#include "support/oracles.hpp"

using namespace obm;

namespace {

ModelParams reference(double alpha = 2.0) {
  ModelParams p;
  p.num_offline_classes = 2;
  p.num_online_classes = 2;
  p.offline_scale = 2000;
  p.horizon_factor = alpha;
  p.affinity = Matrix{{2, 1}, {1, 3}};
  p.affinity_cap = 3;
  p.budgets = {0.4, 0.6};
  p.arrival_law = {0.5, 0.5};
  validate(p);
  return p;
}

ModelParams single(double a, double alpha) {
  ModelParams p;
  p.num_offline_classes = 1;
  p.num_online_classes = 1;
  p.offline_scale = 1000;
  p.horizon_factor = alpha;
  p.affinity = Matrix{{a}};
  p.affinity_cap = a;
  p.budgets = {1.0};
  p.arrival_law = {1.0};
  validate(p);
  return p;
}

ModelParams twins(double alpha) {
  ModelParams p;
  p.num_offline_classes = 2;
  p.num_online_classes = 2;
  p.offline_scale = 1000;
  p.horizon_factor = alpha;
  p.affinity = Matrix{{1.5, 0.5}, {1.5, 0.5}};
  p.affinity_cap = 1.5;
  p.budgets = {0.5, 0.5};
  p.arrival_law = {0.5, 0.5};
  validate(p);
  return p;
}

}  // namespace

TEST(FFunction, ReferenceValuesAndInverse) {
  const auto p = single(1.0, 1.0);
  EXPECT_NEAR(f_eval(p, 0, 1.0, 0.0), 0.632121, 5e-7);
  EXPECT_EQ(f_eval(p, 0, 1.0, 1.0), 0.0);
  EXPECT_DOUBLE_EQ(f_supremum(p, 0), 1.0);
  EXPECT_NEAR(f_slope(p, 0, 1.0, 0.0), -std::exp(-1.0), 1e-15);
  const auto r = reference();
  for (std::size_t c = 0; c < 2; ++c)
    for (double z : {-3.0, -0.5, 0.0, 0.1, 0.3}) {
      const double v = f_eval(r, c, r.budgets[c], z);
      EXPECT_NEAR(f_inverse(r, c, r.budgets[c], v), z, 1e-10) << c << " " << z;
    }
}

TEST(FFunction, SlopeMatchesFiniteDifference) {
  const auto p = oracle::random_instance(3, 3, 4);
  const double h = 1e-6;
  for (std::size_t c = 0; c < 3; ++c)
    for (double z : {-1.0, 0.0, 0.2}) {
      const double fd = (f_eval(p, c, 0.5, z + h) - f_eval(p, c, 0.5, z - h)) / (2 * h);
      EXPECT_NEAR(f_slope(p, c, 0.5, z), fd, 1e-7);
    }
}

TEST(BigF, SingleClassIsF) {
  const auto p = reference();
  const std::vector<std::size_t> cls{1};
  const std::vector<double> beta{0.6};
  const ActiveSet s{cls, beta};
  for (double z : {0.0, 0.1, 0.4, 0.59}) EXPECT_NEAR(bigF_eval(p, s, z), f_eval(p, 1, 0.6, z), 1e-12);
}

TEST(BigF, IdenticalClassesSplitEvenly) {
  const auto p = twins(1.0);
  const std::vector<std::size_t> cls{0, 1};
  const std::vector<double> beta{0.5, 0.5};
  const ActiveSet s{cls, beta};
  for (double z : {0.0, 0.2, 0.6, 0.9}) EXPECT_NEAR(bigF_eval(p, s, z), f_eval(p, 0, 0.5, z / 2), 1e-12);
}

TEST(Mu, InverseTimeAgreesWithRk4) {
  const auto p = reference();
  const std::vector<std::size_t> cls{1, 0};
  const std::vector<double> beta{0.5, 0.4};
  const ActiveSet s{cls, beta};
  for (double t : {0.05, 0.3, 1.0, 2.0}) {
    const double mu = mu_eval(p, s, t);
    EXPECT_NEAR(mu_inverse_time(p, s, mu), t, 1e-7) << t;
  }
  EXPECT_EQ(mu_inverse_time(p, s, 0.0), 0.0);
  EXPECT_THROW(mu_inverse_time(p, s, -0.1), std::domain_error);
  EXPECT_THROW(mu_inverse_time(p, s, 0.9), HorizonExceeded);
}

TEST(Schedule, ReferenceInstanceFirstPhaseFromQuadrature) {
  const auto p = reference();
  const auto s = build_schedule(p);
  EXPECT_EQ(s.order, (std::vector<std::size_t>{1, 0}));
  EXPECT_NEAR(s.levels[0], 0.642945, 5e-7);
  EXPECT_NEAR(s.levels[1], 0.440175, 5e-7);
  ASSERT_EQ(s.reached, 2u);
  // Class 1 alone until f_1 falls to class 0's initial level.
  const double target = s.levels[1];
  double lo = 0.0, hi = 0.6;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (oracle::f_plain(p, 1, mid) > target ? lo : hi) = mid;
  }
  const int n = 20000;
  const double h = lo / n;
  double integral = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    integral += w / oracle::f_plain(p, 1, i * h);
  }
  integral *= h / 3.0;
  EXPECT_NEAR(s.t[1], integral, 1e-9);
  EXPECT_NEAR(s.t[1], 0.523823, 5e-7);
  EXPECT_NEAR(s.beta[1][0], 0.6 - lo, 1e-9);
  EXPECT_DOUBLE_EQ(s.beta[1][1], 0.4);
  EXPECT_EQ(s.t[2], 2.0);
}

TEST(Schedule, IdenticalClassesJoinImmediately) {
  const auto s = build_schedule(twins(1.0));
  ASSERT_EQ(s.reached, 2u);
  EXPECT_EQ(s.t[1], 0.0);
  EXPECT_EQ(s.phase_at(0.0), 1u);
}

TEST(Schedule, SingleClass) {
  const auto s = build_schedule(single(1.0, 3.0));
  EXPECT_EQ(s.reached, 1u);
  EXPECT_EQ(s.t, (std::vector<double>{0.0, 3.0}));
  EXPECT_EQ(s.phase_end(0), 3.0);
}

TEST(Schedule, StartsIncreaseAndLevelsDecrease) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    const auto p = oracle::random_instance(seed, 2 + seed % 5, 1 + seed % 4, 1000, 4.0);
    const auto s = build_schedule(p);
    EXPECT_EQ(s.t.front(), 0.0);
    for (std::size_t k = 1; k < s.t.size(); ++k) EXPECT_GE(s.t[k], s.t[k - 1]) << seed;
    for (std::size_t k = 1; k < s.levels.size(); ++k) EXPECT_LE(s.levels[k], s.levels[k - 1]);
    for (std::size_t k = s.reached; k < s.size(); ++k) EXPECT_EQ(s.t[k], p.horizon_factor);
    for (std::size_t k = 0; k < s.reached; ++k)
      for (std::size_t i = 0; i < s.size(); ++i) {
        EXPECT_GE(s.beta[k][i], -1e-12);
        EXPECT_LE(s.beta[k][i], p.budgets[s.order[i]]);
        if (i > k) {
          EXPECT_EQ(s.beta[k][i], p.budgets[s.order[i]]);
        }
      }
  }
}

TEST(MStar, StartsAtZero) {
  const auto p = oracle::random_instance(5, 4, 3);
  const BalanceFluid fl(p);
  for (double v : fl.m_star(0.0)) EXPECT_NEAR(v, 0.0, 1e-15);
  for (double v : m_star(p, fl.schedule(), 0.0)) EXPECT_NEAR(v, 0.0, 1e-15);
  EXPECT_THROW(fl.m_star(-0.1), std::domain_error);
  EXPECT_THROW(fl.m_star(p.horizon_factor + 0.1), std::domain_error);
}

TEST(MStar, SingleClassIsScalarOde) {
  for (double a : {0.5, 1.0, 3.0}) {
    const auto p = single(a, 4.0);
    const BalanceFluid fl(p);
    for (double t : {0.1, 1.0, 2.5, 4.0}) EXPECT_NEAR(fl.m_star(t)[0], er_closed_form(a, 1.0, 1.0, t), 1e-8);
  }
}

TEST(MStar, TableAgreesWithDirectEvaluation) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const auto p = oracle::random_instance(seed, 3, 3, 1000, 3.0);
    const BalanceFluid fl(p);
    for (double t : {0.0, 0.37, 1.0, 1.9, 3.0}) {
      const auto a = fl.m_star(t), b = m_star(p, fl.schedule(), t);
      for (std::size_t c = 0; c < p.C(); ++c) EXPECT_NEAR(a[c], b[c], 1e-8) << seed << " " << t;
    }
  }
}

TEST(MStar, ActiveExtrasSumToMu) {
  const auto p = oracle::random_instance(11, 4, 3, 1000, 3.0);
  const BalanceFluid fl(p);
  const auto& s = fl.schedule();
  for (double t : {0.2, 0.9, 1.7, 2.8}) {
    const auto k = s.phase_at(t);
    const auto m = fl.m_star(t);
    double extra = 0.0;
    for (std::size_t i = 0; i <= k; ++i) extra += m[s.order[i]] - (p.budgets[s.order[i]] - s.beta[k][i]);
    EXPECT_NEAR(extra, mu_eval(p, s.active(k), t - s.t[k]), 1e-8);
  }
}

TEST(MStar, ActiveClassesShareOneProbability) {
  for (std::uint64_t seed = 0; seed < 15; ++seed) {
    const auto p = oracle::random_instance(100 + seed, 2 + seed % 4, 2, 1000, 5.0);
    const BalanceFluid fl(p);
    const auto& s = fl.schedule();
    for (double t = 0.25; t <= p.horizon_factor; t += 0.25) {
      const auto m = fl.m_star(t);
      const double q = fl.level(t);
      const auto k = s.phase_at(t);
      for (std::size_t i = 0; i < s.size(); ++i) {
        const std::size_t c = s.order[i];
        const double fc = oracle::f_plain(p, c, m[c]);
        if (i <= k) {
          EXPECT_NEAR(fc, q, 1e-6) << seed << " t=" << t;
        } else {
          EXPECT_LE(fc, q + 1e-9) << seed << " t=" << t;
          EXPECT_EQ(m[c], 0.0);
        }
      }
    }
  }
}

TEST(MStar, TotalRateEqualsLevel) {
  const auto p = oracle::random_instance(21, 3, 4, 1000, 3.0);
  const BalanceFluid fl(p);
  const double h = 1e-5;
  for (double t : {0.3, 1.1, 2.2}) {
    const auto up = fl.m_star(t + h), dn = fl.m_star(t - h);
    double rate = 0.0;
    for (std::size_t c = 0; c < p.C(); ++c) rate += (up[c] - dn[c]) / (2 * h);
    EXPECT_NEAR(rate, fl.level(t), 1e-5);
  }
}

TEST(MStar, MonotoneAndWithinBudget) {
  const auto p = oracle::random_instance(31, 5, 3, 1000, 10.0, 0.5, 5.0);
  const BalanceFluid fl(p);
  std::vector<double> prev(p.C(), 0.0);
  for (double t = 0.0; t <= 10.0; t += 0.05) {
    const auto m = fl.m_star(t);
    for (std::size_t c = 0; c < p.C(); ++c) {
      EXPECT_GE(m[c], prev[c] - 1e-12);
      EXPECT_LE(m[c], p.budgets[c] + 1e-12);
    }
    prev = m;
  }
}

TEST(MStar, AgreesWithProjectedEuler) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto p = oracle::random_instance(200 + seed, 2 + seed % 3, 3, 1000, 2.0);
    const BalanceFluid fl(p);
    const double dt = 1e-5;
    const std::size_t every = 10000;
    const auto path = oracle::projected_euler(p, 2.0, dt, every);
    for (std::size_t j = 0; j < path.size(); ++j) {
      const double t = std::min(2.0, static_cast<double>(j * every) * dt);
      const auto m = fl.m_star(t);
      for (std::size_t c = 0; c < p.C(); ++c) EXPECT_NEAR(path[j][c], m[c], 2e-3) << seed << " t=" << t;
    }
  }
}

TEST(MStar, ReferenceEndpoint) {
  const BalanceFluid fl(reference());
  const auto m = fl.m_star(2.0);
  EXPECT_NEAR(m[0], 0.2540, 5e-5);
  EXPECT_NEAR(m[1], 0.4888, 5e-5);
  EXPECT_FALSE(fl.saturated(2.0));
}

TEST(MStar, SaturationDetected) {
  const BalanceFluid fl(single(99.0 / 1000.0 * 1000.0, 5.0));
  EXPECT_TRUE(fl.saturated(5.0));
  EXPECT_FALSE(fl.saturated(0.001));
}

TEST(BalanceBound, InputsAndShrinkage) {
  const auto p = reference();
  double prev = std::numeric_limits<double>::infinity();
  std::vector<double> logs_n, logs_b;
  for (double N : {1e3, 1e5, 1e7, 1e9, 1e11, 1e13, 1e15}) {
    const double eps = std::pow(N, -0.25);
    const auto b = balance_deviation_bound(p, N, eps);
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_GE(b.inputs.U[c], 0.0);
      EXPECT_LE(b.inputs.U[c], 1.0);
      EXPECT_GT(b.inputs.c_growth[c], 0.0);
      EXPECT_TRUE(std::isfinite(b.bound[c]));
    }
    EXPECT_NEAR(b.failure_prob, 2.0 / (N * eps * eps), 1e-15 * b.failure_prob + 1e-300);
    const double worst = std::max(b.bound[0], b.bound[1]);
    EXPECT_LT(worst, prev) << N;
    prev = worst;
    logs_n.push_back(std::log(N));
    logs_b.push_back(std::log(worst));
  }
  // With eps = N^{-1/4} the eps * Cc term dominates: the bound decays like N^{-1/8}.
  const double slope = (logs_b.back() - logs_b[logs_b.size() - 2]) / (logs_n.back() - logs_n[logs_n.size() - 2]);
  EXPECT_NEAR(slope, -0.125, 0.005);
  EXPECT_THROW(balance_deviation_bound(p, 1e3, 0.0), std::domain_error);
}

TEST(BalanceBound, MaxRateIsLargestRowMass) {
  const auto b = balance_deviation_bound(reference(), 1e4, 0.1);
  EXPECT_DOUBLE_EQ(b.inputs.L, 2.0);
  EXPECT_NEAR(b.inputs.delta[0], 1.5 / std::exp(1.0) / 1e4, 1e-18);
}
