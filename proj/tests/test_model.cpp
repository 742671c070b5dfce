#include <gtest/gtest.h>

#include <cmath>
#include <string>
#include <vector>

#include "obm/model.hpp"
#include "obm/rng.hpp"
#include "support/oracles.hpp"

using namespace obm;

namespace {

ModelParams minimal() {
  ModelParams p;
  p.num_offline_classes = 1;
  p.num_online_classes = 1;
  p.offline_scale = 100;
  p.horizon_factor = 1.0;
  p.affinity = Matrix{{1.0}};
  p.affinity_cap = 1.0;
  p.budgets = {1.0};
  p.arrival_law = {1.0};
  return p;
}

ModelParams two_class(std::int64_t N) {
  ModelParams p;
  p.num_offline_classes = 2;
  p.num_online_classes = 1;
  p.offline_scale = N;
  p.horizon_factor = 1.0;
  p.affinity = Matrix{{1.0}, {1.0}};
  p.affinity_cap = 1.0;
  p.budgets = {0.5, 0.5};
  p.arrival_law = {1.0};
  return p;
}

std::string error_field(const ModelParams& p) {
  try {
    validate(p);
  } catch (const ValidationError& e) {
    return e.field() + ": " + e.what();
  }
  return "";
}

}  // namespace

TEST(Validate, MinimalInstanceIsValid) { EXPECT_NO_THROW(validate(minimal())); }

TEST(Validate, BudgetSumViolationNamesField) {
  auto p = two_class(100);
  p.budgets = {0.6, 0.6};
  const auto msg = error_field(p);
  EXPECT_NE(msg.find("budgets"), std::string::npos);
  EXPECT_NE(msg.find("budgets do not sum to 1"), std::string::npos);
}

TEST(Validate, AffinityAtScaleRejected) {
  auto p = minimal();
  p.affinity(0, 0) = 100.0;
  p.affinity_cap = 100.0;
  const auto msg = error_field(p);
  EXPECT_NE(msg.find("affinity exceeds cap"), std::string::npos);
}

TEST(Validate, AffinityAboveDeclaredCapRejected) {
  auto p = minimal();
  p.affinity(0, 0) = 2.0;
  EXPECT_NE(error_field(p).find("affinity exceeds cap"), std::string::npos);
}

TEST(Validate, ArrivalLawAndShapes) {
  auto p = minimal();
  p.arrival_law = {0.7};
  EXPECT_NE(error_field(p).find("arrival_law"), std::string::npos);
  p = minimal();
  p.budgets = {0.5, 0.5};
  EXPECT_NE(error_field(p).find("budgets"), std::string::npos);
  p = minimal();
  p.offline_scale = 0;
  EXPECT_NE(error_field(p).find("offline_scale"), std::string::npos);
}

TEST(Validate, EdgeProbabilityInUnitInterval) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto p = oracle::random_instance(s, 3, 4, 50, 1.0, 0.0, 4.0);
    for (std::size_t c = 0; c < p.C(); ++c)
      for (std::size_t d = 0; d < p.D(); ++d) {
        EXPECT_GE(p.edge_probability(c, d), 0.0);
        EXPECT_LT(p.edge_probability(c, d), 1.0);
      }
  }
}

TEST(Horizon, RoundsHalfUp) {
  auto p = minimal();
  p.offline_scale = 3;
  p.horizon_factor = 0.5;
  EXPECT_EQ(p.horizon(), 2);
  p.horizon_factor = 10.0;
  p.offline_scale = 5000;
  EXPECT_EQ(p.horizon(), 50000);
}

TEST(OfflineCounts, ExactSplit) {
  Engine rng(1);
  EXPECT_EQ(realize_offline_counts(two_class(100), OfflineMode::rounding, rng),
            (std::vector<std::int64_t>{50, 50}));
}

TEST(OfflineCounts, TieGoesToLowerIndex) {
  Engine rng(1);
  EXPECT_EQ(realize_offline_counts(two_class(101), OfflineMode::rounding, rng),
            (std::vector<std::int64_t>{51, 50}));
}

TEST(OfflineCounts, LargestRemainderSumsToN) {
  for (std::uint64_t s = 0; s < 50; ++s) {
    const auto p = oracle::random_instance(s, 5, 2, 997);
    Engine rng(s);
    const auto counts = realize_offline_counts(p, OfflineMode::rounding, rng);
    std::int64_t total = 0;
    for (std::size_t c = 0; c < p.C(); ++c) {
      total += counts[c];
      EXPECT_LE(std::abs(static_cast<double>(counts[c]) - p.N() * p.budgets[c]), 1.0);
    }
    EXPECT_EQ(total, 997);
  }
}

TEST(OfflineCounts, SampledProportionsConcentrate) {
  auto p = two_class(100000);
  p.budgets = {0.3, 0.7};
  int within = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    Engine rng = make_stream(s, Stream::offline);
    const auto counts = realize_offline_counts(p, OfflineMode::sampled, rng);
    ASSERT_EQ(counts[0] + counts[1], 100000);
    within += std::abs(static_cast<double>(counts[0]) / 1e5 - 0.3) <= 0.01;
  }
  EXPECT_GE(within, 990);
}

TEST(ArrivalClass, DeterministicLaws) {
  Engine rng(7);
  auto p = minimal();
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_arrival_class(p, rng), 0u);
  p.num_online_classes = 2;
  p.affinity = Matrix{{1.0, 1.0}};
  p.arrival_law = {0.0, 1.0};
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(sample_arrival_class(p, rng), 1u);
}

TEST(ArrivalClass, EmpiricalFrequencies) {
  auto p = minimal();
  p.num_online_classes = 2;
  p.affinity = Matrix{{1.0, 1.0}};
  p.arrival_law = {0.25, 0.75};
  Engine rng = make_stream(3, Stream::arrivals);
  int ones = 0;
  for (int i = 0; i < 100000; ++i) ones += sample_arrival_class(p, rng) == 1;
  EXPECT_NEAR(ones / 1e5, 0.75, 0.01);
}

TEST(Json, RoundTrip) {
  const auto p = oracle::random_instance(4, 3, 2);
  const auto q = params_from_json(to_json(p));
  EXPECT_EQ(q.C(), p.C());
  EXPECT_EQ(q.D(), p.D());
  EXPECT_EQ(q.offline_scale, p.offline_scale);
  EXPECT_EQ(q.affinity, p.affinity);
  EXPECT_EQ(q.budgets, p.budgets);
  EXPECT_EQ(q.arrival_law, p.arrival_law);
  EXPECT_EQ(q.affinity_cap, p.affinity_cap);
}

TEST(Json, FlatAffinityAndDefaults) {
  const auto j = nlohmann::json::parse(R"({"offline_scale": 10, "horizon_factor": 1,
      "affinity": [1, 2, 3, 4], "budgets": [0.5, 0.5], "arrival_law": [0.5, 0.5]})");
  const auto p = params_from_json(j);
  EXPECT_EQ(p.C(), 2u);
  EXPECT_EQ(p.D(), 2u);
  EXPECT_EQ(p.a(1, 0), 3.0);
  EXPECT_EQ(p.affinity_cap, 4.0);
}

TEST(Json, MalformedDocumentsRaiseValidationError) {
  EXPECT_THROW(params_from_json(nlohmann::json::parse(R"({"offline_scale": 10})")), ValidationError);
  EXPECT_THROW(params_from_json(nlohmann::json::parse(
                   R"({"offline_scale": 10, "horizon_factor": 1, "affinity": [[1, 2], [3]],
                       "budgets": [0.5, 0.5], "arrival_law": [0.5, 0.5]})")),
               ValidationError);
}

TEST(Rng, StreamsAreDistinctAndReproducible) {
  Engine a = make_stream(5, Stream::arrivals), b = make_stream(5, Stream::arrivals);
  Engine e = make_stream(5, Stream::edges);
  const auto x = a();
  EXPECT_EQ(x, b());
  EXPECT_NE(x, e());
}

TEST(Rng, UniformIndexIsUnbiased) {
  Engine rng(11);
  std::vector<int> hits(3, 0);
  for (int i = 0; i < 90000; ++i) ++hits[uniform_index(rng, 3)];
  for (int h : hits) EXPECT_NEAR(h / 90000.0, 1.0 / 3.0, 0.01);
  for (int i = 0; i < 1000; ++i) {
    const double u = uniform01(rng);
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}
