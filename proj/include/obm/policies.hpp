#pragma once

// Class-selection rules. Every rule looks only at (matched counts,
// capacities, params, arrival class) plus, for LearnedBalance, the feedback
// table owned by the run. Ties always go to the lowest class index.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "obm/estimator.hpp"
#include "obm/model.hpp"
#include "obm/rng.hpp"
#include "obm/transport.hpp"

namespace obm {

struct MyopicPolicy {
  QPlan plan;
};
struct BalancePolicy {};
struct RealBalancePolicy {};
struct LearnedBalancePolicy {
  std::int64_t explore_horizon = 0;
  double delta = 0.05;
  // Replace the estimate by the exact failure probability (known-a oracle).
  bool oracle = false;
};
struct UniformPolicy {};

using Policy =
    std::variant<MyopicPolicy, BalancePolicy, RealBalancePolicy, LearnedBalancePolicy, UniformPolicy>;

inline std::string policy_name(const Policy& p) {
  struct {
    std::string operator()(const MyopicPolicy&) const { return "myopic"; }
    std::string operator()(const BalancePolicy&) const { return "balance"; }
    std::string operator()(const RealBalancePolicy&) const { return "real-balance"; }
    std::string operator()(const LearnedBalancePolicy&) const { return "learned-balance"; }
    std::string operator()(const UniformPolicy&) const { return "uniform"; }
  } v;
  return std::visit(v, p);
}

/// Exploration length ceil(T^{(q+3)/4}).
inline std::int64_t explore_horizon(std::int64_t T, double q) {
  if (!(q > 0.0 && q < 1.0)) throw std::domain_error("explore_horizon: need 0 < q < 1");
  if (T <= 0) return 0;
  const double v = std::pow(static_cast<double>(T), (q + 3.0) / 4.0);
  return std::min<std::int64_t>(T, static_cast<std::int64_t>(std::ceil(v - 1e-9)));
}

inline std::size_t myopic_choose(const QPlan& q, const ModelParams& p, std::size_t d, Engine& rng) {
  if (p.arrival_law[d] <= 0.0) throw std::domain_error("myopic_choose: arrival class has zero mass");
  const double u = uniform01(rng);
  double cum = 0.0;
  std::size_t last = 0;
  for (std::size_t c = 0; c < p.C(); ++c) {
    const double w = q.plan(c, d);
    if (w <= 0.0) continue;
    cum += w;
    last = c;
    if (u < cum) return c;
  }
  return last;
}

/// Probability that an arrival finds at least one neighbour among the free
/// nodes of class c, averaged over the arrival law.
inline double balance_score(const ModelParams& p, std::int64_t matched, std::int64_t capacity,
                            std::size_t c) {
  const std::int64_t free = capacity - matched;
  if (free <= 0) return 0.0;
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    if (p.arrival_law[d] <= 0.0) continue;
    s += -std::expm1(static_cast<double>(free) * std::log1p(-p.edge_probability(c, d))) *
         p.arrival_law[d];
  }
  return s;
}

inline std::size_t balance_choose(const ModelParams& p, std::span<const std::int64_t> matched,
                                  std::span<const std::int64_t> capacity) {
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t c = 0; c < p.C(); ++c) {
    const double s = balance_score(p, matched[c], capacity[c], c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

/// Balance restricted to classes that still have free nodes.
inline std::optional<std::size_t> real_balance_choose(const ModelParams& p,
                                                      std::span<const std::int64_t> matched,
                                                      std::span<const std::int64_t> capacity) {
  std::optional<std::size_t> best;
  double best_score = -1.0;
  for (std::size_t c = 0; c < p.C(); ++c) {
    if (matched[c] >= capacity[c]) continue;
    const double s = balance_score(p, matched[c], capacity[c], c);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

/// Memo of the last estimate per (c, d); invalidated by the table version.
class EstimateCache {
 public:
  EstimateCache() = default;
  EstimateCache(std::size_t C, std::size_t D) : D_(D), entries_(C * D) {}

  /// Returns the memo for (c, d) if it matches (m, version), else stores
  /// f(previous value or -1).
  template <class Compute>
  double get(std::size_t c, std::size_t d, std::int64_t m, std::uint64_t version, Compute&& f) {
    Entry& e = entries_[c * D_ + d];
    if (!e.valid || e.m != m || e.version != version) {
      e.value = f(e.valid ? e.value : -1.0);
      e.m = m;
      e.version = version;
      e.valid = true;
    }
    return e.value;
  }

 private:
  struct Entry {
    bool valid = false;
    std::int64_t m = 0;
    std::uint64_t version = 0;
    double value = 1.0;
  };
  std::size_t D_ = 0;
  std::vector<Entry> entries_;
};

/// Commit-phase score sum_d (1 - Dhat(c,d,M_c)) nu(d). Pairs with no data
/// keep Dhat = 1 and contribute nothing.
inline double learned_score(const ModelParams& p, const LearnedBalancePolicy& pol,
                            std::int64_t matched, std::int64_t capacity, std::size_t c,
                            const CountsTable* counts, EstimateCache* cache) {
  if (matched >= capacity) return 0.0;
  double s = 0.0;
  for (std::size_t d = 0; d < p.D(); ++d) {
    if (p.arrival_law[d] <= 0.0) continue;
    if (pol.oracle) {
      // Same arithmetic as balance_score so that the argmax coincides exactly.
      s += -std::expm1(static_cast<double>(capacity - matched) *
                       std::log1p(-p.edge_probability(c, d))) *
           p.arrival_law[d];
      continue;
    }
    if (counts == nullptr) throw std::logic_error("learned_score: feedback table required");
    auto compute = [&](double guess) {
      auto r = dhat(*counts, p, c, d, matched, pol.delta, guess);
      return r ? r->dhat : 1.0;
    };
    const double dh =
        cache ? cache->get(c, d, matched, counts->version(c, d), compute) : compute(-1.0);
    s += (1.0 - dh) * p.arrival_law[d];
  }
  return s;
}

inline std::size_t uniform_choose(const ModelParams& p, Engine& rng) {
  return static_cast<std::size_t>(uniform_index(rng, p.C()));
}

/// Explore uniformly for steps t <= explore_horizon (t is 1-based), then
/// exploit the estimated Balance score.
inline std::size_t learned_balance_choose(const ModelParams& p, const LearnedBalancePolicy& pol,
                                          std::span<const std::int64_t> matched,
                                          std::span<const std::int64_t> capacity, std::int64_t t,
                                          const CountsTable* counts, EstimateCache* cache,
                                          Engine& rng) {
  if (t <= pol.explore_horizon) return uniform_choose(p, rng);
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t c = 0; c < p.C(); ++c) {
    const double s = learned_score(p, pol, matched[c], capacity[c], c, counts, cache);
    if (s > best_score) {
      best_score = s;
      best = c;
    }
  }
  return best;
}

}  // namespace obm
