#pragma once

// Online arrival process. Each step draws an arrival class, asks the policy
// for an offline class and tries to match into it.
//
// Two backends produce the same law on matched-count trajectories:
//  * counts: only per-class free counts are tracked; the step matches iff at
//    least one of the `free` candidate edges is present, i.e. with
//    probability 1 - (1 - a/N)^free, decided by one edge-stream uniform;
//  * graph: every free node of the chosen class gets its own Bernoulli(a/N)
//    edge and one neighbour is removed uniformly at random.
// Edges of an arrival are fresh and never revisited (matched nodes leave
// for good), so sampling them lazily inside the chosen class is exact.

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "obm/estimator.hpp"
#include "obm/model.hpp"
#include "obm/policies.hpp"
#include "obm/rng.hpp"

namespace obm {

enum class Backend { counts, graph };

struct MatchOutcome {
  std::optional<std::size_t> chosen;  // empty when the policy abstains
  std::size_t arrival = 0;
  bool matched = false;
};

/// One logged decision: step t (1-based), chosen class, arrival class,
/// matched count of the chosen class before the step, and the outcome.
struct FeedbackEvent {
  std::int64_t t = 0;
  std::size_t chosen = 0;
  std::size_t arrival = 0;
  std::int64_t matched_before = 0;
  bool matched = false;
};

class SimState {
 public:
  SimState(const ModelParams& p, std::vector<std::int64_t> capacity, std::uint64_t seed,
           Backend backend, bool with_feedback)
      : matched(p.C(), 0),
        capacity(std::move(capacity)),
        arrivals(make_stream(seed, Stream::arrivals)),
        edges(make_stream(seed, Stream::edges)),
        policy_rng(make_stream(seed, Stream::policy)),
        graph_rng(make_stream(seed, Stream::graph)) {
    if (this->capacity.size() != p.C()) throw std::invalid_argument("SimState: capacity length");
    if (with_feedback) {
      feedback.emplace(p.C(), p.D(), this->capacity);
      cache = EstimateCache(p.C(), p.D());
    }
    if (backend == Backend::graph) {
      free_nodes.resize(p.C());
      std::int64_t id = 0;
      for (std::size_t c = 0; c < p.C(); ++c)
        for (std::int64_t k = 0; k < this->capacity[c]; ++k) free_nodes[c].push_back(id++);
    }
  }

  std::int64_t time = 0;
  std::vector<std::int64_t> matched;
  std::vector<std::int64_t> capacity;
  Engine arrivals, edges, policy_rng, graph_rng;
  std::optional<CountsTable> feedback;
  EstimateCache cache;
  std::vector<std::vector<std::int64_t>> free_nodes;  // graph backend only
  std::uint64_t arrival_digest = 0xcbf29ce484222325ULL;   // FNV-1a of arrival classes
  std::vector<FeedbackEvent>* event_log = nullptr;
};

namespace engine_detail {

inline std::optional<std::size_t> decide(SimState& s, const Policy& policy, const ModelParams& p,
                                         std::size_t d, std::int64_t t) {
  struct Visitor {
    SimState& s;
    const ModelParams& p;
    std::size_t d;
    std::int64_t t;
    std::optional<std::size_t> operator()(const MyopicPolicy& m) const {
      return myopic_choose(m.plan, p, d, s.policy_rng);
    }
    std::optional<std::size_t> operator()(const BalancePolicy&) const {
      return balance_choose(p, s.matched, s.capacity);
    }
    std::optional<std::size_t> operator()(const RealBalancePolicy&) const {
      return real_balance_choose(p, s.matched, s.capacity);
    }
    std::optional<std::size_t> operator()(const LearnedBalancePolicy& l) const {
      return learned_balance_choose(p, l, s.matched, s.capacity, t,
                                    s.feedback ? &*s.feedback : nullptr, &s.cache, s.policy_rng);
    }
    std::optional<std::size_t> operator()(const UniformPolicy&) const {
      return uniform_choose(p, s.policy_rng);
    }
  };
  return std::visit(Visitor{s, p, d, t}, policy);
}

}  // namespace engine_detail

inline MatchOutcome step(SimState& s, const Policy& policy, const ModelParams& p, Backend backend) {
  const std::int64_t t = s.time + 1;
  MatchOutcome out;
  out.arrival = sample_arrival_class(p, s.arrivals);
  s.arrival_digest = (s.arrival_digest ^ (out.arrival + 1)) * 0x100000001b3ULL;
  const double edge_u = uniform01(s.edges);  // drawn every step so streams stay aligned
  out.chosen = engine_detail::decide(s, policy, p, out.arrival, t);
  if (out.chosen) {
    const std::size_t c = *out.chosen;
    const std::int64_t before = s.matched[c];
    const std::int64_t free = s.capacity[c] - before;
    const double prob = p.edge_probability(c, out.arrival);
    if (free > 0 && prob > 0.0) {
      if (backend == Backend::counts) {
        const double hit = -std::expm1(static_cast<double>(free) * std::log1p(-prob));
        out.matched = edge_u < hit;
      } else {
        auto& pool = s.free_nodes[c];
        std::vector<std::size_t> neighbours;
        for (std::size_t k = 0; k < pool.size(); ++k)
          if (uniform01(s.graph_rng) < prob) neighbours.push_back(k);
        if (!neighbours.empty()) {
          const std::size_t pick =
              neighbours[uniform_index(s.graph_rng, neighbours.size())];
          pool[pick] = pool.back();
          pool.pop_back();
          out.matched = true;
        }
      }
    }
    if (s.feedback) s.feedback->record(c, out.arrival, before, out.matched);
    if (s.event_log) s.event_log->push_back({t, c, out.arrival, before, out.matched});
    if (out.matched) ++s.matched[c];
    assert(s.matched[c] <= s.capacity[c]);
  }
  s.time = t;
  return out;
}

struct Trajectory {
  std::vector<std::int64_t> times;
  std::vector<std::vector<std::int64_t>> counts;  // [sample][class]
  std::vector<std::int64_t> capacity;
  std::uint64_t seed = 0;
  std::string policy;
  std::uint64_t arrival_digest = 0;

  const std::vector<std::int64_t>& final_counts() const { return counts.back(); }
  std::int64_t total_matched() const {
    std::int64_t s = 0;
    for (auto v : counts.back()) s += v;
    return s;
  }
};

struct RunOptions {
  Backend backend = Backend::counts;
  OfflineMode offline = OfflineMode::rounding;
  std::int64_t sample_stride = 0;  // 0: max(1, T/1000)
  std::vector<FeedbackEvent>* event_log = nullptr;
};

inline std::int64_t default_stride(std::int64_t T) { return std::max<std::int64_t>(1, T / 1000); }

/// Per-class capacities for a run: rounding is seed independent, sampled
/// draws from the seed's offline stream.
inline std::vector<std::int64_t> run_capacities(const ModelParams& p, std::uint64_t seed,
                                                OfflineMode mode) {
  Engine rng = make_stream(seed, Stream::offline);
  return realize_offline_counts(p, mode, rng);
}

inline Trajectory run(const ModelParams& p, const Policy& policy, std::uint64_t seed,
                      const RunOptions& opt = {}) {
  const std::int64_t T = p.horizon();
  const std::int64_t stride = opt.sample_stride > 0 ? opt.sample_stride : default_stride(T);
  const bool learned = std::holds_alternative<LearnedBalancePolicy>(policy);
  SimState s(p, run_capacities(p, seed, opt.offline), seed, opt.backend, learned);
  s.event_log = opt.event_log;

  Trajectory tr;
  tr.seed = seed;
  tr.policy = policy_name(policy);
  tr.capacity = s.capacity;
  tr.times.push_back(0);
  tr.counts.push_back(s.matched);
  while (s.time < T) {
    step(s, policy, p, opt.backend);
    if (s.time % stride == 0 || s.time == T) {
      tr.times.push_back(s.time);
      tr.counts.push_back(s.matched);
    }
  }
  tr.arrival_digest = s.arrival_digest;
  return tr;
}

/// Pointwise mean and population standard deviation (divide by n).
struct TrajectoryBand {
  std::vector<std::int64_t> times;
  std::vector<std::vector<double>> mean;    // [sample][class]
  std::vector<std::vector<double>> stddev;  // [sample][class]
  std::size_t runs = 0;
};

inline TrajectoryBand average_trajectories(const std::vector<Trajectory>& trs) {
  if (trs.empty()) throw std::invalid_argument("average_trajectories: no trajectories");
  const auto& grid = trs.front().times;
  const std::size_t C = trs.front().counts.front().size();
  for (const auto& t : trs) {
    if (t.times != grid) throw std::invalid_argument("average_trajectories: mismatched grids");
    if (t.counts.front().size() != C) throw std::invalid_argument("average_trajectories: class count");
  }
  TrajectoryBand band;
  band.times = grid;
  band.runs = trs.size();
  const double n = static_cast<double>(trs.size());
  band.mean.assign(grid.size(), std::vector<double>(C, 0.0));
  band.stddev.assign(grid.size(), std::vector<double>(C, 0.0));
  for (std::size_t i = 0; i < grid.size(); ++i) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (const auto& t : trs) s += static_cast<double>(t.counts[i][c]);
      const double m = s / n;
      double v = 0.0;
      for (const auto& t : trs) {
        const double dv = static_cast<double>(t.counts[i][c]) - m;
        v += dv * dv;
      }
      band.mean[i][c] = m;
      band.stddev[i][c] = std::sqrt(v / n);
    }
  }
  return band;
}

}  // namespace obm
