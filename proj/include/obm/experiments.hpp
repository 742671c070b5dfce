#pragma once

// Multi-seed studies: fluid-limit convergence, backend equivalence,
// estimator coverage, regret scaling and the four-policy comparison.
// Seeds fan out to worker threads; results are always reduced in seed order,
// so reports do not depend on the thread count.

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "obm/engine.hpp"
#include "obm/estimator.hpp"
#include "obm/fluid_balance.hpp"
#include "obm/fluid_myopic.hpp"
#include "obm/model.hpp"
#include "obm/numerics.hpp"
#include "obm/policies.hpp"
#include "obm/rng.hpp"
#include "obm/transport.hpp"

namespace obm {

enum class PolicyKind { myopic, balance, real_balance, learned_balance, uniform };

inline std::string to_string(PolicyKind k) {
  switch (k) {
    case PolicyKind::myopic: return "myopic";
    case PolicyKind::balance: return "balance";
    case PolicyKind::real_balance: return "real-balance";
    case PolicyKind::learned_balance: return "learned-balance";
    case PolicyKind::uniform: return "uniform";
  }
  return "?";
}

inline PolicyKind parse_policy_kind(const std::string& s) {
  for (auto k : {PolicyKind::myopic, PolicyKind::balance, PolicyKind::real_balance,
                 PolicyKind::learned_balance, PolicyKind::uniform})
    if (to_string(k) == s) return k;
  throw std::invalid_argument("unknown policy '" + s + "'");
}

struct PolicyOptions {
  double q = 0.5;        // exploration exponent for LearnedBalance
  double delta = 0.05;
  std::optional<std::int64_t> explore_override;
  bool oracle = false;
};

inline Policy make_policy(const ModelParams& p, PolicyKind kind, const PolicyOptions& o = {}) {
  switch (kind) {
    case PolicyKind::myopic: return MyopicPolicy{solve_qstar(p)};
    case PolicyKind::balance: return BalancePolicy{};
    case PolicyKind::real_balance: return RealBalancePolicy{};
    case PolicyKind::learned_balance: {
      LearnedBalancePolicy l;
      l.explore_horizon = o.explore_override ? *o.explore_override : explore_horizon(p.horizon(), o.q);
      l.delta = o.delta;
      l.oracle = o.oracle;
      return l;
    }
    case PolicyKind::uniform: return UniformPolicy{};
  }
  throw std::logic_error("make_policy: unhandled kind");
}

/// Worker count: OBM_THREADS if set, else hardware concurrency.
inline unsigned default_threads() {
  if (const char* env = std::getenv("OBM_THREADS")) {
    const int v = std::atoi(env);
    if (v > 0) return static_cast<unsigned>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// out[i] = f(i) for i < n, computed on up to `threads` workers.
template <class F>
auto parallel_map(std::size_t n, F&& f, unsigned threads = 0) {
  using R = std::invoke_result_t<F&, std::size_t>;
  std::vector<std::optional<R>> slots(n);
  if (threads == 0) threads = default_threads();
  threads = static_cast<unsigned>(std::min<std::size_t>(threads, std::max<std::size_t>(n, 1)));
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        slots[i].emplace(f(i));
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
    }
  };
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  std::vector<R> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

inline std::vector<std::uint64_t> seed_range(std::uint64_t first, std::size_t count) {
  std::vector<std::uint64_t> s(count);
  for (std::size_t i = 0; i < count; ++i) s[i] = first + i;
  return s;
}

/// Fluid limit on a trajectory grid (arrival counts), in fluid units:
/// [sample][class].
inline std::vector<std::vector<double>> limit_curve(const ModelParams& p, PolicyKind kind,
                                                    const std::vector<std::int64_t>& times) {
  std::vector<double> grid(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) grid[i] = static_cast<double>(times[i]) / p.N();
  std::vector<std::vector<double>> out(times.size(), std::vector<double>(p.C(), 0.0));
  if (kind == PolicyKind::myopic) {
    const auto fl = solve_ode(p, solve_qstar(p), grid);
    for (std::size_t i = 0; i < grid.size(); ++i)
      for (std::size_t c = 0; c < p.C(); ++c) out[i][c] = fl.y[c][i];
    return out;
  }
  if (kind == PolicyKind::uniform) throw std::invalid_argument("limit_curve: no fluid limit for uniform");
  const BalanceFluid bf(p);
  for (std::size_t i = 0; i < grid.size(); ++i) out[i] = bf.m_star(std::min(grid[i], p.horizon_factor));
  return out;
}

/// sup over samples of |M_c(t)/N - limit_c(t/N)| per class.
inline std::vector<double> sup_deviation(const Trajectory& tr,
                                         const std::vector<std::vector<double>>& limit, double N) {
  const std::size_t C = tr.capacity.size();
  std::vector<double> dev(C, 0.0);
  for (std::size_t i = 0; i < tr.times.size(); ++i)
    for (std::size_t c = 0; c < C; ++c)
      dev[c] = std::max(dev[c], std::abs(static_cast<double>(tr.counts[i][c]) / N - limit[i][c]));
  return dev;
}

/// Same for a mean trajectory.
inline double band_gap(const TrajectoryBand& band, const std::vector<std::vector<double>>& limit,
                       double N) {
  double g = 0.0;
  for (std::size_t i = 0; i < band.times.size(); ++i)
    for (std::size_t c = 0; c < band.mean[i].size(); ++c)
      g = std::max(g, std::abs(band.mean[i][c] / N - limit[i][c]));
  return g;
}

// ---- convergence --------------------------------------------------------------

struct ConvergencePoint {
  std::int64_t N = 0;
  std::vector<std::vector<double>> deviation;  // [seed][class]
  std::vector<double> max_deviation;           // [seed]
  double mean_max_deviation = 0.0;
  double mean_trajectory_gap = 0.0;            // sup gap of the seed-averaged trajectory
  std::vector<double> bound;                   // [class]
  double failure_prob = 0.0;
};

struct ConvergenceReport {
  std::string policy;
  std::vector<std::uint64_t> seeds;
  std::vector<ConvergencePoint> points;
  numerics::LineFit fit;  // log mean_max_deviation vs log N
};

struct ConvergenceOptions {
  RunOptions run;
  PolicyOptions policy;
  double epsilon_exponent = 0.25;  // Balance bound evaluated at eps = N^{-exponent}
  unsigned threads = 0;
};

inline ModelParams with_scale(ModelParams p, std::int64_t N) {
  p.offline_scale = N;
  validate(p);
  return p;
}

inline ConvergenceReport convergence_study(const ModelParams& tmpl, PolicyKind kind,
                                           const std::vector<std::int64_t>& N_list,
                                           const std::vector<std::uint64_t>& seeds,
                                           const ConvergenceOptions& opt = {}) {
  if (N_list.size() < 2) throw std::invalid_argument("convergence_study: need at least two N values");
  for (std::size_t i = 1; i < N_list.size(); ++i)
    if (N_list[i] <= N_list[i - 1]) throw std::invalid_argument("convergence_study: N_list must increase");
  if (seeds.empty()) throw std::invalid_argument("convergence_study: no seeds");
  ConvergenceReport rep;
  rep.policy = to_string(kind);
  rep.seeds = seeds;
  std::vector<double> lx, ly;
  for (const std::int64_t N : N_list) {
    const ModelParams p = with_scale(tmpl, N);
    const Policy pol = make_policy(p, kind, opt.policy);
    auto trs = parallel_map(seeds.size(), [&](std::size_t i) { return run(p, pol, seeds[i], opt.run); },
                            opt.threads);
    const auto limit = limit_curve(p, kind, trs.front().times);
    ConvergencePoint pt;
    pt.N = N;
    for (const auto& tr : trs) {
      pt.deviation.push_back(sup_deviation(tr, limit, p.N()));
      pt.max_deviation.push_back(*std::max_element(pt.deviation.back().begin(), pt.deviation.back().end()));
    }
    double s = 0.0;
    for (double v : pt.max_deviation) s += v;
    pt.mean_max_deviation = s / static_cast<double>(pt.max_deviation.size());
    pt.mean_trajectory_gap = band_gap(average_trajectories(trs), limit, p.N());
    if (kind == PolicyKind::myopic) {
      const auto L = myopic_rates(p, solve_qstar(p));
      for (std::size_t c = 0; c < p.C(); ++c) {
        const auto b = wormald_bound(p, L[c], p.N());
        pt.bound.push_back(b.deviation);
        pt.failure_prob = std::max(pt.failure_prob, b.failure_prob);
      }
    } else if (kind != PolicyKind::uniform) {
      const auto b = balance_deviation_bound(p, p.N(), std::pow(p.N(), -opt.epsilon_exponent));
      pt.bound = b.bound;
      pt.failure_prob = b.failure_prob;
    }
    lx.push_back(std::log(static_cast<double>(N)));
    ly.push_back(std::log(std::max(pt.mean_max_deviation, 1e-300)));
    rep.points.push_back(std::move(pt));
  }
  rep.fit = numerics::fit_line(lx, ly);
  return rep;
}

/// Fraction of adjacent N pairs whose value strictly decreases.
template <class Get>
double decreasing_fraction(const ConvergenceReport& r, Get&& get) {
  if (r.points.size() < 2) return 1.0;
  std::size_t ok = 0;
  for (std::size_t i = 1; i < r.points.size(); ++i)
    if (get(r.points[i]) < get(r.points[i - 1])) ++ok;
  return static_cast<double>(ok) / static_cast<double>(r.points.size() - 1);
}

// ---- backend equivalence -----------------------------------------------------

struct BackendComparison {
  std::string policy;
  std::size_t samples = 0;
  std::vector<double> tv;  // per class, between final-count marginals
  double max_tv = 0.0;
};

/// Total variation between the empirical laws of the final count of each
/// class under the two backends. With `shared_seeds` both backends run the
/// same seeds (common arrival and policy streams; the match randomness
/// differs); otherwise the graph backend uses the next block of seeds and
/// the two samples are independent.
inline BackendComparison backend_equivalence(const ModelParams& p, PolicyKind kind, std::size_t samples,
                                             std::uint64_t first_seed = 0, bool shared_seeds = true,
                                             const PolicyOptions& po = {}, unsigned threads = 0) {
  const Policy pol = make_policy(p, kind, po);
  auto finals = [&](Backend b, std::uint64_t base) {
    RunOptions o;
    o.backend = b;
    o.sample_stride = p.horizon();
    return parallel_map(samples, [&](std::size_t i) { return run(p, pol, base + i, o).final_counts(); },
                        threads);
  };
  const auto a = finals(Backend::counts, first_seed);
  const auto b = finals(Backend::graph, shared_seeds ? first_seed : first_seed + samples);
  BackendComparison out;
  out.policy = to_string(kind);
  out.samples = samples;
  out.tv.assign(p.C(), 0.0);
  for (std::size_t c = 0; c < p.C(); ++c) {
    std::map<std::int64_t, double> diff;
    for (const auto& v : a) diff[v[c]] += 1.0;
    for (const auto& v : b) diff[v[c]] -= 1.0;
    double s = 0.0;
    for (const auto& [k, d] : diff) s += std::abs(d);
    out.tv[c] = 0.5 * s / static_cast<double>(samples);
    out.max_tv = std::max(out.max_tv, out.tv[c]);
  }
  return out;
}

// ---- estimator coverage ------------------------------------------------------

struct CoverageReport {
  std::int64_t t_total = 0;
  std::size_t trials = 0;
  double coverage = 0.0;
  double mean_abs_error = 0.0;
  double radius = 0.0;
  double max_roundtrip_error = 0.0;  // |g(g^{-1}(Theta)) - Theta| on unclamped estimates
  std::size_t clamped = 0;
};

/// Synthetic feeds: t_total observations spread uniformly over the pooling
/// window of (c, d, m), each a failure with the exact probability
/// D(c, d, m'). Checks |Dhat - D(m)| <= radius per trial.
inline CoverageReport estimator_coverage(const ModelParams& p, std::size_t c, std::size_t d,
                                         std::int64_t m, std::int64_t t_total, std::size_t trials,
                                         double delta, std::uint64_t seed) {
  Engine unused;
  const auto caps = realize_offline_counts(p, OfflineMode::rounding, unused);
  const std::int64_t cap = caps[c];
  const Interval w = neighborhood(m, cap);
  const double truth = d_exact(p, c, d, m, cap);
  struct Trial {
    bool covered;
    double err;
    double roundtrip;
    bool clamped;
  };
  auto one = [&](std::size_t i) {
    Engine rng = make_stream(seed + i, Stream::instance);
    CountsTable counts(p.C(), p.D(), caps);
    for (std::int64_t k = 0; k < t_total; ++k) {
      const std::int64_t mk = w.lo + static_cast<std::int64_t>(uniform_index(rng, static_cast<std::uint64_t>(w.size())));
      const bool fail = uniform01(rng) < d_exact(p, c, d, mk, cap);
      counts.record(c, d, mk, !fail);
    }
    const auto r = dhat(counts, p, c, d, m, delta);
    Trial t{};
    t.err = std::abs(r->dhat - truth);
    t.covered = t.err <= r->radius;
    t.clamped = r->clamped;
    if (!r->clamped) {
      const auto weights = pooling_weights(counts, c, d, m);
      const double lower = dhat_lower_bound(p, cap);
      t.roundtrip = std::abs(g_eval(r->dhat, weights, lower) - r->theta);
    }
    return t;
  };
  const auto res = parallel_map(trials, one);
  CoverageReport rep;
  rep.t_total = t_total;
  rep.trials = trials;
  rep.radius = confidence_radius(p.affinity_cap, delta, t_total);
  std::size_t covered = 0;
  for (const auto& t : res) {
    covered += t.covered;
    rep.mean_abs_error += t.err;
    rep.max_roundtrip_error = std::max(rep.max_roundtrip_error, t.roundtrip);
    rep.clamped += t.clamped;
  }
  rep.coverage = static_cast<double>(covered) / static_cast<double>(trials);
  rep.mean_abs_error /= static_cast<double>(trials);
  return rep;
}

// ---- regret ------------------------------------------------------------------

struct RegretRecord {
  std::int64_t T = 0;
  std::int64_t N = 0;
  double q = 0.5;
  std::int64_t explore_horizon = 0;
  std::vector<double> regret;  // per seed
  double mean = 0.0;
  double stddev = 0.0;
  bool paired = true;          // arrival digests of both policies agree on every seed
};

struct RegretReport {
  double q = 0.5;
  std::vector<RegretRecord> records;
  numerics::LineFit fit;       // log max(mean, 1) vs log T
  double exponent = 0.0;
  std::size_t clipped = 0;     // means below 1 that were clipped
};

/// Parameters with horizon exactly T: N = round(T / alpha), alpha adjusted to T / N.
inline ModelParams at_horizon(ModelParams p, std::int64_t T) {
  const std::int64_t N = std::max<std::int64_t>(1, std::llround(static_cast<double>(T) / p.horizon_factor));
  p.offline_scale = N;
  p.horizon_factor = static_cast<double>(T) / static_cast<double>(N);
  validate(p);
  return p;
}

inline RegretReport regret_experiment(const ModelParams& tmpl, double q,
                                      const std::vector<std::int64_t>& T_list,
                                      const std::vector<std::uint64_t>& seeds, double delta = 0.05,
                                      unsigned threads = 0) {
  if (!(q > 0.0 && q < 1.0)) throw std::invalid_argument("regret_experiment: need 0 < q < 1");
  if (T_list.size() < 2) throw std::invalid_argument("regret_experiment: need at least two horizons");
  RegretReport rep;
  rep.q = q;
  std::vector<double> lx, ly;
  for (const std::int64_t T : T_list) {
    const ModelParams p = at_horizon(tmpl, T);
    PolicyOptions po;
    po.q = q;
    po.delta = delta;
    const Policy learned = make_policy(p, PolicyKind::learned_balance, po);
    RegretRecord r;
    r.T = T;
    r.N = p.offline_scale;
    r.q = q;
    r.explore_horizon = std::get<LearnedBalancePolicy>(learned).explore_horizon;
    RunOptions o;
    o.sample_stride = T;
    struct Pair {
      double regret;
      bool paired;
    };
    const auto res = parallel_map(
        seeds.size(),
        [&](std::size_t i) {
          const auto a = run(p, BalancePolicy{}, seeds[i], o);
          const auto b = run(p, learned, seeds[i], o);
          return Pair{static_cast<double>(a.total_matched() - b.total_matched()),
                      a.arrival_digest == b.arrival_digest};
        },
        threads);
    double s = 0.0;
    for (const auto& x : res) {
      r.regret.push_back(x.regret);
      r.paired = r.paired && x.paired;
      s += x.regret;
    }
    r.mean = s / static_cast<double>(res.size());
    double v = 0.0;
    for (double x : r.regret) v += (x - r.mean) * (x - r.mean);
    r.stddev = std::sqrt(v / static_cast<double>(res.size()));
    if (r.mean < 1.0) ++rep.clipped;
    lx.push_back(std::log(static_cast<double>(T)));
    ly.push_back(std::log(std::max(r.mean, 1.0)));
    rep.records.push_back(std::move(r));
  }
  rep.fit = numerics::fit_line(lx, ly);
  rep.exponent = rep.fit.slope;
  return rep;
}

// ---- four-policy comparison --------------------------------------------------

struct Figure1Config {
  std::int64_t N = 5000;
  std::size_t C = 5;
  std::size_t D = 6;
  double alpha = 10.0;              // T = alpha N = 50000
  std::uint64_t instance_seed = 2024;
  double affinity_lo = 0.5;
  double affinity_hi = 5.0;
  std::vector<std::uint64_t> seeds = seed_range(0, 20);
  double q = 0.5;
  double delta = 0.05;
  std::size_t grid_points = 200;    // fluid curves and aggregate rows
  unsigned threads = 0;
};

/// Symmetric Dirichlet(1) draw from normalised exponentials.
inline std::vector<double> flat_dirichlet(Engine& rng, std::size_t n) {
  std::vector<double> v(n);
  double s = 0.0;
  for (auto& x : v) {
    x = -std::log1p(-uniform01(rng));
    s += x;
  }
  for (auto& x : v) x /= s;
  return v;
}

/// Default instance: affinities uniform on [lo, hi], budgets and arrival law
/// flat Dirichlet, all from the instance stream of `instance_seed`.
inline ModelParams figure1_instance(const Figure1Config& cfg) {
  Engine rng = make_stream(cfg.instance_seed, Stream::instance);
  ModelParams p;
  p.num_offline_classes = cfg.C;
  p.num_online_classes = cfg.D;
  p.offline_scale = cfg.N;
  p.horizon_factor = cfg.alpha;
  p.affinity = Matrix(cfg.C, cfg.D);
  for (std::size_t c = 0; c < cfg.C; ++c)
    for (std::size_t d = 0; d < cfg.D; ++d)
      p.affinity(c, d) = cfg.affinity_lo + (cfg.affinity_hi - cfg.affinity_lo) * uniform01(rng);
  p.affinity_cap = cfg.affinity_hi;
  p.budgets = flat_dirichlet(rng, cfg.C);
  p.arrival_law = flat_dirichlet(rng, cfg.D);
  normalize_simplices(p);
  validate(p);
  return p;
}

struct PolicySummary {
  std::string policy;
  TrajectoryBand band;
  std::vector<double> totals;  // per seed, final total matches
  double mean_total = 0.0;
};

struct Figure1Result {
  ModelParams params;
  std::vector<PolicySummary> policies;  // myopic, balance, real-balance, learned-balance
  std::vector<std::vector<double>> m_star;  // [sample][class] on the trajectory grid
  std::vector<std::vector<double>> ode;     // [sample][class]
  double balance_gap = 0.0;     // sup gap of mean Balance trajectory vs m*, fluid units
  double myopic_gap = 0.0;      // same for Myopic vs the ODE
  std::vector<double> myopic_bound;
  bool saturated = false;       // some class exhausted in m* before alpha
};

inline const PolicySummary& find_policy(const Figure1Result& r, const std::string& name) {
  for (const auto& s : r.policies)
    if (s.policy == name) return s;
  throw std::out_of_range("no policy " + name);
}

inline Figure1Result figure1_repro(const ModelParams& p, const Figure1Config& cfg) {
  Figure1Result out;
  out.params = p;
  RunOptions o;
  o.sample_stride = std::max<std::int64_t>(1, p.horizon() / static_cast<std::int64_t>(cfg.grid_points));
  PolicyOptions po;
  po.q = cfg.q;
  po.delta = cfg.delta;
  for (auto kind : {PolicyKind::myopic, PolicyKind::balance, PolicyKind::real_balance,
                    PolicyKind::learned_balance}) {
    const Policy pol = make_policy(p, kind, po);
    auto trs = parallel_map(cfg.seeds.size(), [&](std::size_t i) { return run(p, pol, cfg.seeds[i], o); },
                            cfg.threads);
    PolicySummary s;
    s.policy = to_string(kind);
    for (const auto& t : trs) {
      s.totals.push_back(static_cast<double>(t.total_matched()));
      s.mean_total += s.totals.back();
    }
    s.mean_total /= static_cast<double>(trs.size());
    s.band = average_trajectories(trs);
    out.policies.push_back(std::move(s));
  }
  const auto& times = out.policies.front().band.times;
  out.m_star = limit_curve(p, PolicyKind::balance, times);
  out.ode = limit_curve(p, PolicyKind::myopic, times);
  out.balance_gap = band_gap(find_policy(out, "balance").band, out.m_star, p.N());
  out.myopic_gap = band_gap(find_policy(out, "myopic").band, out.ode, p.N());
  const auto L = myopic_rates(p, solve_qstar(p));
  for (std::size_t c = 0; c < p.C(); ++c) out.myopic_bound.push_back(wormald_bound(p, L[c], p.N()).deviation);
  const BalanceFluid bf(p);
  out.saturated = bf.saturated(p.horizon_factor);
  return out;
}

}  // namespace obm
