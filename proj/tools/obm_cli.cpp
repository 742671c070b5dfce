// obm: command-line front end for the simulator and fluid toolkit.
//
// Every subcommand reads an optional JSON config (instance under "model" or
// at the top level), lets flags override it, writes the resolved config to
// the output directory and stamps its hash into each CSV header.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "obm/obm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace obm;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config_path;
  std::string out_dir;
  std::optional<std::int64_t> N;
  std::optional<double> alpha;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError("document", path + ": " + e.what());
  }
}

json load_config(const Common& c) { return c.config_path.empty() ? json::object() : read_json_file(c.config_path); }

bool has_model(const json& cfg) { return cfg.contains("model") || cfg.contains("affinity"); }

ModelParams model_from(json& cfg, const Common& c) {
  if (!has_model(cfg)) throw UsageError("no instance: pass --config with a model document");
  json& m = cfg.contains("model") ? cfg["model"] : cfg;
  if (c.N) m["offline_scale"] = *c.N;
  if (c.alpha) m["horizon_factor"] = *c.alpha;
  ModelParams p = params_from_json(m);
  validate(p);
  json resolved = to_json(p);
  cfg.erase("affinity");
  for (auto it = resolved.begin(); it != resolved.end(); ++it) cfg.erase(it.key());
  cfg["model"] = resolved;
  return p;
}

template <class T>
T pick(json& cfg, const char* key, const std::optional<T>& flag, T fallback) {
  if (flag) cfg[key] = *flag;
  if (!cfg.contains(key)) cfg[key] = fallback;
  return cfg[key].get<T>();
}

/// "a..b" (inclusive), "a,b,c" or a single integer.
std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  try {
    if (const auto dots = s.find(".."); dots != std::string::npos) {
      const auto a = std::stoull(s.substr(0, dots)), b = std::stoull(s.substr(dots + 2));
      if (b < a) throw UsageError("seed range '" + s + "' is decreasing");
      return seed_range(a, static_cast<std::size_t>(b - a + 1));
    }
    std::vector<std::uint64_t> out;
    std::stringstream ss(s);
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(std::stoull(tok));
    if (out.empty()) throw UsageError("empty seed list");
    return out;
  } catch (const std::logic_error&) {
    throw UsageError("bad seed spec '" + s + "' (use a..b or a,b,c)");
  }
}

std::vector<std::int64_t> parse_int_list(const std::string& s, const char* what) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  try {
    for (std::string tok; std::getline(ss, tok, ',');) out.push_back(std::stoll(tok));
  } catch (const std::logic_error&) {
    throw UsageError(std::string("bad ") + what + " list '" + s + "'");
  }
  return out;
}

PolicyKind policy_from(const std::string& s) {
  try {
    return parse_policy_kind(s);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
}

Backend backend_from(const std::string& s) {
  if (s == "counts") return Backend::counts;
  if (s == "graph") return Backend::graph;
  throw UsageError("unknown backend '" + s + "' (counts or graph)");
}

fs::path output_dir(json& cfg, const Common& c) {
  std::string dir = c.out_dir;
  if (dir.empty()) dir = cfg.value("output_dir", "");
  if (dir.empty()) {
    const char* env = std::getenv("OBM_OUTPUT_DIR");
    dir = env && *env ? env : "obm-out";
  }
  cfg["output_dir"] = dir;
  fs::create_directories(dir);
  return dir;
}

/// Writes the resolved config and returns its content hash.
std::string echo_config(const fs::path& dir, const json& cfg) {
  const std::string text = cfg.dump(2) + "\n";
  io::write_text(dir / "config.json", text);
  return io::content_hash(text);
}

void write_json(const fs::path& path, const json& j) { io::write_text(path, j.dump(2) + "\n"); }

io::Row class_header(const char* first, const std::vector<std::string>& prefixes, std::size_t C) {
  io::Row h{first};
  for (const auto& p : prefixes)
    for (std::size_t c = 0; c < C; ++c) h.push_back(p + std::to_string(c));
  return h;
}

void write_band(const fs::path& path, const std::string& schema, const std::string& hash, const TrajectoryBand& b,
                double N) {
  const std::size_t C = b.mean.empty() ? 0 : b.mean.front().size();
  io::CsvWriter w(path, schema, hash, class_header("t", {"mean_", "sd_"}, C));
  for (std::size_t i = 0; i < b.times.size(); ++i) {
    io::Row r{io::fmt(static_cast<double>(b.times[i]) / N)};
    for (std::size_t c = 0; c < C; ++c) r.push_back(io::fmt(b.mean[i][c] / N));
    for (std::size_t c = 0; c < C; ++c) r.push_back(io::fmt(b.stddev[i][c] / N));
    w.write(r);
  }
}

// ---- subcommands ---------------------------------------------------------------

int cmd_validate(const std::string& path) {
  json doc = read_json_file(path);
  const ModelParams p = params_from_json(doc.contains("model") ? doc["model"] : doc);
  validate(p);
  std::cout << "ok: C=" << p.C() << " D=" << p.D() << " N=" << p.N() << " T=" << p.horizon() << "\n";
  return 0;
}

int cmd_qstar(const Common& c) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const QPlan q = solve_qstar(p);
  json plan = json::array(), mass = json::array();
  for (std::size_t i = 0; i < p.C(); ++i) {
    json pr = json::array(), mr = json::array();
    for (std::size_t d = 0; d < p.D(); ++d) {
      pr.push_back(q.plan(i, d));
      mr.push_back(q.mass(i, d));
    }
    plan.push_back(pr);
    mass.push_back(mr);
  }
  std::cout << json{{"plan", plan}, {"mass", mass}, {"objective", q.objective},
                    {"marginal_error", qplan_marginal_error(p, q)}}
                   .dump(2)
            << "\n";
  return 0;
}

struct PolicyFlags {
  std::optional<std::string> policy;
  std::optional<std::string> seeds;
  std::optional<double> q;
  std::optional<double> delta;
};

PolicyOptions policy_options(json& cfg, const PolicyFlags& f) {
  PolicyOptions o;
  o.q = pick(cfg, "q", f.q, 0.5);
  o.delta = pick(cfg, "delta", f.delta, 0.05);
  return o;
}

int cmd_simulate(const Common& c, const PolicyFlags& pf, const std::optional<std::string>& backend,
                 const std::optional<std::int64_t>& stride) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const PolicyKind kind = policy_from(pick(cfg, "policy", pf.policy, std::string("balance")));
  const auto seeds = parse_seeds(pick(cfg, "seeds", pf.seeds, std::string("0..19")));
  RunOptions o;
  o.backend = backend_from(pick(cfg, "backend", backend, std::string("counts")));
  o.sample_stride = pick(cfg, "sample_stride", stride, std::int64_t{0});
  const PolicyOptions po = policy_options(cfg, pf);
  cfg["command"] = "simulate";
  const fs::path dir = output_dir(cfg, c);
  const std::string hash = echo_config(dir, cfg);

  const Policy pol = make_policy(p, kind, po);
  const auto trs = parallel_map(seeds.size(), [&](std::size_t i) { return run(p, pol, seeds[i], o); });
  json totals = json::array();
  for (const auto& tr : trs) {
    io::CsvWriter w(dir / ("trajectory_" + to_string(kind) + "_seed" + std::to_string(tr.seed) + ".csv"),
                    "trajectory", hash, class_header("t", {"M_"}, p.C()));
    for (std::size_t i = 0; i < tr.times.size(); ++i) {
      io::Row r{io::fmt(tr.times[i])};
      for (auto v : tr.counts[i]) r.push_back(io::fmt(v));
      w.write(r);
    }
    totals.push_back({{"seed", tr.seed}, {"total", tr.total_matched()}, {"arrival_digest", tr.arrival_digest}});
  }
  write_band(dir / ("aggregate_" + to_string(kind) + ".csv"), "aggregate", hash, average_trajectories(trs), p.N());
  write_json(dir / "summary.json", {{"policy", to_string(kind)}, {"config_sha1", hash}, {"runs", totals}});
  std::cout << "wrote " << trs.size() << " trajectories to " << dir.string() << "\n";
  return 0;
}

int cmd_fluid_myopic(const Common& c, const std::optional<std::size_t>& grid) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const auto n = pick(cfg, "grid", grid, std::size_t{200});
  const auto fl = solve_ode(p, solve_qstar(p), uniform_grid(p.horizon_factor, n));
  cfg["command"] = "fluid-myopic";
  const std::string hash = io::content_hash(cfg.dump(2) + "\n");
  std::vector<io::Row> rows;
  for (std::size_t i = 0; i < fl.grid.size(); ++i) {
    io::Row r{io::fmt(fl.grid[i])};
    for (std::size_t k = 0; k < p.C(); ++k) r.push_back(io::fmt(fl.y[k][i]));
    for (std::size_t k = 0; k < p.C(); ++k) r.push_back(io::fmt(fl.y_tilde[k][i]));
    for (std::size_t k = 0; k < p.C(); ++k) r.push_back(io::fmt(fl.err_env[k][i]));
    rows.push_back(std::move(r));
  }
  std::cout << io::csv_string("fluid-myopic", hash, class_header("t", {"y_", "y_tilde_", "env_"}, p.C()), rows);
  return 0;
}

int cmd_fluid_balance(const Common& c, const std::optional<double>& t, const std::optional<std::size_t>& grid) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const BalanceFluid fl(p);
  if (t) {
    if (*t < 0.0 || *t > p.horizon_factor) throw UsageError("--t must lie in [0, horizon_factor]");
    const auto m = fl.m_star(*t);
    for (std::size_t k = 0; k < p.C(); ++k) std::cout << k << "," << io::fmt(m[k]) << "\n";
    return 0;
  }
  const auto n = pick(cfg, "grid", grid, std::size_t{200});
  cfg["command"] = "fluid-balance";
  const std::string hash = io::content_hash(cfg.dump(2) + "\n");
  std::vector<io::Row> rows;
  for (double s : uniform_grid(p.horizon_factor, n)) {
    io::Row r{io::fmt(s)};
    for (double v : fl.m_star(s)) r.push_back(io::fmt(v));
    r.push_back(io::fmt(fl.level(s)));
    rows.push_back(std::move(r));
  }
  auto header = class_header("t", {"m_star_"}, p.C());
  header.push_back("level");
  std::cout << io::csv_string("fluid-balance", hash, header, rows);
  return 0;
}

int cmd_schedule(const Common& c) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const auto s = build_schedule(p);
  json phases = json::array();
  for (std::size_t k = 0; k < s.size(); ++k) {
    json beta = json::array();
    for (std::size_t i = 0; i <= k; ++i) beta.push_back(s.beta[k][i]);
    phases.push_back({{"phase", k},
                      {"joining_class", s.order[k]},
                      {"level", s.levels[k]},
                      {"reached", k < s.reached},
                      {"start", k < s.reached ? json(s.t[k]) : json(nullptr)},
                      {"free_budget_at_start", beta}});
  }
  std::cout << json{{"order", s.order}, {"horizon", s.horizon}, {"phases", phases}}.dump(2) << "\n";
  return 0;
}

struct EstimateFlags {
  std::size_t c = 0, d = 0;
  std::int64_t m = 0;
  std::int64_t samples = 1000;
  std::size_t trials = 1000;
  std::uint64_t seed = 0;
  std::optional<double> delta;
};

int cmd_estimate(const Common& cm, const EstimateFlags& e) {
  json cfg = load_config(cm);
  const ModelParams p = model_from(cfg, cm);
  if (e.c >= p.C() || e.d >= p.D()) throw UsageError("--class/--online-class out of range");
  const double delta = pick(cfg, "delta", e.delta, 0.05);
  Engine unused;
  const auto caps = realize_offline_counts(p, OfflineMode::rounding, unused);
  if (e.m < 0 || e.m >= caps[e.c]) throw UsageError("--m must lie in [0, capacity)");
  const auto r = estimator_coverage(p, e.c, e.d, e.m, e.samples, e.trials, delta, e.seed);
  const Interval w = neighborhood(e.m, caps[e.c]);
  std::cout << json{{"class", e.c},
                    {"online_class", e.d},
                    {"m", e.m},
                    {"capacity", caps[e.c]},
                    {"window", {w.lo, w.hi}},
                    {"d_exact", d_exact(p, e.c, e.d, e.m, caps[e.c])},
                    {"samples", r.t_total},
                    {"trials", r.trials},
                    {"radius", r.radius},
                    {"coverage", r.coverage},
                    {"mean_abs_error", r.mean_abs_error},
                    {"max_roundtrip_error", r.max_roundtrip_error},
                    {"clamped", r.clamped}}
                   .dump(2)
            << "\n";
  return 0;
}

int cmd_convergence(const Common& c, const PolicyFlags& pf, const std::optional<std::string>& N_list) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const PolicyKind kind = policy_from(pick(cfg, "policy", pf.policy, std::string("balance")));
  if (kind == PolicyKind::uniform) throw UsageError("uniform has no fluid limit");
  const auto seeds = parse_seeds(pick(cfg, "seeds", pf.seeds, std::string("0..19")));
  const auto Ns = parse_int_list(pick(cfg, "N_list", N_list, std::string("500,1000,2000,4000")), "N");
  ConvergenceOptions opt;
  opt.policy = policy_options(cfg, pf);
  cfg["command"] = "convergence";
  const fs::path dir = output_dir(cfg, c);
  const std::string hash = echo_config(dir, cfg);
  const auto rep = convergence_study(p, kind, Ns, seeds, opt);
  auto header = class_header("N", {"bound_"}, p.C());
  header.insert(header.end(), {"mean_max_deviation", "mean_trajectory_gap", "failure_prob"});
  io::CsvWriter w(dir / ("convergence_" + rep.policy + ".csv"), "convergence", hash, header);
  json points = json::array();
  for (const auto& pt : rep.points) {
    io::Row r{io::fmt(pt.N)};
    for (std::size_t k = 0; k < p.C(); ++k) r.push_back(k < pt.bound.size() ? io::fmt(pt.bound[k]) : "");
    r.push_back(io::fmt(pt.mean_max_deviation));
    r.push_back(io::fmt(pt.mean_trajectory_gap));
    r.push_back(io::fmt(pt.failure_prob));
    w.write(r);
    points.push_back({{"N", pt.N}, {"max_deviation", pt.max_deviation}, {"bound", pt.bound}});
  }
  write_json(dir / "convergence.json",
             {{"policy", rep.policy}, {"config_sha1", hash}, {"loglog_slope", rep.fit.slope}, {"points", points}});
  std::cout << "log-log slope of mean sup-deviation: " << io::fmt(rep.fit.slope) << "\n";
  return 0;
}

int cmd_regret(const Common& c, const PolicyFlags& pf, const std::optional<std::string>& T_list) {
  json cfg = load_config(c);
  const ModelParams p = model_from(cfg, c);
  const auto seeds = parse_seeds(pick(cfg, "seeds", pf.seeds, std::string("0..19")));
  const auto Ts = parse_int_list(pick(cfg, "T_list", T_list, std::string("2000,5000,10000,20000")), "T");
  const PolicyOptions po = policy_options(cfg, pf);
  if (!(po.q > 0.0 && po.q < 1.0)) throw UsageError("--q must lie in (0, 1)");
  cfg["command"] = "regret";
  const fs::path dir = output_dir(cfg, c);
  const std::string hash = echo_config(dir, cfg);
  const auto rep = regret_experiment(p, po.q, Ts, seeds, po.delta);
  io::CsvWriter w(dir / "regret.csv", "regret", hash,
                  io::row("T", "N", "q", "explore_horizon", "mean_regret", "sd_regret"));
  json recs = json::array();
  for (const auto& r : rep.records) {
    w.write(io::row(r.T, r.N, r.q, r.explore_horizon, r.mean, r.stddev));
    recs.push_back({{"T", r.T}, {"explore_horizon", r.explore_horizon}, {"regret", r.regret}, {"paired", r.paired}});
  }
  write_json(dir / "regret.json", {{"q", rep.q},
                                   {"config_sha1", hash},
                                   {"exponent", rep.exponent},
                                   {"rate_exponent", (rep.q + 3.0) / 4.0},
                                   {"clipped", rep.clipped},
                                   {"records", recs}});
  std::cout << "fitted exponent " << io::fmt(rep.exponent) << " (clipped " << rep.clipped << ")\n";
  return 0;
}

struct Figure1Flags {
  std::optional<std::int64_t> C, D;
  std::optional<std::uint64_t> instance_seed;
  std::optional<std::size_t> grid;
  bool svg = false;
};

int cmd_figure1(const Common& c, const PolicyFlags& pf, const Figure1Flags& ff) {
  json cfg = load_config(c);
  Figure1Config fc;
  ModelParams p;
  if (has_model(cfg)) {
    p = model_from(cfg, c);
  } else {
    fc.N = pick(cfg, "N", c.N, fc.N);
    fc.alpha = pick(cfg, "alpha", c.alpha, fc.alpha);
    fc.C = static_cast<std::size_t>(pick(cfg, "C", ff.C, static_cast<std::int64_t>(fc.C)));
    fc.D = static_cast<std::size_t>(pick(cfg, "D", ff.D, static_cast<std::int64_t>(fc.D)));
    fc.instance_seed = pick(cfg, "instance_seed", ff.instance_seed, fc.instance_seed);
    p = figure1_instance(fc);
    cfg["model"] = to_json(p);
  }
  fc.seeds = parse_seeds(pick(cfg, "seeds", pf.seeds, std::string("0..19")));
  const PolicyOptions po = policy_options(cfg, pf);
  fc.q = po.q;
  fc.delta = po.delta;
  fc.grid_points = pick(cfg, "grid", ff.grid, fc.grid_points);
  cfg["command"] = "figure1";
  const fs::path dir = output_dir(cfg, c);
  const std::string hash = echo_config(dir, cfg);

  const auto r = figure1_repro(p, fc);
  for (const auto& s : r.policies) write_band(dir / ("figure1_" + s.policy + ".csv"), "figure1-policy", hash, s.band, p.N());
  const auto& times = r.policies.front().band.times;
  {
    io::CsvWriter w(dir / "figure1_fluid.csv", "figure1-fluid", hash, class_header("t", {"m_star_", "ode_"}, p.C()));
    for (std::size_t i = 0; i < times.size(); ++i) {
      io::Row row{io::fmt(static_cast<double>(times[i]) / p.N())};
      for (double v : r.m_star[i]) row.push_back(io::fmt(v));
      for (double v : r.ode[i]) row.push_back(io::fmt(v));
      w.write(row);
    }
  }
  json pols = json::array();
  for (const auto& s : r.policies) pols.push_back({{"policy", s.policy}, {"mean_total", s.mean_total}, {"totals", s.totals}});
  write_json(dir / "figure1.json", {{"config_sha1", hash},
                                    {"balance_gap", r.balance_gap},
                                    {"myopic_gap", r.myopic_gap},
                                    {"myopic_bound", r.myopic_bound},
                                    {"saturated", r.saturated},
                                    {"policies", pols}});
  if (ff.svg) {
    std::vector<io::Series> series;
    const auto& bal = find_policy(r, "balance").band;
    for (std::size_t k = 0; k < p.C(); ++k) {
      io::Series sim{"Balance class " + std::to_string(k), {}, {}, false};
      io::Series fl{"m* class " + std::to_string(k), {}, {}, true};
      for (std::size_t i = 0; i < times.size(); ++i) {
        const double x = static_cast<double>(times[i]) / p.N();
        sim.x.push_back(x);
        sim.y.push_back(bal.mean[i][k] / p.N());
        fl.x.push_back(x);
        fl.y.push_back(r.m_star[i][k]);
      }
      series.push_back(std::move(sim));
      series.push_back(std::move(fl));
    }
    io::write_text(dir / "figure1.svg", io::line_chart_svg(series, "Balance vs fluid limit", "t / N", "M_c / N"));
  }
  for (const auto& s : r.policies) std::cout << s.policy << " mean total " << io::fmt(s.mean_total) << "\n";
  std::cout << "balance gap " << io::fmt(r.balance_gap) << ", outputs in " << dir.string() << "\n";
  return 0;
}

int cmd_plot(const std::string& csv, std::string x, std::vector<std::string> ys, std::string out, std::string title) {
  const auto t = io::read_csv(csv);
  if (x.empty()) x = t.header.front();
  std::size_t xi;
  try {
    xi = t.column(x);
  } catch (const std::out_of_range& e) {
    throw UsageError(e.what());
  }
  if (ys.empty())
    for (const auto& h : t.header)
      if (h != x) ys.push_back(h);
  auto num = [](const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); };
  std::vector<io::Series> series;
  for (const auto& y : ys) {
    std::size_t yi;
    try {
      yi = t.column(y);
    } catch (const std::out_of_range& e) {
      throw UsageError(e.what());
    }
    io::Series s{y, {}, {}, false};
    for (const auto& r : t.rows) {
      s.x.push_back(num(r.at(xi)));
      s.y.push_back(num(r.at(yi)));
    }
    series.push_back(std::move(s));
  }
  if (out.empty()) out = fs::path(csv).replace_extension(".svg").string();
  io::write_text(out, io::line_chart_svg(series, title.empty() ? fs::path(csv).filename().string() : title, x, ""));
  std::cout << "wrote " << out << "\n";
  return 0;
}

void report_error(bool as_json, const char* kind, const std::string& message, const std::string& field = "") {
  if (as_json) {
    json e{{"kind", kind}, {"message", message}};
    if (!field.empty()) e["field"] = field;
    std::cerr << json{{"error", e}}.dump() << "\n";
  } else {
    std::cerr << "obm: " << kind << " error: " << (field.empty() ? "" : field + ": ") << message << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online bipartite matching on sparse SBMs: simulation, fluid limits, experiments"};
  app.require_subcommand(1);
  bool json_errors = false;
  app.add_flag("--json-errors", json_errors, "Print errors as JSON on stderr");

  Common common;
  auto add_common = [&](CLI::App* s) {
    s->add_option("-c,--config", common.config_path, "JSON config (instance under \"model\" or top level)")
        ->check(CLI::ExistingFile);
    s->add_option("-o,--out", common.out_dir, "Output directory (default $OBM_OUTPUT_DIR or ./obm-out)");
    s->add_option("--N", common.N, "Override offline_scale");
    s->add_option("--alpha", common.alpha, "Override horizon_factor");
  };
  PolicyFlags pf;
  auto add_policy = [&](CLI::App* s, bool with_policy) {
    if (with_policy) s->add_option("--policy", pf.policy, "myopic|balance|real-balance|learned-balance|uniform");
    s->add_option("--seeds", pf.seeds, "Seeds: a..b, a,b,c or a single value");
    s->add_option("--q", pf.q, "Exploration exponent for LearnedBalance");
    s->add_option("--delta", pf.delta, "Confidence parameter for LearnedBalance");
  };

  std::string validate_path;
  auto* v = app.add_subcommand("validate", "Check an instance file");
  v->add_option("file", validate_path, "Instance JSON")->required();

  auto* qs = app.add_subcommand("qstar", "Optimal transport plan Q*");
  add_common(qs);

  std::optional<std::string> backend;
  std::optional<std::int64_t> stride;
  auto* sim = app.add_subcommand("simulate", "Run a policy over seeds; per-seed and aggregate CSVs");
  add_common(sim);
  add_policy(sim, true);
  sim->add_option("--backend", backend, "counts|graph");
  sim->add_option("--stride", stride, "Sample every k arrivals (0: T/1000)");

  std::optional<std::size_t> grid;
  auto* fm = app.add_subcommand("fluid-myopic", "Myopic ODE, surrogate and envelope as CSV");
  add_common(fm);
  fm->add_option("--grid", grid, "Grid intervals on [0, alpha]");

  std::optional<double> t_at;
  auto* fb = app.add_subcommand("fluid-balance", "Balance fluid limit m* as CSV, or at one time");
  add_common(fb);
  fb->add_option("--grid", grid, "Grid intervals on [0, alpha]");
  fb->add_option("--t", t_at, "Print m*(t), one 'class,value' line per class");

  auto* sc = app.add_subcommand("schedule", "Balance phase schedule as JSON");
  add_common(sc);

  EstimateFlags ef;
  auto* es = app.add_subcommand("estimate", "Estimator coverage on synthetic feeds");
  add_common(es);
  es->add_option("--class", ef.c, "Offline class");
  es->add_option("--online-class", ef.d, "Online class");
  es->add_option("--m", ef.m, "Matched count at which D is estimated")->required();
  es->add_option("--samples", ef.samples, "Observations per trial");
  es->add_option("--trials", ef.trials, "Independent trials");
  es->add_option("--seed", ef.seed, "First seed");
  es->add_option("--delta", ef.delta, "Confidence parameter");

  std::optional<std::string> n_list;
  auto* cv = app.add_subcommand("convergence", "Deviation from the fluid limit as N grows");
  add_common(cv);
  add_policy(cv, true);
  cv->add_option("--N-list", n_list, "Comma-separated increasing N values");

  std::optional<std::string> t_list;
  auto* rg = app.add_subcommand("regret", "LearnedBalance regret against Balance");
  add_common(rg);
  add_policy(rg, false);
  rg->add_option("--T-list", t_list, "Comma-separated horizons");

  Figure1Flags ff;
  auto* f1 = app.add_subcommand("figure1", "Four-policy comparison with fluid overlays");
  add_common(f1);
  add_policy(f1, false);
  f1->add_option("--C", ff.C, "Offline classes of the generated instance");
  f1->add_option("--D", ff.D, "Online classes of the generated instance");
  f1->add_option("--instance-seed", ff.instance_seed, "Seed of the generated instance");
  f1->add_option("--grid", ff.grid, "Aggregate rows");
  f1->add_flag("--svg", ff.svg, "Also write figure1.svg");

  std::string plot_csv, plot_x, plot_out, plot_title;
  std::vector<std::string> plot_y;
  auto* pl = app.add_subcommand("plot", "Render a CSV as a line-chart SVG");
  pl->add_option("csv", plot_csv, "Input CSV")->required()->check(CLI::ExistingFile);
  pl->add_option("--x", plot_x, "X column (default: first)");
  pl->add_option("--y", plot_y, "Y columns (default: all others)");
  pl->add_option("--svg", plot_out, "Output path (default: CSV path with .svg)");
  pl->add_option("--title", plot_title, "Chart title");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    report_error(json_errors, "usage", e.what());
    return 2;
  }

  try {
    if (*v) return cmd_validate(validate_path);
    if (*qs) return cmd_qstar(common);
    if (*sim) return cmd_simulate(common, pf, backend, stride);
    if (*fm) return cmd_fluid_myopic(common, grid);
    if (*fb) return cmd_fluid_balance(common, t_at, grid);
    if (*sc) return cmd_schedule(common);
    if (*es) return cmd_estimate(common, ef);
    if (*cv) return cmd_convergence(common, pf, n_list);
    if (*rg) return cmd_regret(common, pf, t_list);
    if (*f1) return cmd_figure1(common, pf, ff);
    if (*pl) return cmd_plot(plot_csv, plot_x, plot_y, plot_out, plot_title);
  } catch (const UsageError& e) {
    report_error(json_errors, "usage", e.what());
    return 2;
  } catch (const ValidationError& e) {
    report_error(json_errors, "validation", e.what(), e.field());
    return 1;
  } catch (const std::exception& e) {
    report_error(json_errors, "runtime", e.what());
    return 1;
  }
  return 2;
}
