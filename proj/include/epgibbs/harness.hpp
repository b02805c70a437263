#pragma once

// Experiment driver behind the command-line tool: configuration, chain
// construction for every (model, sampler) pair, trace/summary output,
// benchmark mode and the scale-mixture diagnostic tables.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "datasets.hpp"
#include "errors.hpp"
#include "eval_metrics.hpp"
#include "gibbs_core.hpp"
#include "gsm.hpp"
#include "io.hpp"
#include "mvt_mixture.hpp"
#include "random.hpp"
#include "ts_cluster.hpp"

namespace epg {

struct BenchOptions {
  std::vector<int> sizes{40, 80, 160, 320};
  std::vector<std::string> samplers{"naive", "collapsed", "ep"};
  int warmup_sweeps = 1;
  int timed_sweeps = 2;
};

struct ExperimentConfig {
  std::string model = "ts";
  std::string sampler = "ep";
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  int sweeps = 100;
  int burn_in = 0;
  int threads = 1;
  double alpha = 1.0;
  /// Number of mixture components the sampler uses; 0 takes the data's K.
  int clusters = 0;
  int refresh_every = 0;
  double damping = 1.0;
  int quad_m = 64;
  bool sample_hyperparams = false;
  /// Parameter-MSE columns are filled every this many iterations.
  int snapshot_every = 1;
  /// Dataset directory (data.csv + truth.json); empty generates from `ts`/`mvt`.
  std::string data_path;
  TsGenParams ts;
  MvtGenParams mvt;
  GsmDiagOptions gsm;
  BenchOptions bench;

  std::uint64_t seed_value() const {
    if (!seed)
      throw InvalidArgument("config: a seed is required");
    return *seed;
  }

  void validate() const {
    static const std::set<std::string> models{"mvt", "ts", "gsm"};
    static const std::set<std::string> samplers{"naive", "blocked", "collapsed", "ep"};
    if (!models.count(model))
      throw InvalidArgument("config: unknown model '" + model + "'");
    if (!samplers.count(sampler))
      throw InvalidArgument("config: unknown sampler '" + sampler + "'");
    seed_value();
    if (sweeps < 0 || burn_in < 0 || threads < 1 || quad_m < 1 || snapshot_every < 1 ||
        refresh_every < 0 || clusters < 0)
      throw InvalidArgument("config: counts must be non-negative (threads, quad_m >= 1)");
    if (!(alpha > 0.0) || !(damping > 0.0) || damping > 1.0)
      throw InvalidArgument("config: alpha must be positive and damping in (0, 1]");
    if (model == "ts" && sampler == "blocked")
      throw InvalidArgument("config: the blocked sampler exists for mvt only");
    if (model == "mvt" && sampler == "collapsed")
      throw InvalidArgument("config: no exact collapsed sampler for mvt");
    if (bench.warmup_sweeps < 0 || bench.timed_sweeps < 1 || bench.sizes.empty())
      throw InvalidArgument("config: bench needs sizes and at least one timed sweep");
  }
};

namespace detail {
template <class T>
void read_opt(const json &j, const char *key, T &v) {
  if (j.contains(key))
    v = j.at(key).get<T>();
}

inline void reject_unknown(const json &j, const std::set<std::string> &keys,
                           const std::string &where) {
  if (!j.is_object())
    throw InvalidArgument("config: '" + where + "' must be an object");
  for (const auto &[k, _] : j.items())
    if (!keys.count(k))
      throw InvalidArgument("config: unknown key '" + where + k + "'");
}
} // namespace detail

inline ExperimentConfig config_from_json(const json &j) {
  using detail::read_opt;
  detail::reject_unknown(j,
                         {"model", "sampler", "seed", "out", "sweeps", "burn_in", "threads",
                          "alpha", "clusters", "refresh_every", "damping", "quad_m",
                          "sample_hyperparams", "snapshot_every", "data_path", "ts", "mvt",
                          "gsm", "bench"},
                         "");
  ExperimentConfig c;
  read_opt(j, "model", c.model);
  read_opt(j, "sampler", c.sampler);
  if (j.contains("seed"))
    c.seed = j.at("seed").get<std::uint64_t>();
  read_opt(j, "out", c.out);
  read_opt(j, "sweeps", c.sweeps);
  read_opt(j, "burn_in", c.burn_in);
  read_opt(j, "threads", c.threads);
  read_opt(j, "alpha", c.alpha);
  read_opt(j, "clusters", c.clusters);
  read_opt(j, "refresh_every", c.refresh_every);
  read_opt(j, "damping", c.damping);
  read_opt(j, "quad_m", c.quad_m);
  read_opt(j, "sample_hyperparams", c.sample_hyperparams);
  read_opt(j, "snapshot_every", c.snapshot_every);
  read_opt(j, "data_path", c.data_path);
  if (j.contains("ts")) {
    const json &t = j.at("ts");
    detail::reject_unknown(t, {"n", "T", "K", "sigma_x2", "sigma_y2", "a", "lambda"}, "ts.");
    read_opt(t, "n", c.ts.n);
    read_opt(t, "T", c.ts.T);
    read_opt(t, "K", c.ts.K);
    read_opt(t, "sigma_x2", c.ts.sigma_x2);
    read_opt(t, "sigma_y2", c.ts.sigma_y2);
    read_opt(t, "a", c.ts.a);
    read_opt(t, "lambda", c.ts.lambda);
  }
  if (j.contains("mvt")) {
    const json &m = j.at("mvt");
    detail::reject_unknown(m, {"n", "K", "d", "dof", "mean_scale", "snr"}, "mvt.");
    read_opt(m, "n", c.mvt.n);
    read_opt(m, "K", c.mvt.K);
    read_opt(m, "d", c.mvt.d);
    read_opt(m, "dof", c.mvt.dof);
    read_opt(m, "mean_scale", c.mvt.mean_scale);
    if (m.contains("snr")) {
      if (m.contains("mean_scale"))
        throw InvalidArgument("config: give mvt.snr or mvt.mean_scale, not both");
      c.mvt.mean_scale = MvtGenParams::snr_scale(m.at("snr").get<std::string>());
    }
  }
  if (j.contains("gsm")) {
    const json &g = j.at("gsm");
    detail::reject_unknown(g,
                           {"C", "r", "delta", "n", "passes", "replicates", "sigma2",
                            "prior_var", "alpha", "refresh_max_passes", "refresh_tol",
                            "decimals"},
                           "gsm.");
    read_opt(g, "C", c.gsm.C);
    read_opt(g, "r", c.gsm.r);
    read_opt(g, "delta", c.gsm.delta);
    read_opt(g, "n", c.gsm.n);
    read_opt(g, "passes", c.gsm.passes);
    read_opt(g, "replicates", c.gsm.replicates);
    read_opt(g, "sigma2", c.gsm.sigma2);
    read_opt(g, "prior_var", c.gsm.prior_var);
    read_opt(g, "alpha", c.gsm.alpha);
    read_opt(g, "refresh_max_passes", c.gsm.refresh_max_passes);
    read_opt(g, "refresh_tol", c.gsm.refresh_tol);
    read_opt(g, "decimals", c.gsm.decimals);
  }
  if (j.contains("bench")) {
    const json &b = j.at("bench");
    detail::reject_unknown(b, {"sizes", "samplers", "warmup_sweeps", "timed_sweeps"}, "bench.");
    read_opt(b, "sizes", c.bench.sizes);
    read_opt(b, "samplers", c.bench.samplers);
    read_opt(b, "warmup_sweeps", c.bench.warmup_sweeps);
    read_opt(b, "timed_sweeps", c.bench.timed_sweeps);
  }
  return c;
}

/// Every field, defaults included; the config hash is taken over this dump.
inline json config_to_json(const ExperimentConfig &c) {
  json j = {{"model", c.model},
            {"sampler", c.sampler},
            {"out", c.out},
            {"sweeps", c.sweeps},
            {"burn_in", c.burn_in},
            {"threads", c.threads},
            {"alpha", c.alpha},
            {"clusters", c.clusters},
            {"refresh_every", c.refresh_every},
            {"damping", c.damping},
            {"quad_m", c.quad_m},
            {"sample_hyperparams", c.sample_hyperparams},
            {"snapshot_every", c.snapshot_every},
            {"data_path", c.data_path},
            {"ts", ts_gen_json(c.ts)},
            {"mvt", mvt_gen_json(c.mvt)},
            {"gsm",
             {{"C", c.gsm.C},
              {"r", c.gsm.r},
              {"delta", c.gsm.delta},
              {"n", c.gsm.n},
              {"passes", c.gsm.passes},
              {"replicates", c.gsm.replicates},
              {"sigma2", c.gsm.sigma2},
              {"prior_var", c.gsm.prior_var},
              {"alpha", c.gsm.alpha},
              {"refresh_max_passes", c.gsm.refresh_max_passes},
              {"refresh_tol", c.gsm.refresh_tol},
              {"decimals", c.gsm.decimals}}},
            {"bench",
             {{"sizes", c.bench.sizes},
              {"samplers", c.bench.samplers},
              {"warmup_sweeps", c.bench.warmup_sweeps},
              {"timed_sweeps", c.bench.timed_sweeps}}}};
  j["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  return j;
}

/// Hash over the settings that determine the chain. The output directory and
/// the thread count are left out: neither changes a single draw.
inline std::string experiment_hash(const ExperimentConfig &c) {
  json j = config_to_json(c);
  j.erase("out");
  j.erase("threads");
  return config_hash(j);
}

// ---------------------------------------------------------------------------
// data
// ---------------------------------------------------------------------------

struct ProblemData {
  std::string model;
  TsDataset ts;
  MvtDataset mvt;

  std::size_t size() const { return model == "ts" ? ts.series.size() : mvt.y.size(); }
  const std::vector<int> &truth_z() const { return model == "ts" ? ts.z : mvt.z; }
  int truth_k() const { return model == "ts" ? ts.K : mvt.K; }
};

inline ProblemData load_problem(const ExperimentConfig &c) {
  ProblemData p;
  p.model = c.model;
  if (c.model == "ts")
    p.ts = c.data_path.empty() ? generate_ts(c.ts, c.seed_value()) : read_ts_dataset(c.data_path);
  else if (c.model == "mvt")
    p.mvt = c.data_path.empty() ? generate_mvt(c.mvt, c.seed_value())
                                : read_mvt_dataset(c.data_path);
  else
    throw InvalidArgument("load_problem: model '" + c.model + "' has no dataset");
  if (p.size() == 0)
    throw InvalidArgument("load_problem: empty dataset");
  return p;
}

// ---------------------------------------------------------------------------
// chains
// ---------------------------------------------------------------------------

/// Uniform view of the samplers for the driver loop.
class Chain {
public:
  virtual ~Chain() = default;
  virtual void sweep(Rng &rng) = 0;
  virtual const std::vector<int> &z() const = 0;
  virtual double loglik() const = 0;
  virtual std::optional<ParamSnapshot> snapshot() const { return std::nullopt; }
  virtual int site_resets() const { return 0; }
};

template <class S> class ChainOf : public Chain {
public:
  explicit ChainOf(std::unique_ptr<S> s) : s_(std::move(s)) {}
  void sweep(Rng &rng) override { s_->sweep(rng); }
  const std::vector<int> &z() const override { return s_->z(); }
  double loglik() const override { return s_->loglik(); }
  std::optional<ParamSnapshot> snapshot() const override {
    if constexpr (requires { s_->snapshot(); })
      return s_->snapshot();
    else
      return std::nullopt;
  }
  int site_resets() const override {
    if constexpr (requires { s_->engine().total_resets(); })
      return s_->engine().total_resets();
    else
      return 0;
  }
  S &sampler() { return *s_; }

private:
  std::unique_ptr<S> s_;
};

template <class S, class... Args> std::unique_ptr<Chain> make_chain_of(Args &&...args) {
  return std::make_unique<ChainOf<S>>(std::make_unique<S>(std::forward<Args>(args)...));
}

/// Starting per-series parameters when they are sampled (or unknown):
/// a, sigma_x2 and sigma_y2 at their prior means, lambda at 1.
inline SsmParams ts_initial_params(const TsHyperPriors &h = {}) {
  SsmParams p;
  p.a = h.a_mean;
  p.lambda = 1.0;
  p.sigma_x2 = h.sx_scale / (h.sx_shape - 1.0);
  p.sigma_y2 = h.sy_scale / (h.sy_shape - 1.0);
  p.init_var = SsmParams::default_init_var(p.a, p.sigma_x2);
  return p;
}

inline int model_clusters(const ExperimentConfig &c, const ProblemData &d) {
  const int K = c.clusters > 0 ? c.clusters : d.truth_k();
  if (K < 1)
    throw InvalidArgument("config: set 'clusters' when the dataset has no truth.json");
  return K;
}

/// z0 comes from the init stream (index 0); samplers that draw starting
/// parameters use init stream index 1.
inline std::unique_ptr<Chain> make_chain(const ExperimentConfig &c, const ProblemData &d,
                                         WorkerPool *pool) {
  const std::uint64_t seed = c.seed_value();
  const int K = model_clusters(c, d);
  Rng z_rng = make_stream(seed, Stream::init, 0);
  Rng init_rng = make_stream(seed, Stream::init, 1);
  std::vector<int> z0 = uniform_assignments(d.size(), K, z_rng);
  if (c.model == "ts") {
    TsModel m = TsModel::uniform(d.size(), K, ts_initial_params(), c.alpha);
    m.sample_hyperparams = c.sample_hyperparams;
    if (!c.sample_hyperparams && d.ts.params.size() == d.size())
      m.params = d.ts.params;
    if (c.sampler == "naive")
      return make_chain_of<NaiveTsSampler>(d.ts.series, std::move(m), std::move(z0), init_rng);
    if (c.sampler == "collapsed")
      return make_chain_of<CollapsedTsSampler>(d.ts.series, std::move(m), std::move(z0), pool);
    if (c.sampler == "ep") {
      TsEpOptions o;
      o.sweep.damping = c.damping;
      o.refresh_every = c.refresh_every;
      return make_chain_of<EpTsSampler>(d.ts.series, std::move(m), std::move(z0), o, pool);
    }
  } else if (c.model == "mvt") {
    const double dof = d.mvt.dof > 0.0 ? d.mvt.dof : c.mvt.dof;
    MvtConfig mc = MvtConfig::defaults(d.mvt.dim(), dof, c.quad_m);
    const DirichletPrior prior{c.alpha, K};
    if (c.sampler == "naive")
      return make_chain_of<NaiveMvtSampler>(d.mvt.y, mc, prior, std::move(z0), init_rng);
    if (c.sampler == "blocked")
      return make_chain_of<BlockedMvtSampler>(d.mvt.y, mc, prior, std::move(z0), init_rng);
    if (c.sampler == "ep") {
      EpSweepOptions o;
      o.damping = c.damping;
      return make_chain_of<EpMvtSampler>(d.mvt.y, mc, prior, std::move(z0), o,
                                         c.refresh_every, pool);
    }
  }
  throw InvalidArgument("make_chain: no " + c.sampler + " sampler for model " + c.model);
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

inline const std::vector<std::string> &mse_columns() {
  static const std::vector<std::string> cols{"a", "lambda", "sigma_y2", "x"};
  return cols;
}

struct RunResult {
  ChainTrace trace;
  std::string hash;
  json summary;
};

namespace detail {
inline std::optional<ParamSnapshot> truth_snapshot(const ProblemData &d) {
  if (d.model != "ts" || d.ts.params.size() != d.size())
    return std::nullopt;
  const Index n = Index(d.size());
  ParamSnapshot t{VectorXd(n), VectorXd(n), VectorXd(n), d.ts.x, {}};
  for (Index i = 0; i < n; ++i) {
    t.a(i) = d.ts.params[std::size_t(i)].a;
    t.lambda(i) = d.ts.params[std::size_t(i)].lambda;
    t.sigma_y2(i) = d.ts.params[std::size_t(i)].sigma_y2;
  }
  return t;
}

inline std::vector<std::pair<std::string, double>>
mse_cells(const Chain &chain, const std::optional<ParamSnapshot> &truth, bool take) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::pair<std::string, double>> out;
  std::optional<ParamSnapshot> s;
  if (take && truth)
    s = chain.snapshot();
  MseRow r{nan, nan, nan, nan};
  if (s) {
    ParamSnapshot t = *truth;
    if (s->x.size() == 0)
      t.x.resize(0, 0);
    r = mse_row(*s, t);
  }
  for (const auto &name : mse_columns())
    out.emplace_back(name, name == "a"        ? r.a
                           : name == "lambda" ? r.lambda
                           : name == "sigma_y2" ? r.sigma_y2
                                                : r.x);
  return out;
}

inline double median_of(std::vector<double> v) {
  if (v.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
} // namespace detail

/// Runs the configured chain in memory. Row 0 is the initial state.
inline RunResult execute(const ExperimentConfig &c, const ProblemData &d) {
  c.validate();
  std::unique_ptr<WorkerPool> pool;
  if (c.threads > 1)
    pool = std::make_unique<WorkerPool>(unsigned(c.threads));
  auto chain = make_chain(c, d, pool.get());
  const auto truth = detail::truth_snapshot(d);
  const auto &tz = d.truth_z();
  const bool has_truth = tz.size() == d.size();

  RunResult res;
  res.hash = experiment_hash(c);
  res.trace.label = c.model + "/" + c.sampler;
  auto record = [&](int it, double secs) {
    TraceRow row;
    row.iteration = it;
    row.seconds = secs;
    row.loglik = chain->loglik();
    if (has_truth)
      row.nmi = nmi(tz, chain->z());
    row.z_hash = hash_assignments(chain->z());
    if (c.model == "ts")
      row.mse = detail::mse_cells(*chain, truth, it % c.snapshot_every == 0);
    res.trace.push(std::move(row));
  };
  record(0, 0.0);
  Rng rng = make_stream(c.seed_value(), Stream::chain, 0);
  for (int it = 1; it <= c.sweeps; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    chain->sweep(rng);
    record(it, detail::seconds_since(t0));
  }

  const auto &rows = res.trace.rows;
  const auto secs = res.trace.sweep_seconds();
  double mean = 0.0, sd = 0.0;
  for (double s : secs)
    mean += s / double(secs.size());
  for (double s : secs)
    sd += (s - mean) * (s - mean);
  sd = secs.size() > 1 ? std::sqrt(sd / double(secs.size() - 1)) : 0.0;
  std::vector<double> post;
  for (const auto &r : rows)
    if (r.iteration > c.burn_in)
      post.push_back(r.nmi);
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  res.summary = {{"schema", "epgibbs.run/1"},
                 {"model", c.model},
                 {"sampler", c.sampler},
                 {"seed", c.seed_value()},
                 {"config_hash", res.hash},
                 {"config", config_to_json(c)},
                 {"n", d.size()},
                 {"clusters", model_clusters(c, d)},
                 {"sweeps", c.sweeps},
                 {"burn_in", c.burn_in},
                 {"final_nmi", num(rows.back().nmi)},
                 {"final_loglik", num(rows.back().loglik)},
                 {"median_nmi_after_burn_in", num(detail::median_of(post))},
                 {"mean_seconds_per_iteration", secs.empty() ? json(nullptr) : json(mean)},
                 {"stddev_seconds_per_iteration", secs.empty() ? json(nullptr) : json(sd)},
                 {"site_resets", chain->site_resets()}};
  return res;
}

inline std::vector<std::string> trace_header(const ExperimentConfig &c) {
  std::vector<std::string> h{"iteration", "loglik", "nmi", "z_hash"};
  if (c.model == "ts")
    for (const auto &m : mse_columns())
      h.push_back("mse_" + m);
  return h;
}

/// trace.csv depends only on (config, seed); wall times go to timing.csv.
inline void write_run(const fs::path &dir, const ExperimentConfig &c, const RunResult &r) {
  fs::create_directories(dir);
  {
    CsvWriter w(dir / "trace.csv", r.hash, trace_header(c));
    for (const auto &row : r.trace.rows) {
      char hash[17];
      std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(row.z_hash));
      std::vector<std::string> cells{std::to_string(row.iteration), fmt_double(row.loglik),
                                     fmt_double(row.nmi), hash};
      for (const auto &[_, v] : row.mse)
        cells.push_back(fmt_double(v));
      w.write_row(cells);
    }
  }
  {
    CsvWriter w(dir / "timing.csv", r.hash, {"iteration", "wall_seconds"});
    for (const auto &row : r.trace.rows)
      w.write_row({std::to_string(row.iteration), fmt_double(row.seconds)});
  }
  write_json(dir / "summary.json", r.summary);
}

inline RunResult run(const ExperimentConfig &c) {
  c.validate();
  const ProblemData d = load_problem(c);
  RunResult r = execute(c, d);
  write_run(c.out, c, r);
  return r;
}

// ---------------------------------------------------------------------------
// benchmark
// ---------------------------------------------------------------------------

struct BenchResult {
  std::vector<RuntimeSample> samples;
  /// (sampler, n, sweep index, seconds) for every timed sweep.
  std::vector<std::tuple<std::string, int, int, double>> sweeps;
  RuntimeSummary summary;
};

/// For each size, one dataset and one chain per sampler; warmup sweeps run
/// first and are left out of the statistics.
inline BenchResult bench(const ExperimentConfig &base) {
  BenchResult out;
  for (int n : base.bench.sizes) {
    ExperimentConfig c = base;
    c.data_path.clear();
    if (c.model == "ts")
      c.ts.n = n;
    else
      c.mvt.n = n;
    c.validate();
    const ProblemData d = load_problem(c);
    for (const auto &s : base.bench.samplers) {
      c.sampler = s;
      c.validate();
      std::unique_ptr<WorkerPool> pool;
      if (c.threads > 1)
        pool = std::make_unique<WorkerPool>(unsigned(c.threads));
      auto chain = make_chain(c, d, pool.get());
      Rng rng = make_stream(c.seed_value(), Stream::chain, 0);
      for (int w = 0; w < c.bench.warmup_sweeps; ++w)
        chain->sweep(rng);
      ChainTrace t;
      t.push({0, 0.0});
      for (int it = 1; it <= c.bench.timed_sweeps; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        chain->sweep(rng);
        TraceRow row;
        row.iteration = it;
        row.seconds = detail::seconds_since(t0);
        out.sweeps.emplace_back(s, n, it, row.seconds);
        t.push(row);
      }
      out.samples.push_back(runtime_sample(s, double(n), t));
    }
  }
  out.summary = runtime_summary(out.samples);
  return out;
}

inline json runtime_json(const RuntimeSummary &s) {
  json rows = json::array();
  for (const auto &r : s.rows)
    rows.push_back({{"group", r.group}, {"n", r.n}, {"mean", r.mean}, {"stddev", r.stddev},
                    {"count", r.count}});
  json slope = json::object();
  for (const auto &[g, v] : s.slope)
    slope[g] = std::isnan(v) ? json(nullptr) : json(v);
  return {{"rows", rows}, {"slope", slope}};
}

inline void write_bench(const fs::path &dir, const ExperimentConfig &c, const BenchResult &b) {
  fs::create_directories(dir);
  const std::string hash = experiment_hash(c);
  {
    CsvWriter w(dir / "bench.csv", hash, {"sampler", "n", "sweep", "wall_seconds"});
    for (const auto &[s, n, it, secs] : b.sweeps)
      w.write_row({s, std::to_string(n), std::to_string(it), fmt_double(secs)});
  }
  json j = runtime_json(b.summary);
  j["schema"] = "epgibbs.bench/1";
  j["config_hash"] = hash;
  j["config"] = config_to_json(c);
  write_json(dir / "bench.json", j);
}

// ---------------------------------------------------------------------------
// scale-mixture diagnostic
// ---------------------------------------------------------------------------

/// Level-off summary of one (C, r, delta) cell, from the median-KL rows.
struct GsmCellSummary {
  double C = 0.0, r = 0.0, delta = 0.0;
  double kl_pass2 = 0.0, kl_pass5 = 0.0;
  /// Mean median-KL over the second half of the passes, per start.
  double flat_plateau = 0.0, warm_plateau = 0.0;
  bool all_zero = true;
};

inline std::vector<GsmCellSummary> gsm_cells(const GsmDiagResult &res, int passes) {
  std::vector<GsmCellSummary> out;
  auto find = [&](double C, double r, double delta) -> GsmCellSummary & {
    for (auto &s : out)
      if (s.C == C && s.r == r && s.delta == delta)
        return s;
    out.push_back({C, r, delta});
    return out.back();
  };
  const int first = passes / 2 + 1;
  const double count = double(passes - first + 1);
  for (const auto &row : res.rows) {
    GsmCellSummary &s = find(row.C, row.r, row.delta);
    const bool flat = row.start == "flat";
    if (flat && row.pass == 2)
      s.kl_pass2 = row.median.kl;
    if (flat && row.pass == 5)
      s.kl_pass5 = row.median.kl;
    if (row.pass >= first)
      (flat ? s.flat_plateau : s.warm_plateau) += row.median.kl / count;
    if (row.pass > 0 || !flat) {
      const auto &m = row.median;
      const auto &e = row.sd;
      for (double v : {m.kl, m.mean_pe, m.mean_ape, m.var_pe, m.var_ape, e.kl, e.mean_pe,
                       e.mean_ape, e.var_pe, e.var_ape})
        if (v != 0.0)
          s.all_zero = false;
    }
  }
  return out;
}

inline void write_gsm(const fs::path &dir, const ExperimentConfig &c, const GsmDiagResult &res) {
  fs::create_directories(dir);
  const std::string hash = experiment_hash(c);
  {
    CsvWriter w(dir / "gsm.csv", hash,
                {"C", "r", "delta", "start", "pass", "kl", "kl_sd", "mean_pe", "mean_pe_sd",
                 "mean_ape", "mean_ape_sd", "var_pe", "var_pe_sd", "var_ape", "var_ape_sd"});
    for (const auto &row : res.rows) {
      const auto &m = row.median;
      const auto &e = row.sd;
      w.write_row({fmt_double(row.C), fmt_double(row.r), fmt_double(row.delta), row.start,
                   std::to_string(row.pass), fmt_double(m.kl), fmt_double(e.kl),
                   fmt_double(m.mean_pe), fmt_double(e.mean_pe), fmt_double(m.mean_ape),
                   fmt_double(e.mean_ape), fmt_double(m.var_pe), fmt_double(e.var_pe),
                   fmt_double(m.var_ape), fmt_double(e.var_ape)});
    }
  }
  json cells = json::array();
  for (const auto &s : gsm_cells(res, c.gsm.passes))
    cells.push_back({{"C", s.C},
                     {"r", s.r},
                     {"delta", s.delta},
                     {"kl_pass2", s.kl_pass2},
                     {"kl_pass5", s.kl_pass5},
                     {"flat_plateau", s.flat_plateau},
                     {"warm_plateau", s.warm_plateau},
                     {"all_zero", s.all_zero}});
  write_json(dir / "gsm.json", {{"schema", "epgibbs.gsm/1"},
                                {"config_hash", hash},
                                {"config", config_to_json(c)},
                                {"unconverged_refreshes", res.unconverged_refreshes},
                                {"site_resets", res.site_resets},
                                {"cells", cells}});
}

// ---------------------------------------------------------------------------
// eval over finished runs
// ---------------------------------------------------------------------------

/// Median final NMI per sampler and per-sweep runtime per (sampler, n) over
/// run directories written by `run`.
inline json evaluate_runs(const std::vector<fs::path> &dirs) {
  if (dirs.empty())
    throw InvalidArgument("eval: no run directories given");
  json runs = json::array();
  std::map<std::string, std::vector<double>> final_nmi;
  std::vector<RuntimeSample> samples;
  for (const auto &dir : dirs) {
    const json s = read_json(dir / "summary.json");
    const std::string sampler = s.at("sampler");
    const double n = s.at("n").get<double>();
    runs.push_back({{"dir", dir.string()},
                    {"model", s.at("model")},
                    {"sampler", sampler},
                    {"seed", s.at("seed")},
                    {"final_nmi", s.at("final_nmi")}});
    if (!s.at("final_nmi").is_null())
      final_nmi[sampler].push_back(s.at("final_nmi").get<double>());
    const CsvTable t = read_csv(dir / "timing.csv");
    ChainTrace tr;
    const std::size_t ci = t.column("iteration"), cs = t.column("wall_seconds");
    for (const auto &r : t.rows)
      tr.push({std::stoi(r[ci]), 0.0, std::numeric_limits<double>::quiet_NaN(),
               parse_double(r[cs])});
    if (!tr.sweep_seconds().empty())
      samples.push_back(runtime_sample(sampler, n, tr));
  }
  json nmi_j = json::object();
  for (const auto &[g, v] : final_nmi)
    nmi_j[g] = {{"median_final_nmi", detail::median_of(v)}, {"count", v.size()}};
  json out = {{"schema", "epgibbs.eval/1"}, {"runs", runs}, {"nmi", nmi_j}};
  out["runtime"] = samples.empty() ? json(nullptr) : runtime_json(runtime_summary(samples));
  return out;
}

/// Short name of an exception for error records.
inline std::string error_kind(const std::exception &e) {
  if (dynamic_cast<const NonPositiveCavityPrecision *>(&e))
    return "NonPositiveCavityPrecision";
  if (dynamic_cast<const InvalidCavity *>(&e))
    return "InvalidCavity";
  if (dynamic_cast<const NonFiniteMoment *>(&e))
    return "NonFiniteMoment";
  if (dynamic_cast<const NonSpdResult *>(&e))
    return "NonSpdResult";
  if (dynamic_cast<const RootNotBracketed *>(&e))
    return "RootNotBracketed";
  if (dynamic_cast<const NegativeKappa *>(&e))
    return "NegativeKappa";
  if (dynamic_cast<const SingularInnovation *>(&e))
    return "SingularInnovation";
  if (dynamic_cast<const NumericalError *>(&e))
    return "NumericalError";
  if (dynamic_cast<const AllForbidden *>(&e))
    return "AllForbidden";
  if (dynamic_cast<const LengthMismatch *>(&e))
    return "LengthMismatch";
  if (dynamic_cast<const ShapeMismatch *>(&e))
    return "ShapeMismatch";
  if (dynamic_cast<const InvalidArgument *>(&e))
    return "InvalidArgument";
  if (dynamic_cast<const json::exception *>(&e))
    return "ConfigParseError";
  if (dynamic_cast<const fs::filesystem_error *>(&e))
    return "FilesystemError";
  return "Error";
}

} // namespace epg
