#include <gtest/gtest.h>

#include <boost/math/quadrature/gauss.hpp>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include <epgibbs/harness.hpp>


using namespace epg;

namespace {

fs::path scratch(const std::string &name) {
  const fs::path p = fs::temp_directory_path() / ("epg_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

double correlation(const VectorXd &a, const VectorXd &b) {
  const VectorXd ca = a.array() - a.mean(), cb = b.array() - b.mean();
  return ca.dot(cb) / std::sqrt(ca.squaredNorm() * cb.squaredNorm());
}

/// Innovations x_t - a x_{t-1}, t >= 1.
VectorXd innovations(const MatrixXd &x, Index i, double a) {
  const Index T = x.cols();
  VectorXd e(T - 1);
  for (Index t = 1; t < T; ++t)
    e(t - 1) = x(i, t) - a * x(i, t - 1);
  return e;
}

ExperimentConfig small_ts(const std::string &sampler, std::uint64_t seed = 11) {
  ExperimentConfig c;
  c.model = "ts";
  c.sampler = sampler;
  c.seed = seed;
  c.sweeps = 3;
  c.ts.n = 24;
  c.ts.T = 40;
  c.ts.K = 3;
  return c;
}

ExperimentConfig small_mvt(const std::string &sampler, std::uint64_t seed = 12) {
  ExperimentConfig c;
  c.model = "mvt";
  c.sampler = sampler;
  c.seed = seed;
  c.sweeps = 3;
  c.mvt.n = 60;
  c.mvt.K = 3;
  c.mvt.d = 2;
  return c;
}

std::string run_to(ExperimentConfig c, const fs::path &dir) {
  c.out = dir.string();
  run(c);
  return read_text(dir / "trace.csv");
}

/// Integral of f over the real line via a composite Gauss-Legendre rule on
/// [m - w, m + w].
template <class F> double integrate(F f, double m, double w, int pieces = 400) {
  double s = 0.0;
  const double h = 2.0 * w / pieces;
  for (int p = 0; p < pieces; ++p) {
    const double a = m - w + p * h;
    s += boost::math::quadrature::gauss<double, 20>::integrate(f, a, a + h);
  }
  return s;
}

double normal_pdf(double x, double m, double v) {
  return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2.0 * std::numbers::pi * v);
}

} // namespace

// ---------------------------------------------------------------------------
// generators
// ---------------------------------------------------------------------------

TEST(GenerateTs, DefaultSettingsShape) {
  TsGenParams g;
  g.n = 60;
  const TsDataset d = generate_ts(g, 1);
  EXPECT_EQ(d.K, 20);
  ASSERT_EQ(d.series.size(), 60u);
  for (const auto &s : d.series) {
    EXPECT_EQ(s.values.size(), 200);
    EXPECT_TRUE(s.values.allFinite());
  }
  EXPECT_EQ(d.eta.rows(), 20);
  EXPECT_EQ(d.eta.cols(), 200);
  for (int k : d.z) {
    EXPECT_GE(k, 0);
    EXPECT_LT(k, 20);
  }
  EXPECT_DOUBLE_EQ(d.params[0].a, 0.95);
  EXPECT_DOUBLE_EQ(d.params[0].sigma_x2, 0.01);
  EXPECT_DOUBLE_EQ(d.params[0].sigma_y2, 1.0);
  EXPECT_DOUBLE_EQ(d.params[0].lambda, 1.0);
}

TEST(GenerateTs, SameSeedBitwiseIdentical) {
  TsGenParams g;
  g.n = 15;
  g.T = 30;
  const TsDataset a = generate_ts(g, 42), b = generate_ts(g, 42), c = generate_ts(g, 43);
  EXPECT_EQ(a.z, b.z);
  for (std::size_t i = 0; i < a.series.size(); ++i)
    EXPECT_EQ(std::memcmp(a.series[i].values.data(), b.series[i].values.data(),
                          sizeof(double) * std::size_t(g.T)),
              0);
  EXPECT_NE(a.series[0].values, c.series[0].values);
}

TEST(GenerateTs, ZeroLoadingDecouplesInnovations) {
  TsGenParams g;
  g.n = 2;
  g.K = 1;
  g.T = 2000;
  g.lambda = 0.0;
  const TsDataset d = generate_ts(g, 7);
  EXPECT_LT(std::abs(correlation(innovations(d.x, 0, g.a), innovations(d.x, 1, g.a))), 0.1);
  // with unit loading the shared factor dominates the innovations
  g.lambda = 1.0;
  const TsDataset c = generate_ts(g, 7);
  EXPECT_GT(correlation(innovations(c.x, 0, g.a), innovations(c.x, 1, g.a)), 0.95);
}

TEST(GenerateTs, PathsFollowTheStateEquation) {
  TsGenParams g;
  g.n = 3;
  g.T = 400;
  g.K = 2;
  const TsDataset d = generate_ts(g, 9);
  // residual x_t - a x_{t-1} - lambda eta_t has variance sigma_x2
  double ss = 0.0;
  int count = 0;
  for (Index i = 0; i < 3; ++i)
    for (Index t = 1; t < g.T; ++t) {
      const double r = d.x(i, t) - g.a * d.x(i, t - 1) - g.lambda * d.eta(d.z[std::size_t(i)], t);
      ss += r * r;
      ++count;
    }
  EXPECT_NEAR(ss / count, g.sigma_x2, 0.15 * g.sigma_x2);
}

TEST(GenerateMvt, DefaultSettingsValid) {
  MvtGenParams g;
  g.n = 600;
  g.K = 20;
  g.dof = 5.0;
  const MvtDataset d = generate_mvt(g, 3);
  ASSERT_EQ(d.y.size(), 600u);
  ASSERT_EQ(d.params.size(), 20u);
  EXPECT_EQ(d.K, 20);
  for (const auto &y : d.y) {
    EXPECT_EQ(y.size(), 2);
    EXPECT_TRUE(y.allFinite());
  }
  for (const auto &p : d.params)
    EXPECT_EQ(p.sigma.llt().info(), Eigen::Success);
}

TEST(GenerateMvt, LargeDofHasGaussianKurtosis) {
  MvtGenParams g;
  g.n = 100000;
  g.K = 1;
  g.d = 3;
  g.dof = 1e8;
  const MvtDataset d = generate_mvt(g, 4);
  auto excess = [&](const MvtDataset &ds, Index j) {
    double m = 0.0;
    for (const auto &y : ds.y)
      m += y(j);
    m /= double(ds.y.size());
    double m2 = 0.0, m4 = 0.0;
    for (const auto &y : ds.y) {
      const double c = y(j) - m;
      m2 += c * c;
      m4 += c * c * c * c;
    }
    m2 /= double(ds.y.size());
    m4 /= double(ds.y.size());
    return m4 / (m2 * m2) - 3.0;
  };
  for (Index j = 0; j < 3; ++j)
    EXPECT_LT(std::abs(excess(d, j)), 0.2) << "dim " << j;
  // dof=5 has excess kurtosis 6/(dof-4) = 6 in theory; clearly heavier
  g.dof = 5.0;
  const MvtDataset t = generate_mvt(g, 4);
  EXPECT_GT(excess(t, 0), 1.0);
}

TEST(GenerateMvt, SameSeedBitwiseIdentical) {
  MvtGenParams g;
  g.n = 50;
  g.K = 4;
  const MvtDataset a = generate_mvt(g, 8), b = generate_mvt(g, 8);
  EXPECT_EQ(a.z, b.z);
  for (std::size_t i = 0; i < a.y.size(); ++i)
    EXPECT_EQ(std::memcmp(a.y[i].data(), b.y[i].data(), sizeof(double) * 2), 0);
}

TEST(GenerateMvt, SnrPresetsOrdered) {
  EXPECT_GT(MvtGenParams::snr_scale("easy"), MvtGenParams::snr_scale("medium"));
  EXPECT_GT(MvtGenParams::snr_scale("medium"), MvtGenParams::snr_scale("hard"));
  EXPECT_THROW(MvtGenParams::snr_scale("loud"), InvalidArgument);
}

// ---------------------------------------------------------------------------
// files
// ---------------------------------------------------------------------------

TEST(DatasetFiles, TsRoundTripExact) {
  TsGenParams g;
  g.n = 6;
  g.T = 12;
  g.K = 2;
  TsDataset d = generate_ts(g, 5);
  d.series[1].observed[3] = 0;
  const fs::path dir = scratch("ts_io");
  write_ts_dataset(dir, d, ts_gen_json(g), 5);
  const CsvTable t = read_csv(dir / "data.csv");
  EXPECT_EQ(t.hash.size(), 16u);
  EXPECT_EQ(t.header.front(), "t0");
  EXPECT_EQ(t.rows[1][3], "NaN");
  const TsDataset r = read_ts_dataset(dir);
  ASSERT_EQ(r.series.size(), d.series.size());
  EXPECT_EQ(r.z, d.z);
  EXPECT_EQ(r.K, d.K);
  EXPECT_FALSE(r.series[1].observed[3]);
  for (std::size_t i = 0; i < d.series.size(); ++i)
    for (Index k = 0; k < g.T; ++k)
      if (d.series[i].observed[std::size_t(k)])
        EXPECT_EQ(r.series[i].values(k), d.series[i].values(k));
  EXPECT_EQ(r.x, d.x);
  EXPECT_EQ(r.eta, d.eta);
  EXPECT_EQ(r.params[2].init_var, d.params[2].init_var);
}

TEST(DatasetFiles, MvtRoundTripExact) {
  MvtGenParams g;
  g.n = 20;
  g.K = 3;
  g.d = 3;
  const MvtDataset d = generate_mvt(g, 6);
  const fs::path dir = scratch("mvt_io");
  write_mvt_dataset(dir, d, mvt_gen_json(g), 6);
  const MvtDataset r = read_mvt_dataset(dir);
  EXPECT_EQ(r.z, d.z);
  EXPECT_EQ(r.dof, d.dof);
  for (std::size_t i = 0; i < d.y.size(); ++i)
    EXPECT_EQ(r.y[i], d.y[i]);
  for (std::size_t k = 0; k < d.params.size(); ++k) {
    EXPECT_EQ(r.params[k].mu, d.params[k].mu);
    EXPECT_EQ(r.params[k].sigma, d.params[k].sigma);
  }
}

TEST(DatasetFiles, DataWithoutTruthLoads) {
  MvtGenParams g;
  g.n = 10;
  g.K = 2;
  const fs::path dir = scratch("mvt_notruth");
  write_mvt_dataset(dir, generate_mvt(g, 1), mvt_gen_json(g), 1);
  fs::remove(dir / "truth.json");
  const MvtDataset r = read_mvt_dataset(dir);
  EXPECT_EQ(r.y.size(), 10u);
  EXPECT_TRUE(r.z.empty());
}

// ---------------------------------------------------------------------------
// config
// ---------------------------------------------------------------------------

TEST(Config, ParsesAndRejectsUnknownKeys) {
  const json j = json::parse(R"({"model":"mvt","sampler":"blocked","seed":3,
                                 "mvt":{"n":40,"K":4,"d":3,"snr":"hard"},"quad_m":32})");
  const ExperimentConfig c = config_from_json(j);
  EXPECT_EQ(c.model, "mvt");
  EXPECT_EQ(c.mvt.K, 4);
  EXPECT_EQ(c.mvt.mean_scale, 9.0);
  EXPECT_EQ(c.quad_m, 32);
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(config_from_json(json::parse(R"({"sweep":3})")), InvalidArgument);
  EXPECT_THROW(config_from_json(json::parse(R"({"ts":{"N":3}})")), InvalidArgument);
}

#ifdef EPG_CONFIG_DIR
TEST(Config, SampleConfigsLoad) {
  int seen = 0;
  for (const auto &e : fs::directory_iterator(EPG_CONFIG_DIR)) {
    if (e.path().extension() != ".json")
      continue;
    const ExperimentConfig c = config_from_json(read_json(e.path()));
    EXPECT_NO_THROW(c.validate()) << e.path();
    if (c.model == "gsm")
      EXPECT_NO_THROW(c.gsm.validate()) << e.path();
    ++seen;
  }
  EXPECT_GE(seen, 4);
}
#endif

TEST(Config, SeedRequired) {
  ExperimentConfig c;
  EXPECT_THROW(c.validate(), InvalidArgument);
  c.seed = 0;
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, InvalidCombinationsRejected) {
  auto c = small_ts("blocked");
  EXPECT_THROW(c.validate(), InvalidArgument);
  auto m = small_mvt("collapsed");
  EXPECT_THROW(m.validate(), InvalidArgument);
  auto s = small_ts("ep");
  s.sweeps = -1;
  EXPECT_THROW(s.validate(), InvalidArgument);
}

TEST(Config, HashIgnoresOutputDirAndThreads) {
  auto a = small_ts("ep"), b = a;
  b.out = "elsewhere";
  b.threads = 4;
  EXPECT_EQ(experiment_hash(a), experiment_hash(b));
  b.sweeps = 4;
  EXPECT_NE(experiment_hash(a), experiment_hash(b));
  // round trip through json keeps the hash
  EXPECT_EQ(experiment_hash(config_from_json(config_to_json(a))), experiment_hash(a));
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

TEST(Run, TsEpScaledDownShape) {
  ExperimentConfig c = small_ts("ep");
  c.ts.n = 60;
  c.ts.T = 100;
  c.ts.K = 5;
  c.sweeps = 4;
  const fs::path dir = scratch("ts_ep");
  run_to(c, dir);
  const CsvTable t = read_csv(dir / "trace.csv");
  EXPECT_EQ(t.hash, experiment_hash(c));
  EXPECT_EQ(t.header, trace_header(c));
  ASSERT_EQ(t.rows.size(), 5u);
  for (std::size_t r = 0; r < t.rows.size(); ++r)
    EXPECT_EQ(t.rows[r][0], std::to_string(r));
  const CsvTable timing = read_csv(dir / "timing.csv");
  EXPECT_EQ(timing.rows.size(), 5u);
  const json s = read_json(dir / "summary.json");
  EXPECT_EQ(s.at("schema"), "epgibbs.run/1");
  EXPECT_EQ(s.at("seed"), 11u);
  EXPECT_EQ(s.at("sweeps"), 4);
  EXPECT_TRUE(s.at("final_nmi").is_number());
  EXPECT_TRUE(s.at("mean_seconds_per_iteration").is_number());
  EXPECT_EQ(s.at("config").at("ts").at("n"), 60);
}

TEST(Run, ZeroSweepsGivesInitRowOnly) {
  ExperimentConfig c = small_mvt("naive");
  c.sweeps = 0;
  const fs::path dir = scratch("mvt_zero");
  run_to(c, dir);
  const CsvTable t = read_csv(dir / "trace.csv");
  ASSERT_EQ(t.rows.size(), 1u);
  EXPECT_EQ(t.rows[0][0], "0");
  EXPECT_TRUE(read_json(dir / "summary.json").at("mean_seconds_per_iteration").is_null());
}

TEST(Run, EverySamplerRuns) {
  for (const char *s : {"naive", "collapsed", "ep"}) {
    const RunResult r = execute(small_ts(s), load_problem(small_ts(s)));
    EXPECT_EQ(r.trace.rows.size(), 4u) << s;
    EXPECT_TRUE(std::isfinite(r.trace.rows.back().loglik)) << s;
  }
  for (const char *s : {"naive", "blocked", "ep"}) {
    const RunResult r = execute(small_mvt(s), load_problem(small_mvt(s)));
    EXPECT_EQ(r.trace.rows.size(), 4u) << s;
    EXPECT_TRUE(std::isfinite(r.trace.rows.back().loglik)) << s;
  }
}

TEST(Run, MseColumnsFollowAvailability) {
  // truth parameters are given to the sampler: a, lambda, sigma_y2 errors are 0
  ExperimentConfig c = small_ts("naive");
  const RunResult r = execute(c, load_problem(c));
  for (const auto &row : r.trace.rows) {
    ASSERT_EQ(row.mse.size(), 4u);
    EXPECT_EQ(row.mse[0].second, 0.0);
  }
  // the naive sampler draws paths at construction
  EXPECT_GT(r.trace.rows[0].mse[3].second, 0.0);
  EXPECT_GT(r.trace.rows[1].mse[3].second, 0.0);
  // collapsed never holds paths
  c.sampler = "collapsed";
  const RunResult rc = execute(c, load_problem(c));
  EXPECT_TRUE(std::isnan(rc.trace.rows.back().mse[3].second));
  // snapshot cadence
  c.sampler = "ep";
  c.sample_hyperparams = true;
  c.snapshot_every = 2;
  const RunResult re = execute(c, load_problem(c));
  EXPECT_TRUE(std::isnan(re.trace.rows[1].mse[0].second));
  EXPECT_FALSE(std::isnan(re.trace.rows[2].mse[0].second));
}

TEST(Run, LoadsDatasetFromDisk) {
  ExperimentConfig c = small_mvt("blocked");
  const fs::path data = scratch("mvt_disk_data");
  write_mvt_dataset(data, generate_mvt(c.mvt, *c.seed), mvt_gen_json(c.mvt), *c.seed);
  const std::string generated = run_to(c, scratch("mvt_gen"));
  c.data_path = data.string();
  const std::string loaded = run_to(c, scratch("mvt_disk"));
  // same data and streams; only the config hash line differs
  EXPECT_EQ(generated.substr(generated.find('\n')), loaded.substr(loaded.find('\n')));
}

TEST(Determinism, RepeatedRunsByteIdentical) {
  for (auto c : {small_ts("ep"), small_ts("naive"), small_mvt("blocked"), small_mvt("ep")}) {
    const std::string a = run_to(c, scratch("det_a"));
    const std::string b = run_to(c, scratch("det_b"));
    EXPECT_EQ(a, b) << c.model << "/" << c.sampler;
  }
}

TEST(Determinism, ThreadCountDoesNotChangeTraces) {
  for (auto c : {small_ts("ep"), small_ts("collapsed"), small_mvt("ep")}) {
    c.sweeps = 4;
    const std::string one = run_to(c, scratch("thr_1"));
    c.threads = 3;
    const std::string three = run_to(c, scratch("thr_3"));
    EXPECT_EQ(one, three) << c.model << "/" << c.sampler;
  }
}

TEST(Determinism, DifferentSeedsDiffer) {
  const std::string a = run_to(small_ts("ep", 1), scratch("seed_1"));
  const std::string b = run_to(small_ts("ep", 2), scratch("seed_2"));
  EXPECT_NE(a, b);
}

#ifdef EPG_CLI
TEST(Cli, FailureWritesErrorRecord) {
  const fs::path dir = scratch("cli_err");
  const std::string cmd = std::string(EPG_CLI) + " run --seed 1 --sampler bogus --out " +
                          dir.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  EXPECT_NE(status, 0);
  const json e = read_json(dir / "error.json");
  EXPECT_EQ(e.at("error").at("type"), "InvalidArgument");
  EXPECT_EQ(e.at("error").at("command"), "run");
}

TEST(Cli, GenerateThenRun) {
  const fs::path dir = scratch("cli_ok");
  const std::string gen = std::string(EPG_CLI) + " generate-mvt --seed 4 --n 30 --K 2 --out " +
                          (dir / "data").string() + " > /dev/null";
  ASSERT_EQ(std::system(gen.c_str()), 0);
  const fs::path cfg = dir / "cfg.json";
  write_json(cfg, {{"model", "mvt"}, {"data_path", (dir / "data").string()}});
  const std::string run_cmd = std::string(EPG_CLI) + " run --config " + cfg.string() +
                              " --seed 4 --sampler ep --sweeps 2 --quad-m 16 --out " +
                              (dir / "run").string() + " > /dev/null";
  ASSERT_EQ(std::system(run_cmd.c_str()), 0);
  EXPECT_EQ(read_csv(dir / "run" / "trace.csv").rows.size(), 3u);
  EXPECT_EQ(read_json(dir / "run" / "summary.json").at("config").at("quad_m"), 16);
}
#endif

// ---------------------------------------------------------------------------
// bench and eval
// ---------------------------------------------------------------------------

TEST(Bench, WarmupExcludedAndSlopesReported) {
  ExperimentConfig c = small_ts("ep");
  c.ts.T = 20;
  c.bench.sizes = {10, 20};
  c.bench.samplers = {"naive", "ep"};
  c.bench.warmup_sweeps = 1;
  c.bench.timed_sweeps = 3;
  const BenchResult b = bench(c);
  EXPECT_EQ(b.sweeps.size(), 2u * 2u * 3u);
  EXPECT_EQ(b.samples.size(), 4u);
  EXPECT_EQ(b.summary.slope.size(), 2u);
  const fs::path dir = scratch("bench");
  write_bench(dir, c, b);
  EXPECT_EQ(read_csv(dir / "bench.csv").rows.size(), 12u);
  EXPECT_TRUE(read_json(dir / "bench.json").at("slope").contains("ep"));
}

TEST(Eval, SummarizesRunDirectories) {
  std::vector<fs::path> dirs;
  for (std::uint64_t seed : {1, 2, 3}) {
    ExperimentConfig c = small_mvt("ep", seed);
    const fs::path d = scratch("eval_" + std::to_string(seed));
    run_to(c, d);
    dirs.push_back(d);
  }
  const json e = evaluate_runs(dirs);
  EXPECT_EQ(e.at("runs").size(), 3u);
  EXPECT_EQ(e.at("nmi").at("ep").at("count"), 3);
  std::vector<double> finals;
  for (const auto &r : e.at("runs"))
    finals.push_back(r.at("final_nmi"));
  std::sort(finals.begin(), finals.end());
  EXPECT_DOUBLE_EQ(e.at("nmi").at("ep").at("median_final_nmi").get<double>(), finals[1]);
  EXPECT_EQ(e.at("runtime").at("rows").size(), 1u);
}

// ---------------------------------------------------------------------------
// scale-mixture diagnostic
// ---------------------------------------------------------------------------

TEST(GsmModel, CandidateLoglikeMatchesQuadrature) {
  const double r = 0.3, C = 6.0, s2 = 0.7;
  const GsmEpModel m({1.3}, r, C, s2, 10.0);
  const auto cav = m.make_cavity(DiagGaussianTrack::from_moments(VectorXd::Constant(1, -0.4),
                                                                 VectorXd::Constant(1, 0.8)));
  auto lik = [&](double phi) {
    return (1 - r) * normal_pdf(1.3, phi, s2) + r * normal_pdf(1.3, phi, C * s2);
  };
  const double z = integrate([&](double p) { return normal_pdf(p, -0.4, 0.8) * lik(p); }, 0.0, 12.0);
  EXPECT_NEAR(m.candidate_loglike(0, cav), std::log(z), 1e-10);
}

TEST(GsmModel, TiltedMomentsMatchQuadrature) {
  const double r = 0.5, C = 10.0, s2 = 1.0, y = 3.0, cm = 0.2, cv = 0.5;
  const GsmEpModel m({y}, r, C, s2, 10.0);
  const auto cav_nat =
      DiagGaussianTrack::from_moments(VectorXd::Constant(1, cm), VectorXd::Constant(1, cv));
  const auto cav = m.make_cavity(cav_nat);
  auto tilted = [&](double p) {
    return normal_pdf(p, cm, cv) *
           ((1 - r) * normal_pdf(y, p, s2) + r * normal_pdf(y, p, C * s2));
  };
  const double z = integrate(tilted, 1.0, 12.0);
  const double m1 = integrate([&](double p) { return p * tilted(p); }, 1.0, 12.0) / z;
  const double m2 = integrate([&](double p) { return p * p * tilted(p); }, 1.0, 12.0) / z;
  const auto q = cav_nat + m.site_update(0, cav);
  EXPECT_NEAR(q.mean()(0), m1, 1e-10);
  EXPECT_NEAR(q.var()(0), m2 - m1 * m1, 1e-10);
}

TEST(GsmModel, ZeroOutlierWeightIsConjugate) {
  const GsmEpModel m({2.0}, 0.0, 5.0, 0.5, 10.0);
  const auto cav = m.make_cavity(DiagGaussianTrack::standard(1));
  const auto site = m.site_update(0, cav);
  // Gaussian likelihood: the site is N(phi | y, s2) in natural form
  EXPECT_NEAR(site.rho(0), 1.0 / 0.5, 1e-12);
  EXPECT_NEAR(site.h(0), 2.0 / 0.5, 1e-12);
}

TEST(GsmErrors, EmptyClusterAtPriorCountsAsExact) {
  const DiagGaussianTrack prior{VectorXd::Zero(1), VectorXd::Constant(1, 0.1)};
  const DiagGaussianTrack fit{VectorXd::Constant(1, 3.0), VectorXd::Constant(1, 2.0)};
  const GsmErrors e = gsm_errors({prior, fit}, {prior, fit});
  EXPECT_EQ(e.kl, 0.0);
  EXPECT_EQ(e.mean_pe, 0.0);
  EXPECT_EQ(e.mean_ape, 0.0);
  EXPECT_EQ(e.var_pe, 0.0);
  const DiagGaussianTrack off{VectorXd::Constant(1, 3.3), VectorXd::Constant(1, 2.0)};
  EXPECT_NEAR(gsm_errors({prior, off}, {prior, fit}).mean_ape, 5.0, 1e-12);
}

TEST(GsmDiag, ZeroOutlierRowsReportZero) {
  GsmDiagOptions o;
  o.C = {2.0, 10.0};
  o.r = {0.0};
  o.delta = {0.0, 0.5};
  o.replicates = 10;
  o.passes = 6;
  const GsmDiagResult res = gsm_diagnostic(o, 21);
  for (const auto &row : res.rows) {
    if (row.start == "flat" && row.pass == 0)
      continue;
    EXPECT_EQ(row.median.kl, 0.0);
    EXPECT_EQ(row.median.mean_ape, 0.0);
    EXPECT_EQ(row.median.var_ape, 0.0);
    EXPECT_EQ(row.sd.kl, 0.0);
  }
  for (const auto &s : gsm_cells(res, o.passes))
    EXPECT_TRUE(s.all_zero);
}

TEST(GsmDiag, WarmStartStartsAtZeroAndPlateausWithFlat) {
  GsmDiagOptions o;
  o.C = {5.0};
  o.r = {0.5};
  o.delta = {0.5};
  const GsmDiagResult res = gsm_diagnostic(o, 22);
  for (const auto &row : res.rows)
    if (row.start == "full_ep" && row.pass == 0)
      EXPECT_EQ(row.median.kl, 0.0);
  const auto cells = gsm_cells(res, o.passes);
  ASSERT_EQ(cells.size(), 1u);
  const auto &s = cells[0];
  EXPECT_GT(s.kl_pass2, 0.0);
  EXPECT_LE(s.kl_pass5, 2.0 * s.kl_pass2);
  const double ratio = s.warm_plateau / s.flat_plateau;
  RecordProperty("plateau_ratio", std::to_string(ratio));
  EXPECT_GE(ratio, 0.5);
  EXPECT_LE(ratio, 2.0);
  EXPECT_FALSE(s.all_zero);
}

TEST(GsmDiag, FlatStartFirstPassIsLargest) {
  GsmDiagOptions o;
  o.C = {10.0};
  o.r = {0.2};
  o.delta = {0.0};
  o.replicates = 50;
  o.passes = 6;
  const GsmDiagResult res = gsm_diagnostic(o, 23);
  double pass1 = 0.0, later = 0.0;
  for (const auto &row : res.rows)
    if (row.start == "flat") {
      if (row.pass == 1)
        pass1 = row.median.kl;
      if (row.pass >= 3)
        later = std::max(later, row.median.kl);
    }
  EXPECT_GT(pass1, later);
}

TEST(GsmDiag, WritesTables) {
  ExperimentConfig c;
  c.model = "gsm";
  c.seed = 1;
  c.gsm.C = {2.0};
  c.gsm.r = {0.0, 0.5};
  c.gsm.delta = {0.5};
  c.gsm.replicates = 4;
  c.gsm.passes = 5;
  const GsmDiagResult res = gsm_diagnostic(c.gsm, 1);
  const fs::path dir = scratch("gsm");
  write_gsm(dir, c, res);
  const CsvTable t = read_csv(dir / "gsm.csv");
  EXPECT_EQ(t.rows.size(), 2u * 2u * 6u);
  EXPECT_EQ(t.header[5], "kl");
  EXPECT_EQ(read_json(dir / "gsm.json").at("cells").size(), 2u);
}
