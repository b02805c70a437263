#include <gtest/gtest.h>

#include <Eigen/Cholesky>
#include <cmath>
#include <cstdio>
#include <vector>

#include <epgibbs/eval_metrics.hpp>
#include <epgibbs/ts_cluster.hpp>

#include "oracles.hpp"

using namespace epg;

namespace {

SsmParams random_params(Rng &rng) {
  SsmParams p;
  p.a = draw_uniform(rng) * 1.6 - 0.8;
  p.lambda = draw_normal(rng);
  p.sigma_x2 = 0.2 + draw_uniform(rng);
  p.sigma_y2 = 0.2 + draw_uniform(rng);
  p.init_var = SsmParams::default_init_var(p.a, p.sigma_x2);
  return p;
}

SeriesData random_series(Rng &rng, Index T, double missing = 0.0) {
  VectorXd v(T);
  for (Index t = 0; t < T; ++t)
    v(t) = draw_uniform(rng) < missing ? std::nan("") : 2.0 * draw_normal(rng);
  return SeriesData::from_values(v);
}

struct Synthetic {
  std::vector<SeriesData> series;
  std::vector<int> z;
  MatrixXd eta, x;
};

/// Series drawn from the model: z_i = i mod K.
Synthetic simulate(std::uint64_t seed, int n, Index T, int K, const SsmParams &p) {
  Rng rng = make_stream(seed, Stream::data);
  Synthetic s;
  s.eta.resize(K, T);
  for (int k = 0; k < K; ++k)
    for (Index t = 0; t < T; ++t)
      s.eta(k, t) = draw_normal(rng);
  s.x.resize(n, T);
  for (int i = 0; i < n; ++i) {
    s.z.push_back(i % K);
    VectorXd y(T);
    double prev = 0.0;
    for (Index t = 0; t < T; ++t) {
      const double xt = p.transition_coef(t) * prev + p.lambda * s.eta(i % K, t) +
                        std::sqrt(p.transition_var(t)) * draw_normal(rng);
      s.x(i, t) = xt;
      y(t) = xt + std::sqrt(p.sigma_y2) * draw_normal(rng);
      prev = xt;
    }
    s.series.push_back(SeriesData::dense(y));
  }
  return s;
}

SsmParams benchmark_params() {
  SsmParams p;
  p.a = 0.95;
  p.lambda = 1.0;
  p.sigma_x2 = 0.01;
  p.sigma_y2 = 1.0;
  p.init_var = SsmParams::default_init_var(p.a, p.sigma_x2);
  return p;
}

/// Exact posterior of eta given one series with every index observed.
void dense_eta_posterior(const SeriesData &y, const SsmParams &p, VectorXd &mean,
                         VectorXd &var) {
  const Index T = y.size();
  const MatrixXd l = oracle::ar_unroll(p.a, T);
  VectorXd m;
  MatrixXd cy;
  oracle::uni_joint(p, EtaBelief::prior(T), m, cy);
  const MatrixXd cross = p.lambda * l; // Cov(y, eta)
  Eigen::LLT<MatrixXd> llt(cy);
  mean = cross.transpose() * llt.solve(y.values);
  var = (MatrixXd::Identity(T, T) - cross.transpose() * llt.solve(cross)).diagonal();
}

} // namespace

// ---------------------------------------------------------------------------
// naive z-likelihood
// ---------------------------------------------------------------------------

TEST(NaiveZLoglike, ZeroLoadingIgnoresEta) {
  Rng rng = make_stream(501, Stream::diagnostic);
  auto model = TsModel::uniform(1, 3, random_params(rng));
  model.params[0].lambda = 0.0;
  const std::vector<SeriesData> ys{random_series(rng, 6)};
  MatrixXd eta(3, 6);
  for (Index k = 0; k < 3; ++k)
    for (Index t = 0; t < 6; ++t)
      eta(k, t) = draw_normal(rng);
  const double v0 = naive_z_loglike(0, 0, eta, model, ys);
  EXPECT_NEAR(naive_z_loglike(0, 1, eta, model, ys), v0, 1e-12);
  EXPECT_NEAR(naive_z_loglike(0, 2, eta, model, ys), v0, 1e-12);
}

TEST(NaiveZLoglike, ZeroEtaIsUnshifted) {
  Rng rng = make_stream(502, Stream::diagnostic);
  const auto model = TsModel::uniform(1, 2, random_params(rng));
  const std::vector<SeriesData> ys{random_series(rng, 7)};
  EXPECT_NEAR(naive_z_loglike(0, 1, MatrixXd::Zero(2, 7), model, ys),
              uni_loglik(ys[0], model.params[0], EtaBelief::point(VectorXd::Zero(7))), 1e-12);
}

TEST(NaiveZLoglike, MatchesDenseOracle) {
  Rng rng = make_stream(503, Stream::diagnostic);
  for (int rep = 0; rep < 30; ++rep) {
    const auto model = TsModel::uniform(1, 2, random_params(rng));
    const std::vector<SeriesData> ys{random_series(rng, 5, 0.2)};
    MatrixXd eta(2, 5);
    for (Index k = 0; k < 2; ++k)
      for (Index t = 0; t < 5; ++t)
        eta(k, t) = draw_normal(rng);
    EXPECT_NEAR(naive_z_loglike(0, 1, eta, model, ys),
                oracle::dense_uni_loglik(ys[0], model.params[0],
                                         EtaBelief::point(eta.row(1).transpose())),
                1e-8);
  }
}

// ---------------------------------------------------------------------------
// collapsed z-likelihood
// ---------------------------------------------------------------------------

TEST(CollapsedZLoglike, EmptyClusterUsesPriorBelief) {
  Rng rng = make_stream(504, Stream::diagnostic);
  TsModel model;
  model.dirichlet = {1.0, 2};
  std::vector<SeriesData> ys;
  for (int i = 0; i < 3; ++i) {
    model.params.push_back(random_params(rng));
    ys.push_back(random_series(rng, 6, 0.1));
  }
  const std::vector<int> z{0, 0, -1};
  EXPECT_NEAR(collapsed_z_loglike(2, 1, z, model, ys),
              uni_loglik(ys[2], model.params[2], EtaBelief::prior(6)), 1e-10);
}

TEST(CollapsedZLoglike, ZeroLoadingMemberCarriesNoInformation) {
  Rng rng = make_stream(505, Stream::diagnostic);
  TsModel model;
  model.dirichlet = {1.0, 2};
  std::vector<SeriesData> ys;
  for (int i = 0; i < 2; ++i) {
    model.params.push_back(random_params(rng));
    ys.push_back(random_series(rng, 6));
  }
  model.params[0].lambda = 0.0;
  EXPECT_NEAR(collapsed_z_loglike(1, 0, {0, -1}, model, ys),
              collapsed_z_loglike(1, 1, {0, -1}, model, ys), 1e-10);
}

TEST(CollapsedZLoglike, MatchesDenseConditional) {
  Rng rng = make_stream(506, Stream::diagnostic);
  for (int rep = 0; rep < 20; ++rep) {
    TsModel model;
    model.dirichlet = {1.0, 2};
    std::vector<SeriesData> ys;
    for (int i = 0; i < 3; ++i) {
      model.params.push_back(random_params(rng));
      ys.push_back(random_series(rng, 4, 0.15));
    }
    const double joint = oracle::dense_cluster_loglik(ys, model.params);
    const double rest = oracle::dense_cluster_loglik({ys[0], ys[1]},
                                                     {model.params[0], model.params[1]});
    EXPECT_NEAR(collapsed_z_loglike(2, 0, {0, 0, -1}, model, ys), joint - rest, 1e-6);
  }
}

TEST(CollapsedZLoglike, OtherClustersDoNotMatter) {
  Rng rng = make_stream(507, Stream::diagnostic);
  TsModel model;
  model.dirichlet = {1.0, 3};
  std::vector<SeriesData> ys;
  for (int i = 0; i < 6; ++i) {
    model.params.push_back(random_params(rng));
    ys.push_back(random_series(rng, 5));
  }
  const double a = collapsed_z_loglike(0, 0, {-1, 0, 1, 1, 2, 2}, model, ys);
  const double b = collapsed_z_loglike(0, 0, {-1, 0, 2, 2, 1, 1}, model, ys);
  const double c = collapsed_z_loglike(0, 0, {-1, 0, 1, 2, 1, 2}, model, ys);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

// ---------------------------------------------------------------------------
// EP z-likelihood and sites
// ---------------------------------------------------------------------------

TEST(EpZLoglike, SingletonExactness) {
  Rng rng = make_stream(508, Stream::diagnostic);
  for (int rep = 0; rep < 100; ++rep) {
    const Index T = 1 + Index(draw_uniform(rng) * 8);
    TsModel model;
    model.dirichlet = {1.0, 2};
    std::vector<SeriesData> ys;
    for (int i = 0; i < 2; ++i) {
      model.params.push_back(random_params(rng));
      ys.push_back(random_series(rng, T, 0.2));
    }
    const double ep = ep_z_loglike(1, DiagGaussianTrack::standard(T), model, ys);
    EXPECT_NEAR(ep, collapsed_z_loglike(1, 1, {0, -1}, model, ys), 1e-10);
  }
}

TEST(EpZLoglike, ZeroLoadingAllThreeCoincide) {
  Rng rng = make_stream(509, Stream::diagnostic);
  TsModel model;
  model.dirichlet = {1.0, 2};
  std::vector<SeriesData> ys;
  for (int i = 0; i < 3; ++i) {
    model.params.push_back(random_params(rng));
    ys.push_back(random_series(rng, 6));
  }
  model.params[2].lambda = 0.0;
  const auto q = DiagGaussianTrack::from_moments(VectorXd::LinSpaced(6, -1, 1),
                                                 VectorXd::LinSpaced(6, 0.2, 0.9));
  MatrixXd eta = MatrixXd::Constant(2, 6, 0.7);
  const double c = collapsed_z_loglike(2, 0, {0, 0, -1}, model, ys);
  EXPECT_NEAR(ep_z_loglike(2, q, model, ys), c, 1e-10);
  EXPECT_NEAR(naive_z_loglike(2, 0, eta, model, ys), c, 1e-10);
}

TEST(EpZLoglike, RejectsImproperCavity) {
  const auto model = TsModel::uniform(1, 1, benchmark_params());
  const std::vector<SeriesData> ys{SeriesData::dense(VectorXd::Zero(3))};
  DiagGaussianTrack q = DiagGaussianTrack::standard(3);
  q.rho(1) = -0.5;
  EXPECT_THROW(ep_z_loglike(0, q, model, ys), NonPositiveCavityPrecision);
}

TEST(EpSiteUpdate, ZeroLoadingGivesZeroSite) {
  auto model = TsModel::uniform(1, 1, benchmark_params());
  model.params[0].lambda = 0.0;
  const std::vector<SeriesData> ys{SeriesData::dense(VectorXd::LinSpaced(4, 0, 1))};
  const auto s = ep_site_update_ts(0, DiagGaussianTrack::standard(4), model, ys);
  EXPECT_EQ(max_abs_diff(s, DiagGaussianTrack::zeros(4)), 0.0);
}

TEST(EpSiteUpdate, SingletonGivesExactPosterior) {
  Rng rng = make_stream(510, Stream::diagnostic);
  for (int rep = 0; rep < 20; ++rep) {
    const Index T = 1 + Index(draw_uniform(rng) * 5);
    const auto model = TsModel::uniform(1, 1, random_params(rng));
    const std::vector<SeriesData> ys{random_series(rng, T)};
    const auto prior = DiagGaussianTrack::standard(T);
    const auto q = prior + ep_site_update_ts(0, prior, model, ys);
    VectorXd m, v;
    dense_eta_posterior(ys[0], model.params[0], m, v);
    EXPECT_LT((q.mean() - m).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((q.var() - v).cwiseAbs().maxCoeff(), 1e-6);
  }
}

TEST(EpSiteUpdate, IdempotentAtFixedPoint) {
  SsmParams p = benchmark_params();
  p.a = 0.5;
  const Synthetic s = simulate(511, 3, 40, 1, p);
  const auto model = TsModel::uniform(3, 1, p);
  TsEpModel hooks(s.series, model);
  EpEngine<TsEpModel> eng(hooks,
                          ClusterState<DiagGaussianTrack>::init({0, 0, 0}, 1, hooks.prior(),
                                                                hooks.zero_site()),
                          model.dirichlet);
  const auto r = eng.full_refresh(500, 1e-12);
  EXPECT_TRUE(r.converged);
  const auto before = eng.state().q[0];
  eng.full_refresh(1, 0.0);
  EXPECT_LT(max_abs_diff(eng.state().q[0], before), 1e-10);
}

namespace {
struct RefreshedCluster {
  double ep, exact, empty;
};

/// Three series in cluster 0 refreshed to convergence, a fourth evaluated
/// against cluster 0 and against an empty cluster.
RefreshedCluster refreshed_cluster(const SsmParams &p, Index T) {
  const Synthetic s = simulate(512, 4, T, 1, p);
  const auto model = TsModel::uniform(4, 2, p);
  TsEpModel hooks(s.series, model);
  EpEngine<TsEpModel> eng(hooks,
                          ClusterState<DiagGaussianTrack>::init({0, 0, 0, 1}, 2,
                                                                hooks.prior(), hooks.zero_site()),
                          model.dirichlet);
  eng.full_refresh(2000, 1e-10);
  return {ep_z_loglike(3, eng.state().q[0], model, s.series),
          collapsed_z_loglike(3, 0, {0, 0, 0, -1}, model, s.series),
          collapsed_z_loglike(3, 1, {0, 0, 0, -1}, model, s.series)};
}
} // namespace

TEST(EpZLoglike, ExactWithoutTemporalDependence) {
  // With a = 0 the posterior of eta factorizes over t, so the diagonal
  // family contains it and the EP fixed point is exact.
  SsmParams p = benchmark_params();
  p.a = 0.0;
  p.init_var = p.sigma_x2;
  const auto r = refreshed_cluster(p, 200);
  EXPECT_NEAR(r.ep, r.exact, 1e-8);
}

TEST(EpZLoglike, ConvergedClusterNearCollapsedAtBenchmarkSetting) {
  const auto r = refreshed_cluster(benchmark_params(), 200);
  RecordProperty("ep_minus_collapsed_nats", std::to_string(r.ep - r.exact));
  std::printf("ep - collapsed = %.4f nats (gain over empty: ep %.2f, exact %.2f)\n",
              r.ep - r.exact, r.ep - r.empty, r.exact - r.empty);
  // The gap comes from dropping the temporal correlations of eta; it is
  // reported, and only the preference for the right cluster is asserted.
  EXPECT_GT(r.ep - r.empty, 0.5 * (r.exact - r.empty));
}

// ---------------------------------------------------------------------------
// conjugate conditionals
// ---------------------------------------------------------------------------

TEST(SampleEta, EmptyAndZeroLoadingAreStandardNormal) {
  Rng rng = make_stream(513, Stream::diagnostic);
  SsmParams p = benchmark_params();
  p.lambda = 0.0;
  const MatrixXd x = MatrixXd::Constant(2, 3, 5.0);
  for (int mode = 0; mode < 2; ++mode) {
    double s1 = 0.0, s2 = 0.0;
    const int n = 20000;
    for (int r = 0; r < n; ++r) {
      const VectorXd e = mode == 0 ? sample_eta_given_paths(MatrixXd(0, 3), {}, 3, rng)
                                   : sample_eta_given_paths(x, {p, p}, 3, rng);
      s1 += e(1);
      s2 += e(1) * e(1);
    }
    EXPECT_NEAR(s1 / n, 0.0, 4.0 / std::sqrt(n));
    EXPECT_NEAR(s2 / n, 1.0, 4.0 * std::sqrt(2.0 / n));
  }
}

TEST(SampleEta, SingleStepMatchesQuadrature) {
  SsmParams p = benchmark_params();
  p.lambda = 1.3;
  p.init_var = 0.4;
  const MatrixXd x = MatrixXd::Constant(1, 1, 0.9);
  // posterior of eta given x_1 = 0.9 ~ N(lambda eta, init_var), by a grid
  double z = 0.0, m1 = 0.0, m2 = 0.0;
  const double h = 1e-4;
  for (double e = -10.0; e <= 10.0; e += h) {
    const double w = std::exp(-0.5 * e * e - 0.5 * std::pow(0.9 - p.lambda * e, 2) / 0.4);
    z += w;
    m1 += w * e;
    m2 += w * e * e;
  }
  const double mean = m1 / z, var = m2 / z - mean * mean;
  Rng rng = make_stream(514, Stream::diagnostic);
  Rng copy = rng;
  const double draw = sample_eta_given_paths(x, {p}, 1, rng)(0);
  const double std_normal = draw_normal(copy);
  EXPECT_NEAR(draw, mean + std::sqrt(var) * std_normal, 1e-6);
}

TEST(SampleHyperparams, FlagOffLeavesParams) {
  const SsmParams p = benchmark_params();
  const Synthetic s = simulate(515, 4, 20, 2, p);
  auto model = TsModel::uniform(4, 2, p);
  Rng rng = make_stream(515, Stream::chain);
  sample_ts_hyperparams(s.z, s.series, s.x, s.eta, model, rng);
  for (const auto &q : model.params) {
    EXPECT_EQ(q.a, p.a);
    EXPECT_EQ(q.lambda, p.lambda);
    EXPECT_EQ(q.sigma_x2, p.sigma_x2);
    EXPECT_EQ(q.sigma_y2, p.sigma_y2);
  }
}

TEST(SampleHyperparams, RecoversAutoregressionFromNoiselessPaths) {
  SsmParams p = benchmark_params();
  p.a = 0.9;
  p.sigma_x2 = 0.05;
  p.sigma_y2 = 1e-8;
  p.init_var = SsmParams::default_init_var(p.a, p.sigma_x2);
  const Synthetic s = simulate(516, 1, 2000, 1, p);
  auto model = TsModel::uniform(1, 1, p);
  model.sample_hyperparams = true;
  model.params[0].a = 0.5;
  Rng rng = make_stream(516, Stream::chain);
  double acc = 0.0;
  const int n = 300;
  for (int r = 0; r < n + 50; ++r) {
    sample_ts_hyperparams(s.z, s.series, s.x, s.eta, model, rng);
    if (r >= 50)
      acc += model.params[0].a;
  }
  EXPECT_NEAR(acc / n, 0.9, 0.02);
  EXPECT_NEAR(model.params[0].sigma_x2, 0.05, 0.01);
}

TEST(SampleHyperparams, NoDataDrawsFromPrior) {
  auto model = TsModel::uniform(1, 1, benchmark_params());
  model.sample_hyperparams = true;
  const std::vector<SeriesData> ys{SeriesData::dense(VectorXd(0))};
  Rng rng = make_stream(517, Stream::chain);
  double sa = 0.0, saa = 0.0, sl = 0.0, sy = 0.0;
  const int n = 40000;
  for (int r = 0; r < n; ++r) {
    sample_ts_hyperparams({0}, ys, MatrixXd(1, 0), MatrixXd(1, 0), model, rng);
    sa += model.params[0].a;
    saa += model.params[0].a * model.params[0].a;
    sl += model.params[0].lambda;
    sy += 1.0 / model.params[0].sigma_y2; // Gamma(2, 1) has mean 2
  }
  EXPECT_NEAR(sa / n, 0.9, 4.0 * 0.5 / std::sqrt(n));
  EXPECT_NEAR(saa / n - (sa / n) * (sa / n), 0.25, 0.01);
  EXPECT_NEAR(sl / n, 0.0, 4.0 / std::sqrt(n));
  EXPECT_NEAR(sy / n, 2.0, 4.0 * std::sqrt(2.0 / n));
}

// ---------------------------------------------------------------------------
// samplers
// ---------------------------------------------------------------------------

TEST(TsSamplers, RecoverTwoClusters) {
  const SsmParams p = benchmark_params();
  const Synthetic s = simulate(518, 16, 100, 2, p);
  const auto model = TsModel::uniform(16, 2, p);
  Rng init = make_stream(518, Stream::init);
  const auto z0 = uniform_assignments(16, 2, init);
  {
    NaiveTsSampler smp(s.series, model, z0, init);
    Rng chain = make_stream(518, Stream::chain);
    for (int it = 0; it < 30; ++it)
      smp.sweep(chain);
    EXPECT_EQ(nmi(smp.z(), s.z), 1.0);
  }
  {
    CollapsedTsSampler smp(s.series, model, z0);
    Rng chain = make_stream(518, Stream::chain);
    for (int it = 0; it < 10; ++it)
      smp.sweep(chain);
    EXPECT_EQ(nmi(smp.z(), s.z), 1.0);
  }
  {
    EpTsSampler smp(s.series, model, z0);
    Rng chain = make_stream(518, Stream::chain);
    for (int it = 0; it < 10; ++it)
      smp.sweep(chain);
    EXPECT_EQ(nmi(smp.z(), s.z), 1.0);
  }
}

TEST(TsSamplers, EpConsistencyAfterEverySweep) {
  const SsmParams p = benchmark_params();
  const Synthetic s = simulate(519, 12, 60, 3, p);
  Rng init = make_stream(519, Stream::init);
  TsEpOptions opt;
  opt.refresh_every = 3;
  EpTsSampler smp(s.series, TsModel::uniform(12, 3, p), uniform_assignments(12, 3, init), opt);
  Rng chain = make_stream(519, Stream::chain);
  for (int it = 0; it < 8; ++it) {
    smp.sweep(chain);
    EXPECT_LT(smp.state().consistency_error(DiagGaussianTrack::standard(60)), 1e-8);
  }
}

TEST(TsSamplers, CollapsedCacheMatchesFreshLoglik) {
  const SsmParams p = benchmark_params();
  const Synthetic s = simulate(520, 9, 30, 3, p);
  Rng init = make_stream(520, Stream::init);
  auto model = TsModel::uniform(9, 3, p);
  model.sample_hyperparams = true;
  CollapsedTsSampler smp(s.series, model, uniform_assignments(9, 3, init));
  Rng chain = make_stream(520, Stream::chain);
  for (int it = 0; it < 4; ++it) {
    smp.sweep(chain);
    EXPECT_NEAR(smp.loglik(), ts_marginal_loglik(s.series, smp.z(), smp.model().params, 3),
                1e-8);
  }
}

TEST(TsSamplers, DeterministicAcrossRunsAndThreadCounts) {
  const SsmParams p = benchmark_params();
  const Synthetic s = simulate(521, 10, 40, 3, p);
  auto model = TsModel::uniform(10, 3, p);
  model.sample_hyperparams = true;
  auto run = [&](int kind, WorkerPool *pool) {
    Rng init = make_stream(521, Stream::init), chain = make_stream(521, Stream::chain);
    const auto z0 = uniform_assignments(10, 3, init);
    std::vector<double> out;
    auto record = [&](const auto &smp) {
      for (int v : smp.z())
        out.push_back(v);
      for (const auto &q : smp.model().params)
        out.push_back(q.a);
    };
    if (kind == 0) {
      NaiveTsSampler smp(s.series, model, z0, init);
      for (int it = 0; it < 4; ++it) {
        smp.sweep(chain);
        record(smp);
      }
    } else if (kind == 1) {
      CollapsedTsSampler smp(s.series, model, z0, pool);
      for (int it = 0; it < 4; ++it) {
        smp.sweep(chain);
        record(smp);
      }
    } else {
      EpTsSampler smp(s.series, model, z0, {}, pool);
      for (int it = 0; it < 4; ++it) {
        smp.sweep(chain);
        record(smp);
      }
    }
    return out;
  };
  WorkerPool pool(3);
  for (int kind = 0; kind < 3; ++kind) {
    const auto a = run(kind, nullptr);
    EXPECT_EQ(a, run(kind, nullptr));
    EXPECT_EQ(a, run(kind, &pool));
  }
}

TEST(TsSamplers, RejectInconsistentSetup) {
  const std::vector<SeriesData> ys{SeriesData::dense(VectorXd::Zero(3)),
                                   SeriesData::dense(VectorXd::Zero(4))};
  EXPECT_THROW(CollapsedTsSampler(ys, TsModel::uniform(2, 2, benchmark_params()), {0, 1}),
               LengthMismatch);
  const std::vector<SeriesData> ok{SeriesData::dense(VectorXd::Zero(3))};
  EXPECT_THROW(CollapsedTsSampler(ok, TsModel::uniform(1, 2, benchmark_params()), {2}),
               InvalidArgument);
}
