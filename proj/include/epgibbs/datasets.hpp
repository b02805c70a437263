#pragma once

// Synthetic data for the two case studies and the 1-D scale-mixture
// diagnostic. Every generator draws from a single data stream of the seed,
// so (params, seed) fixes the output bit for bit.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "gibbs_core.hpp"
#include "kalman.hpp"
#include "mvt_mixture.hpp"
#include "random.hpp"

namespace epg {

struct TsGenParams {
  int n = 100;
  Index T = 200;
  int K = 20;
  double sigma_x2 = 0.01;
  double sigma_y2 = 1.0;
  double a = 0.95;
  double lambda = 1.0;

  void validate() const {
    if (n < 1 || T < 1 || K < 1)
      throw InvalidArgument("generate_ts: sizes must be positive");
    if (!(sigma_x2 > 0.0) || !(sigma_y2 > 0.0))
      throw InvalidArgument("generate_ts: variances must be positive");
  }
  /// Shared per-series parameters, init_var at the stationary value.
  SsmParams ssm() const {
    SsmParams p;
    p.a = a;
    p.lambda = lambda;
    p.sigma_x2 = sigma_x2;
    p.sigma_y2 = sigma_y2;
    p.init_var = SsmParams::default_init_var(a, sigma_x2);
    return p;
  }
};

struct TsDataset {
  std::vector<SeriesData> series;
  std::vector<int> z;
  MatrixXd eta; ///< K x T
  MatrixXd x;   ///< n x T
  std::vector<SsmParams> params;
  int K = 0;

  Index length() const { return series.empty() ? 0 : series.front().values.size(); }
};

/// z uniform, eta_{k,t} ~ N(0,1), then x and y forward in time.
inline TsDataset generate_ts(const TsGenParams &g, std::uint64_t seed) {
  g.validate();
  Rng rng = make_stream(seed, Stream::data);
  TsDataset d;
  d.K = g.K;
  d.z = uniform_assignments(std::size_t(g.n), g.K, rng);
  d.eta.resize(g.K, g.T);
  for (int k = 0; k < g.K; ++k)
    for (Index t = 0; t < g.T; ++t)
      d.eta(k, t) = draw_normal(rng);
  const SsmParams p = g.ssm();
  d.params.assign(std::size_t(g.n), p);
  d.x.resize(g.n, g.T);
  for (int i = 0; i < g.n; ++i) {
    VectorXd y(g.T);
    double prev = 0.0;
    for (Index t = 0; t < g.T; ++t) {
      const double xt = p.transition_coef(t) * prev +
                        p.lambda * d.eta(d.z[std::size_t(i)], t) +
                        std::sqrt(p.transition_var(t)) * draw_normal(rng);
      d.x(i, t) = xt;
      y(t) = xt + std::sqrt(p.sigma_y2) * draw_normal(rng);
      prev = xt;
    }
    d.series.push_back(SeriesData::dense(std::move(y)));
  }
  return d;
}

struct MvtGenParams {
  int n = 600;
  int K = 20;
  Index d = 2;
  double dof = 5.0;
  /// mu_k ~ N(0, mean_scale * Sigma_k); larger is easier.
  double mean_scale = 100.0;

  static double snr_scale(const std::string &name) {
    if (name == "easy")
      return 100.0;
    if (name == "medium")
      return 25.0;
    if (name == "hard")
      return 9.0;
    throw InvalidArgument("unknown SNR setting '" + name + "'");
  }

  void validate() const {
    if (n < 1 || K < 1 || d < 1)
      throw InvalidArgument("generate_mvt: sizes must be positive");
    if (!(dof > 0.0) || !(mean_scale > 0.0))
      throw InvalidArgument("generate_mvt: dof and mean_scale must be positive");
  }
};

struct MvtDataset {
  std::vector<VectorXd> y;
  std::vector<int> z;
  std::vector<MvtClusterParams> params;
  int K = 0;
  double dof = 0.0;

  Index dim() const { return y.empty() ? 0 : y.front().size(); }
};

/// Sigma_k ~ IW(d+2, I), mu_k ~ N(0, mean_scale Sigma_k); y = mu + Sigma^(1/2) e / sqrt(u)
/// with u ~ Gamma(dof/2, dof/2).
inline MvtDataset generate_mvt(const MvtGenParams &g, std::uint64_t seed) {
  g.validate();
  Rng rng = make_stream(seed, Stream::data);
  MvtDataset out;
  out.K = g.K;
  out.dof = g.dof;
  std::vector<MatrixXd> chol;
  for (int k = 0; k < g.K; ++k) {
    MvtClusterParams p;
    p.sigma = draw_inv_wishart(rng, double(g.d) + 2.0, MatrixXd::Identity(g.d, g.d));
    p.mu = draw_mvn(rng, VectorXd::Zero(g.d), g.mean_scale * p.sigma);
    chol.push_back(p.sigma.llt().matrixL());
    out.params.push_back(std::move(p));
  }
  out.z = uniform_assignments(std::size_t(g.n), g.K, rng);
  for (int i = 0; i < g.n; ++i) {
    const int k = out.z[std::size_t(i)];
    const double u = draw_gamma(rng, 0.5 * g.dof, 0.5 * g.dof);
    const VectorXd e = draw_std_normal(rng, g.d);
    out.y.push_back(out.params[std::size_t(k)].mu + chol[std::size_t(k)] * e / std::sqrt(u));
  }
  return out;
}

/// Two-component Gaussian scale mixture per cluster:
/// p(y | phi) = (1-r) N(y | phi, s2) + r N(y | phi, C s2).
struct GsmGenParams {
  int n = 100;
  double r = 0.2;
  double C = 5.0;
  /// Separation (phi_1 - phi_2) in units of the within-component variance.
  double delta = 0.5;
  double sigma2 = 1.0;

  double within_var() const { return (1.0 - r) * sigma2 + r * C * sigma2; }
  void validate() const {
    if (n < 1 || !(sigma2 > 0.0) || !(C > 0.0) || r < 0.0 || r > 1.0)
      throw InvalidArgument("generate_gsm: invalid parameters");
  }
};

struct GsmDataset {
  std::vector<double> y;
  std::vector<int> z;
  double phi[2] = {0.0, 0.0};
};

inline GsmDataset generate_gsm(const GsmGenParams &g, Rng &rng) {
  g.validate();
  GsmDataset d;
  const double gap = g.delta * g.within_var();
  d.phi[0] = 0.5 * gap;
  d.phi[1] = -0.5 * gap;
  d.z = uniform_assignments(std::size_t(g.n), 2, rng);
  for (int k : d.z) {
    const double s2 = draw_uniform(rng) < g.r ? g.C * g.sigma2 : g.sigma2;
    d.y.push_back(d.phi[k] + std::sqrt(s2) * draw_normal(rng));
  }
  return d;
}

} // namespace epg
