#pragma once

// Mixtures of multivariate Student-t: the density, the naive and blocked
// data-augmentation samplers, and the EP hooks that integrate the scale u
// numerically instead of sampling it.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <vector>

#include "errors.hpp"
#include "expfam_gauss.hpp"
#include "gibbs_core.hpp"
#include "random.hpp"

namespace epg {

using Eigen::ArrayXd;

/// Standard multivariate Student-t log-density with scale matrix Sigma.
inline double mvt_logpdf(const VectorXd &y, const VectorXd &mu,
                         const MatrixXd &sigma, double dof) {
  const Index d = y.size();
  if (mu.size() != d || sigma.rows() != d || sigma.cols() != d)
    throw ShapeMismatch("mvt_logpdf: dimension mismatch");
  if (!(dof > 0.0))
    throw InvalidArgument("mvt_logpdf: dof must be positive");
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success)
    throw NonSpdResult("mvt_logpdf: Sigma not positive definite");
  const double q = llt.matrixL().solve(y - mu).squaredNorm();
  const double log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  const double dd = double(d);
  return std::lgamma(0.5 * (dof + dd)) - std::lgamma(0.5 * dof) -
         0.5 * dd * std::log(dof * std::numbers::pi) - 0.5 * log_det -
         0.5 * (dof + dd) * std::log1p(q / dof);
}

inline double gauss_logpdf_scaled(const VectorXd &y, const VectorXd &mu,
                                  const Eigen::LLT<MatrixXd> &sigma_llt,
                                  double log_det, double u) {
  const double d = double(y.size());
  const double q = sigma_llt.matrixL().solve(y - mu).squaredNorm();
  return -0.5 * d * std::log(2.0 * std::numbers::pi) - 0.5 * log_det +
         0.5 * d * std::log(u) - 0.5 * u * q;
}

struct MvtConfig {
  Index d = 1;
  /// Student-t degrees of freedom (2 alpha).
  double dof = 5.0;
  NiwParams prior;
  int quad_m = 64;

  /// mu0 = 0, kappa0 = 1, nu0 = d + 2, psi0 = I.
  static MvtConfig defaults(Index d, double dof, int quad_m = 64) {
    MvtConfig c;
    c.d = d;
    c.dof = dof;
    c.quad_m = quad_m;
    c.prior = {VectorXd::Zero(d), 1.0, double(d) + 2.0, MatrixXd::Identity(d, d)};
    return c;
  }

  double alpha() const noexcept { return 0.5 * dof; }

  void validate() const {
    if (!(dof > 0.0))
      throw InvalidArgument("MvtConfig: dof must be positive");
    if (quad_m < 1)
      throw InvalidArgument("MvtConfig: quadrature size must be >= 1");
    if (prior.dim() != d)
      throw ShapeMismatch("MvtConfig: prior dimension differs from d");
    prior.validate();
  }

  QuadGrid grid() const { return gamma_quadrature(alpha(), quad_m); }
};

struct MvtClusterParams {
  VectorXd mu;
  MatrixXd sigma;
};

/// Quadrature nodes with logs precomputed for vectorized evaluation.
struct ScaleGrid {
  ArrayXd u, log_u, log_w;

  explicit ScaleGrid(const QuadGrid &g) {
    const auto m = Index(g.size());
    u.resize(m);
    log_w.resize(m);
    for (Index i = 0; i < m; ++i) {
      u(i) = g.nodes[std::size_t(i)];
      log_w(i) = std::log(g.weights[std::size_t(i)]);
    }
    log_u = u.log();
  }
  Index size() const noexcept { return u.size(); }
};

/// NIW predictive of a single weighted observation: the Student-t with
/// nu-d+1 degrees of freedom and scale psi (kappa+u)/(kappa u (nu-d+1)).
class NiwPredictive {
public:
  explicit NiwPredictive(NiwParams p) : p_(std::move(p)) {
    llt_.compute(p_.psi);
    if (llt_.info() != Eigen::Success)
      throw InvalidCavity("NiwPredictive: psi not positive definite");
    log_det_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    const double d = double(p_.dim());
    c0_ = std::lgamma(0.5 * (p_.nu + 1.0)) - std::lgamma(0.5 * (p_.nu + 1.0 - d)) -
          0.5 * d * std::log(std::numbers::pi) - 0.5 * log_det_;
    log_kappa_ = std::log(p_.kappa);
  }

  const NiwParams &params() const noexcept { return p_; }
  const Eigen::LLT<MatrixXd> &psi_llt() const noexcept { return llt_; }
  double log_det_psi() const noexcept { return log_det_; }

  /// (y - mu)^T psi^{-1} (y - mu)
  double quad(const VectorXd &y) const {
    return llt_.matrixL().solve(y - p_.mu).squaredNorm();
  }

  double log_weight(double u, double q) const {
    const double c = p_.kappa * u / (p_.kappa + u);
    return c0_ + 0.5 * double(p_.dim()) * std::log(c) -
           0.5 * (p_.nu + 1.0) * std::log1p(c * q);
  }

  /// Per-node log w_m + log p(y | u_m). log1p(x) is taken as log(1 + x):
  /// the absolute error is below one ulp of 1, which is what the weights
  /// need, and it keeps the loop vectorized.
  ArrayXd node_log_weights(const ScaleGrid &g, double q) const {
    const ArrayXd kpu = p_.kappa + g.u;
    const ArrayXd c = p_.kappa * g.u / kpu;
    return c0_ + g.log_w +
           0.5 * double(p_.dim()) * (log_kappa_ + g.log_u - kpu.log()) -
           0.5 * (p_.nu + 1.0) * (1.0 + c * q).log();
  }

private:
  NiwParams p_;
  Eigen::LLT<MatrixXd> llt_;
  double log_det_ = 0.0;
  double c0_ = 0.0;
  double log_kappa_ = 0.0;
};

inline double log_sum_exp(const ArrayXd &a) {
  const double m = a.maxCoeff();
  if (!std::isfinite(m))
    return m;
  return m + std::log((a - m).exp().sum());
}

/// u-conditioned collapsed weight log t(y | mu_p, psi_p (kappa_p+u) /
/// (kappa_p u (nu_p-d+1)), nu_p-d+1).
inline double blocked_z_logweight(const VectorXd &y, double u,
                                  const NiwParams &cavity) {
  const NiwPredictive pred(cavity);
  return pred.log_weight(u, pred.quad(y));
}

/// log sum_m w_m exp(blocked_z_logweight(y, u_m, cavity)).
inline double ep_collapsed_loglike(const VectorXd &y, const NiwPredictive &cavity,
                                   const ScaleGrid &grid) {
  return log_sum_exp(cavity.node_log_weights(grid, cavity.quad(y)));
}

inline double ep_collapsed_loglike(const VectorXd &y, const NiwParams &cavity,
                                   const MvtConfig &config) {
  return ep_collapsed_loglike(y, NiwPredictive(cavity), ScaleGrid(config.grid()));
}

/// Tilted-moment projection of cavity x t-likelihood onto the NIW family.
struct NiwProjection {
  /// Moments about the cavity mean (m1, m2 shifted; m3, m4 unchanged).
  NiwMoments centered;
  VectorXd origin;
  double log_z = 0.0;

  /// Moments in the original coordinates.
  NiwMoments moments() const {
    NiwMoments m = centered;
    m.m1 = centered.m1 + centered.m3 * origin;
    m.m2 = centered.m2 + 2.0 * origin.dot(centered.m1) +
           origin.dot(centered.m3 * origin);
    return m;
  }

  /// Matched NIW; inverted in centered coordinates to avoid cancellation.
  NiwParams matched() const {
    NiwParams p = niw_from_moments(centered);
    p.mu += origin;
    return p;
  }
};

/// Mixture over grid nodes of the single-observation NIW posteriors. Every
/// node differs from the cavity by a rank-one update, so the expectations
/// reduce to weighted sums of scalars: O(M + d^2) after the O(d^3) setup.
inline NiwProjection ep_tilted_projection(const VectorXd &y,
                                          const NiwPredictive &cavity,
                                          const ScaleGrid &grid) {
  const NiwParams &p = cavity.params();
  const Index d = p.dim();
  const VectorXd delta = y - p.mu;
  const VectorXd v = cavity.psi_llt().solve(delta);
  const double q = delta.dot(v);
  const ArrayXd lw = cavity.node_log_weights(grid, q);
  const double lz = log_sum_exp(lw);
  const ArrayXd pi = (lw - lz).exp();

  const ArrayXd kpu = p.kappa + grid.u;
  const ArrayXd a = grid.u / kpu;
  const ArrayXd c = p.kappa * a;
  const ArrayXd one_cq = 1.0 + c * q;
  const double e_a1 = (pi * a / one_cq).sum();
  const double e_a2 = (pi * a * a / one_cq).sum();
  const double e_b = (pi * c / one_cq).sum();
  const double e_inv_kappa = (pi / kpu).sum();
  double e_log1p = 0.0;
  for (Index m = 0; m < grid.size(); ++m)
    e_log1p += pi(m) * std::log1p(c(m) * q);

  const double nu1 = p.nu + 1.0;
  const MatrixXd psi_inv = cavity.psi_llt().solve(MatrixXd::Identity(d, d));
  NiwProjection out;
  out.origin = p.mu;
  out.log_z = lz;
  out.centered.m3 = nu1 * (psi_inv - e_b * v * v.transpose());
  out.centered.m3 = 0.5 * (out.centered.m3 + out.centered.m3.transpose());
  out.centered.m1 = nu1 * e_a1 * v;
  out.centered.m2 = nu1 * q * e_a2 + double(d) * e_inv_kappa;
  out.centered.m4 = mv_digamma(0.5 * nu1, d) + double(d) * std::log(2.0) -
                    cavity.log_det_psi() - e_log1p;
  return out;
}

inline NiwMoments ep_tilted_niw_moments(const VectorXd &y, const NiwParams &cavity,
                                        const MvtConfig &config) {
  return ep_tilted_projection(y, NiwPredictive(cavity), ScaleGrid(config.grid()))
      .moments();
}

// ---------------------------------------------------------------------------
// EP hooks
// ---------------------------------------------------------------------------

inline std::vector<VectorXd> rows_of(const MatrixXd &y) {
  std::vector<VectorXd> out;
  out.reserve(std::size_t(y.rows()));
  for (Index i = 0; i < y.rows(); ++i)
    out.emplace_back(y.row(i).transpose());
  return out;
}

/// Case-study hooks for EpEngine: q_k is an NIW kept in natural form.
class MvtEpModel {
public:
  using Approx = NiwNatural;
  struct Cavity {
    NiwNatural nat;
    NiwPredictive pred;
  };

  MvtEpModel(std::vector<VectorXd> y, MvtConfig config)
      : y_(std::move(y)), config_(std::move(config)), grid_(config_.grid()),
        prior_nat_(to_natural(config_.prior)) {
    config_.validate();
    for (const auto &v : y_)
      if (v.size() != config_.d)
        throw ShapeMismatch("MvtEpModel: observation dimension differs from d");
  }

  std::size_t num_items() const { return y_.size(); }
  const MvtConfig &config() const noexcept { return config_; }
  const std::vector<VectorXd> &data() const noexcept { return y_; }
  Approx prior() const { return prior_nat_; }
  Approx zero_site() const { return NiwNatural::zeros(config_.d); }

  Cavity make_cavity(const Approx &a) const {
    return {a, NiwPredictive(from_natural(a))};
  }

  double candidate_loglike(std::size_t i, const Cavity &c) const {
    return ep_collapsed_loglike(y_[i], c.pred, grid_);
  }

  Approx site_update(std::size_t i, const Cavity &c) const {
    const NiwProjection proj = ep_tilted_projection(y_[i], c.pred, grid_);
    return to_natural(proj.matched()) - c.nat;
  }

  /// Plug-in parameters of an approximation: (mu, E[Sigma]).
  MvtClusterParams point_estimate(const Approx &a) const {
    const NiwParams p = from_natural(a);
    const double den = p.nu - double(p.dim()) - 1.0;
    return {p.mu, den > 0.0 ? MatrixXd(p.psi / den) : MatrixXd(p.psi / p.nu)};
  }

private:
  std::vector<VectorXd> y_;
  MvtConfig config_;
  ScaleGrid grid_;
  NiwNatural prior_nat_;
};

/// Sum of t log-densities of each item under its cluster's parameters.
inline double mvt_mixture_loglik(const std::vector<VectorXd> &y,
                                 const std::vector<int> &z,
                                 const std::vector<MvtClusterParams> &params,
                                 double dof) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    const auto &p = params[std::size_t(z[i])];
    s += mvt_logpdf(y[i], p.mu, p.sigma, dof);
  }
  return s;
}

/// (mu, Sigma) ~ NIW(p).
inline MvtClusterParams draw_niw(Rng &rng, const NiwParams &p) {
  MvtClusterParams out;
  out.sigma = draw_inv_wishart(rng, p.nu, p.psi);
  out.mu = draw_mvn(rng, p.mu, out.sigma / p.kappa);
  return out;
}

// ---------------------------------------------------------------------------
// Data-augmentation samplers
// ---------------------------------------------------------------------------

namespace detail {

struct GaussCache {
  Eigen::LLT<MatrixXd> llt;
  double log_det = 0.0;

  explicit GaussCache(const MatrixXd &sigma) : llt(sigma) {
    if (llt.info() != Eigen::Success)
      throw NonSpdResult("Sigma not positive definite");
    log_det = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
};

inline NiwParams posterior_of(const NiwParams &prior,
                              const std::vector<VectorXd> &y,
                              const std::vector<int> &z, const VectorXd &u,
                              int k) {
  std::vector<WeightedObs> obs;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (z[i] == k)
      obs.push_back({y[i], u(Index(i))});
  return niw_posterior_update(prior, obs);
}

/// Gamma(alpha + d/2, alpha + delta^T Sigma^{-1} delta / 2).
inline double draw_assigned_scale(Rng &rng, double alpha, const VectorXd &y,
                                  const VectorXd &mu, const GaussCache &g) {
  const double q = g.llt.matrixL().solve(y - mu).squaredNorm();
  return draw_gamma(rng, alpha + 0.5 * double(y.size()), alpha + 0.5 * q);
}

} // namespace detail

/// Shared state of the naive and blocked samplers.
struct MvtAugState {
  std::vector<int> z;
  std::vector<MvtClusterParams> params;
  /// Scale of each item in its own cluster.
  VectorXd u;
  /// All N x K scales; only used in strict-materialization mode.
  MatrixXd u_all;
};

/// Gibbs on (z, mu, Sigma, u): z from the u-scaled Gaussian, then NIW
/// draws, then the scales.
class NaiveMvtSampler {
public:
  NaiveMvtSampler(std::vector<VectorXd> y, MvtConfig config, DirichletPrior prior,
                  std::vector<int> z0, Rng &init_rng, bool strict = false)
      : y_(std::move(y)), cfg_(std::move(config)), prior_(prior), strict_(strict) {
    cfg_.validate();
    prior_.validate();
    if (z0.size() != y_.size())
      throw LengthMismatch("NaiveMvtSampler: z0 length differs from data");
    const Index n = Index(y_.size());
    s_.z = std::move(z0);
    s_.u.resize(n);
    for (Index i = 0; i < n; ++i)
      s_.u(i) = draw_gamma(init_rng, cfg_.alpha(), cfg_.alpha());
    if (strict_) {
      s_.u_all.resize(n, prior_.k);
      for (Index i = 0; i < n; ++i)
        for (int k = 0; k < prior_.k; ++k)
          s_.u_all(i, k) = draw_gamma(init_rng, cfg_.alpha(), cfg_.alpha());
      for (Index i = 0; i < n; ++i)
        s_.u_all(i, s_.z[std::size_t(i)]) = s_.u(i);
    }
    draw_params(init_rng);
  }

  const MvtAugState &state() const noexcept { return s_; }
  const std::vector<int> &z() const noexcept { return s_.z; }
  const std::vector<MvtClusterParams> &params() const noexcept { return s_.params; }
  double loglik() const { return mvt_mixture_loglik(y_, s_.z, s_.params, cfg_.dof); }

  void sweep(Rng &rng) {
    const int K = prior_.k;
    std::vector<detail::GaussCache> cache;
    cache.reserve(std::size_t(K));
    for (const auto &p : s_.params)
      cache.emplace_back(p.sigma);
    std::vector<int> counts = counts_of(s_.z, K);
    VectorXd ll(K), uk(K);
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const int k_old = s_.z[i];
      for (int k = 0; k < K; ++k) {
        if (strict_)
          uk(k) = s_.u_all(Index(i), k);
        else
          uk(k) = k == k_old ? s_.u(Index(i))
                             : draw_gamma(rng, cfg_.alpha(), cfg_.alpha());
        ll(k) = gauss_logpdf_scaled(y_[i], s_.params[std::size_t(k)].mu,
                                    cache[std::size_t(k)].llt,
                                    cache[std::size_t(k)].log_det, uk(k));
      }
      --counts[std::size_t(k_old)];
      const int k_new = sample_assignment(log_prior_weights(counts, prior_), ll, rng);
      ++counts[std::size_t(k_new)];
      s_.z[i] = k_new;
      s_.u(Index(i)) = uk(k_new);
    }
    draw_params(rng);
    // scales given (z, mu, Sigma)
    cache.clear();
    for (const auto &p : s_.params)
      cache.emplace_back(p.sigma);
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const int k = s_.z[i];
      s_.u(Index(i)) = detail::draw_assigned_scale(
          rng, cfg_.alpha(), y_[i], s_.params[std::size_t(k)].mu, cache[std::size_t(k)]);
      if (strict_)
        for (int j = 0; j < K; ++j)
          s_.u_all(Index(i), j) = j == k ? s_.u(Index(i))
                                         : draw_gamma(rng, cfg_.alpha(), cfg_.alpha());
    }
  }

private:
  void draw_params(Rng &rng) {
    s_.params.resize(std::size_t(prior_.k));
    for (int k = 0; k < prior_.k; ++k)
      s_.params[std::size_t(k)] =
          draw_niw(rng, detail::posterior_of(cfg_.prior, y_, s_.z, s_.u, k));
  }

  std::vector<VectorXd> y_;
  MvtConfig cfg_;
  DirichletPrior prior_;
  bool strict_;
  MvtAugState s_;
};

/// Partially collapsed: (z, mu, Sigma) | u as a block with mu, Sigma
/// integrated out of the z updates, then u | z, mu, Sigma.
class BlockedMvtSampler {
public:
  BlockedMvtSampler(std::vector<VectorXd> y, MvtConfig config, DirichletPrior prior,
                    std::vector<int> z0, Rng &init_rng, bool strict = false)
      : y_(std::move(y)), cfg_(std::move(config)), prior_(prior), strict_(strict) {
    cfg_.validate();
    prior_.validate();
    if (z0.size() != y_.size())
      throw LengthMismatch("BlockedMvtSampler: z0 length differs from data");
    const Index n = Index(y_.size());
    s_.z = std::move(z0);
    s_.u.resize(n);
    for (Index i = 0; i < n; ++i)
      s_.u(i) = draw_gamma(init_rng, cfg_.alpha(), cfg_.alpha());
    if (strict_) {
      s_.u_all.resize(n, prior_.k);
      for (Index i = 0; i < n; ++i)
        for (int k = 0; k < prior_.k; ++k)
          s_.u_all(i, k) = draw_gamma(init_rng, cfg_.alpha(), cfg_.alpha());
      for (Index i = 0; i < n; ++i)
        s_.u_all(i, s_.z[std::size_t(i)]) = s_.u(i);
    }
    rebuild_stats();
    draw_params(init_rng);
  }

  const MvtAugState &state() const noexcept { return s_; }
  const std::vector<int> &z() const noexcept { return s_.z; }
  const std::vector<MvtClusterParams> &params() const noexcept { return s_.params; }
  double loglik() const { return mvt_mixture_loglik(y_, s_.z, s_.params, cfg_.dof); }

  void sweep(Rng &rng) {
    const int K = prior_.k;
    std::vector<std::optional<NiwPredictive>> pred(static_cast<std::size_t>(K));
    auto prepared = [&](int k) -> const NiwPredictive & {
      auto &slot = pred[std::size_t(k)];
      if (!slot)
        slot.emplace(from_natural(stats_[std::size_t(k)]));
      return *slot;
    };
    std::vector<int> counts = counts_of(s_.z, K);
    VectorXd ll(K), uk(K);
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const int k_old = s_.z[i];
      const NiwNatural own_obs = NiwNatural::observation(y_[i], s_.u(Index(i)));
      stats_[std::size_t(k_old)] -= own_obs;
      pred[std::size_t(k_old)].reset();
      for (int k = 0; k < K; ++k) {
        if (strict_)
          uk(k) = s_.u_all(Index(i), k);
        else
          uk(k) = k == k_old ? s_.u(Index(i))
                             : draw_gamma(rng, cfg_.alpha(), cfg_.alpha());
        const NiwPredictive &p = prepared(k);
        ll(k) = p.log_weight(uk(k), p.quad(y_[i]));
      }
      --counts[std::size_t(k_old)];
      const int k_new = sample_assignment(log_prior_weights(counts, prior_), ll, rng);
      ++counts[std::size_t(k_new)];
      s_.z[i] = k_new;
      s_.u(Index(i)) = uk(k_new);
      stats_[std::size_t(k_new)] += NiwNatural::observation(y_[i], uk(k_new));
      pred[std::size_t(k_new)].reset();
    }
    draw_params(rng);
    std::vector<detail::GaussCache> cache;
    cache.reserve(std::size_t(K));
    for (const auto &p : s_.params)
      cache.emplace_back(p.sigma);
    for (std::size_t i = 0; i < y_.size(); ++i) {
      const int k = s_.z[i];
      s_.u(Index(i)) = detail::draw_assigned_scale(
          rng, cfg_.alpha(), y_[i], s_.params[std::size_t(k)].mu, cache[std::size_t(k)]);
      if (strict_)
        for (int j = 0; j < K; ++j)
          s_.u_all(Index(i), j) = j == k ? s_.u(Index(i))
                                         : draw_gamma(rng, cfg_.alpha(), cfg_.alpha());
    }
    rebuild_stats();
  }

private:
  void rebuild_stats() {
    stats_.assign(std::size_t(prior_.k), to_natural(cfg_.prior));
    for (std::size_t i = 0; i < y_.size(); ++i)
      stats_[std::size_t(s_.z[i])] += NiwNatural::observation(y_[i], s_.u(Index(i)));
  }

  void draw_params(Rng &rng) {
    s_.params.resize(std::size_t(prior_.k));
    for (int k = 0; k < prior_.k; ++k)
      s_.params[std::size_t(k)] = draw_niw(rng, from_natural(stats_[std::size_t(k)]));
  }

  std::vector<VectorXd> y_;
  MvtConfig cfg_;
  DirichletPrior prior_;
  bool strict_;
  MvtAugState s_;
  std::vector<NiwNatural> stats_;
};

/// Sparse-update EP Gibbs with the scale u integrated out by quadrature.
/// loglik() plugs each cluster's (mu, E[Sigma]) into the t density.
class EpMvtSampler {
public:
  EpMvtSampler(std::vector<VectorXd> y, MvtConfig config, DirichletPrior prior,
               std::vector<int> z0, EpSweepOptions opt = {}, int refresh_every = 0,
               WorkerPool *pool = nullptr)
      : hooks_(std::make_unique<MvtEpModel>(std::move(y), std::move(config))),
        opt_(opt), refresh_every_(refresh_every) {
    prior.validate();
    if (z0.size() != hooks_->num_items())
      throw LengthMismatch("EpMvtSampler: z0 length differs from data");
    engine_ = std::make_unique<EpEngine<MvtEpModel>>(
        *hooks_,
        ClusterState<NiwNatural>::init(std::move(z0), prior.k, hooks_->prior(),
                                       hooks_->zero_site()),
        prior, pool);
  }
  EpMvtSampler(const EpMvtSampler &) = delete;
  EpMvtSampler &operator=(const EpMvtSampler &) = delete;

  void sweep(Rng &rng) {
    last_ = engine_->sweep(rng, opt_);
    ++sweeps_;
    if (refresh_every_ > 0 && sweeps_ % refresh_every_ == 0)
      engine_->full_refresh(50, 1e-8, opt_);
  }

  const std::vector<int> &z() const noexcept { return engine_->state().z; }
  const ClusterState<NiwNatural> &state() const noexcept { return engine_->state(); }
  EpEngine<MvtEpModel> &engine() noexcept { return *engine_; }
  const SweepStats &last_sweep() const noexcept { return last_; }

  std::vector<MvtClusterParams> params() const {
    std::vector<MvtClusterParams> out;
    for (const auto &q : engine_->state().q)
      out.push_back(hooks_->point_estimate(q));
    return out;
  }
  double loglik() const {
    return mvt_mixture_loglik(hooks_->data(), z(), params(), hooks_->config().dof);
  }

private:
  std::unique_ptr<MvtEpModel> hooks_;
  std::unique_ptr<EpEngine<MvtEpModel>> engine_;
  EpSweepOptions opt_;
  int refresh_every_ = 0;
  SweepStats last_;
  int sweeps_ = 0;
};

} // namespace epg
