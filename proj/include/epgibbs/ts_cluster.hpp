#pragma once

// Clustering of correlated time series: series i follows an AR(1) latent
// state driven by its cluster's factor process eta_k with loading lambda_i.
// Three Gibbs samplers for z: naive (eta sampled), exact collapsed (eta
// integrated out jointly per cluster) and EP (eta replaced by a diagonal
// Gaussian per cluster).

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <memory>
#include <span>
#include <vector>

#include "errors.hpp"
#include "eval_metrics.hpp"
#include "expfam_gauss.hpp"
#include "gibbs_core.hpp"
#include "kalman.hpp"
#include "random.hpp"

namespace epg {

struct TsHyperPriors {
  double a_mean = 0.9;
  double a_var = 0.25;
  double lambda_mean = 0.0;
  double lambda_var = 1.0;
  /// Inverse-Gamma(shape, scale) for sigma_x2 (shared) and sigma_y2.
  double sx_shape = 2.0;
  double sx_scale = 0.02;
  double sy_shape = 2.0;
  double sy_scale = 1.0;
};

struct TsModel {
  std::vector<SsmParams> params;
  DirichletPrior dirichlet;
  TsHyperPriors hyper;
  bool sample_hyperparams = false;

  /// Every series starts from the same parameters.
  static TsModel uniform(std::size_t n, int k, SsmParams p, double alpha = 1.0) {
    TsModel m;
    m.params.assign(n, p);
    m.dirichlet = {alpha, k};
    return m;
  }

  std::size_t num_series() const noexcept { return params.size(); }
  int num_clusters() const noexcept { return dirichlet.k; }

  void validate() const {
    dirichlet.validate();
    for (const auto &p : params)
      p.validate();
  }
};

inline std::vector<std::size_t> members_of(const std::vector<int> &z, int k) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < z.size(); ++i)
    if (z[i] == k)
      out.push_back(i);
  return out;
}

inline double cluster_loglik(const std::vector<SeriesData> &series,
                             const std::vector<SsmParams> &params,
                             const std::vector<std::size_t> &members) {
  if (members.empty())
    return 0.0;
  std::vector<ClusterMember> c;
  c.reserve(members.size());
  for (std::size_t i : members)
    c.push_back({std::cref(series[i]), params[i]});
  return multi_cluster_loglik(c);
}

/// log p(y | z, params) with every eta_k integrated out exactly.
inline double ts_marginal_loglik(const std::vector<SeriesData> &series,
                                 const std::vector<int> &z,
                                 const std::vector<SsmParams> &params, int K) {
  double s = 0.0;
  for (int k = 0; k < K; ++k)
    s += cluster_loglik(series, params, members_of(z, k));
  return s;
}

// ---------------------------------------------------------------------------
// z-likelihoods
// ---------------------------------------------------------------------------

/// log p(y_i | eta_k) with x_i integrated out; eta_point is K x T.
inline double naive_z_loglike(std::size_t i, int k, const MatrixXd &eta_point,
                              const TsModel &model,
                              const std::vector<SeriesData> &series) {
  return uni_loglik(series[i], model.params[i],
                    EtaBelief::point(eta_point.row(k).transpose()));
}

/// log p(y_i | y_{members of k}) with eta_k integrated out. `z` must have
/// item i removed (z[i] < 0 or ignored): members are taken excluding i.
inline double collapsed_z_loglike(std::size_t i, int k, const std::vector<int> &z,
                                  const TsModel &model,
                                  const std::vector<SeriesData> &series) {
  std::vector<std::size_t> m;
  for (std::size_t j = 0; j < z.size(); ++j)
    if (j != i && z[j] == k)
      m.push_back(j);
  const double without = cluster_loglik(series, model.params, m);
  m.insert(std::upper_bound(m.begin(), m.end(), i), i);
  return cluster_loglik(series, model.params, m) - without;
}

/// log p(y_i) with eta_k ~ cavity (a diagonal Gaussian); O(T).
inline double ep_z_loglike(std::size_t i, const DiagGaussianTrack &cavity,
                           const TsModel &model,
                           const std::vector<SeriesData> &series) {
  if (!cavity.normalizable())
    for (Index t = 0; t < cavity.size(); ++t)
      if (!(cavity.rho(t) > 0.0))
        throw NonPositiveCavityPrecision(std::size_t(t));
  return uni_loglik(series[i], model.params[i],
                    EtaBelief::moments(cavity.mean(), cavity.var()));
}

/// EP site for series i against a cavity; zero when lambda_i = 0.
inline DiagGaussianTrack ep_site_update_ts(std::size_t i,
                                           const DiagGaussianTrack &cavity,
                                           const TsModel &model,
                                           const std::vector<SeriesData> &series) {
  const SsmParams &p = model.params[i];
  if (p.lambda == 0.0)
    return DiagGaussianTrack::zeros(cavity.size());
  const TiltedEta t =
      eta_tilted_moments(series[i], p, EtaBelief::moments(cavity.mean(), cavity.var()));
  if (!t.mean.allFinite() || !t.var.allFinite())
    throw NonFiniteMoment("ep_site_update_ts: non-finite tilted moments");
  return diag_site_from_tilted(t.mean, t.var, cavity, t.log_z);
}

// ---------------------------------------------------------------------------
// conjugate conditionals
// ---------------------------------------------------------------------------

/// eta_k | paths of its members (rows of x, with matching params).
inline VectorXd sample_eta_given_paths(const MatrixXd &x,
                                       const std::vector<SsmParams> &params,
                                       Index T, Rng &rng) {
  if (std::size_t(x.rows()) != params.size())
    throw LengthMismatch("sample_eta_given_paths: paths and params differ");
  if (x.rows() > 0 && x.cols() != T)
    throw ShapeMismatch("sample_eta_given_paths: path length differs from T");
  VectorXd eta(T);
  for (Index t = 0; t < T; ++t) {
    double prec = 1.0, lin = 0.0;
    for (Index i = 0; i < x.rows(); ++i) {
      const SsmParams &p = params[std::size_t(i)];
      const double q = p.transition_var(t);
      const double prev = t == 0 ? 0.0 : x(i, t - 1);
      prec += p.lambda * p.lambda / q;
      lin += p.lambda * (x(i, t) - p.transition_coef(t) * prev) / q;
    }
    const double v = 1.0 / prec;
    eta(t) = v * lin + std::sqrt(v) * draw_normal(rng);
  }
  return eta;
}

/// One Gibbs pass over (a_i, lambda_i), the shared sigma_x2 and each
/// sigma_y2, given latent paths x (N x T) and factors eta (K x T). The
/// first transition uses the fixed init_var and is left out of the a and
/// sigma_x2 conditionals.
inline void sample_ts_hyperparams(const std::vector<int> &z,
                                  const std::vector<SeriesData> &series,
                                  const MatrixXd &x, const MatrixXd &eta,
                                  TsModel &model, Rng &rng) {
  if (!model.sample_hyperparams)
    return;
  const std::size_t n = series.size();
  if (z.size() != n || model.params.size() != n || std::size_t(x.rows()) != n)
    throw LengthMismatch("sample_ts_hyperparams: inconsistent series count");
  const TsHyperPriors &h = model.hyper;
  const Index T = x.cols();
  double sx_ss = 0.0, sx_n = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    SsmParams &p = model.params[i];
    const auto e = eta.row(z[i]);
    // a_i: regression of x_t - lambda eta_t on x_{t-1}
    double prec = 1.0 / h.a_var, lin = h.a_mean / h.a_var;
    for (Index t = 1; t < T; ++t) {
      const double xp = x(Index(i), t - 1);
      prec += xp * xp / p.sigma_x2;
      lin += xp * (x(Index(i), t) - p.lambda * e(t)) / p.sigma_x2;
    }
    p.a = lin / prec + draw_normal(rng) / std::sqrt(prec);
    // lambda_i: regression of the innovation on eta_t
    prec = 1.0 / h.lambda_var;
    lin = h.lambda_mean / h.lambda_var;
    for (Index t = 0; t < T; ++t) {
      const double q = p.transition_var(t);
      const double prev = t == 0 ? 0.0 : x(Index(i), t - 1);
      const double r = x(Index(i), t) - p.transition_coef(t) * prev;
      prec += e(t) * e(t) / q;
      lin += e(t) * r / q;
    }
    p.lambda = lin / prec + draw_normal(rng) / std::sqrt(prec);
    for (Index t = 1; t < T; ++t) {
      const double r = x(Index(i), t) - p.a * x(Index(i), t - 1) - p.lambda * e(t);
      sx_ss += r * r;
      sx_n += 1.0;
    }
    // sigma_y2
    double sy_ss = 0.0, sy_n = 0.0;
    for (Index t = 0; t < T; ++t)
      if (series[i].is_observed(t)) {
        const double r = series[i].values(t) - x(Index(i), t);
        sy_ss += r * r;
        sy_n += 1.0;
      }
    p.sigma_y2 = draw_inv_gamma(rng, h.sy_shape + 0.5 * sy_n, h.sy_scale + 0.5 * sy_ss);
  }
  const double sx2 = draw_inv_gamma(rng, h.sx_shape + 0.5 * sx_n, h.sx_scale + 0.5 * sx_ss);
  for (auto &p : model.params)
    p.sigma_x2 = sx2;
}

inline VectorXd draw_from_track(const DiagGaussianTrack &q, Rng &rng) {
  const VectorXd m = q.mean(), v = q.var();
  VectorXd out(m.size());
  for (Index t = 0; t < m.size(); ++t)
    out(t) = m(t) + std::sqrt(v(t)) * draw_normal(rng);
  return out;
}

namespace detail {

inline Index common_length(const std::vector<SeriesData> &series) {
  if (series.empty())
    throw InvalidArgument("ts sampler: no series");
  const Index T = series[0].size();
  for (const auto &s : series)
    if (s.size() != T)
      throw LengthMismatch("ts sampler: series lengths differ");
  return T;
}

inline void check_setup(const std::vector<SeriesData> &series, const TsModel &model,
                        const std::vector<int> &z0) {
  model.validate();
  if (model.params.size() != series.size() || z0.size() != series.size())
    throw LengthMismatch("ts sampler: series, params and z0 differ in length");
  for (int v : z0)
    if (v < 0 || v >= model.num_clusters())
      throw InvalidArgument("ts sampler: initial label out of range");
}

inline ParamSnapshot snapshot_of(const TsModel &model, const std::vector<int> &z,
                                 const MatrixXd &x) {
  const Index n = Index(model.params.size());
  ParamSnapshot s{VectorXd(n), VectorXd(n), VectorXd(n), x, z};
  for (Index i = 0; i < n; ++i) {
    s.a(i) = model.params[std::size_t(i)].a;
    s.lambda(i) = model.params[std::size_t(i)].lambda;
    s.sigma_y2(i) = model.params[std::size_t(i)].sigma_y2;
  }
  return s;
}

} // namespace detail

// ---------------------------------------------------------------------------
// samplers
// ---------------------------------------------------------------------------

/// Per sweep: x_i | eta, then eta_k | x, then hyperparameters (if on), then
/// z_i | eta with x_i integrated out.
class NaiveTsSampler {
public:
  NaiveTsSampler(std::vector<SeriesData> series, TsModel model, std::vector<int> z0,
                 Rng &init_rng)
      : series_(std::move(series)), model_(std::move(model)), z_(std::move(z0)) {
    detail::check_setup(series_, model_, z_);
    T_ = detail::common_length(series_);
    eta_.resize(model_.num_clusters(), T_);
    for (Index k = 0; k < eta_.rows(); ++k)
      for (Index t = 0; t < T_; ++t)
        eta_(k, t) = draw_normal(init_rng);
    x_ = MatrixXd::Zero(Index(series_.size()), T_);
  }

  void sweep(Rng &rng) {
    const int K = model_.num_clusters();
    const std::size_t n = series_.size();
    for (std::size_t i = 0; i < n; ++i)
      x_.row(Index(i)) =
          uni_ffbs_sample(series_[i], model_.params[i], eta_.row(z_[i]).transpose(), rng)
              .transpose();
    for (int k = 0; k < K; ++k) {
      const auto m = members_of(z_, k);
      MatrixXd xm(Index(m.size()), T_);
      std::vector<SsmParams> pm;
      for (std::size_t j = 0; j < m.size(); ++j) {
        xm.row(Index(j)) = x_.row(Index(m[j]));
        pm.push_back(model_.params[m[j]]);
      }
      eta_.row(k) = sample_eta_given_paths(xm, pm, T_, rng).transpose();
    }
    sample_ts_hyperparams(z_, series_, x_, eta_, model_, rng);
    std::vector<int> counts = counts_of(z_, K);
    VectorXd ll(K);
    for (std::size_t i = 0; i < n; ++i) {
      for (int k = 0; k < K; ++k)
        ll(k) = naive_z_loglike(i, k, eta_, model_, series_);
      --counts[std::size_t(z_[i])];
      z_[i] = sample_assignment(log_prior_weights(counts, model_.dirichlet), ll, rng);
      ++counts[std::size_t(z_[i])];
    }
  }

  const std::vector<int> &z() const noexcept { return z_; }
  const TsModel &model() const noexcept { return model_; }
  const MatrixXd &eta() const noexcept { return eta_; }
  const MatrixXd &paths() const noexcept { return x_; }
  double loglik() const {
    return ts_marginal_loglik(series_, z_, model_.params, model_.num_clusters());
  }
  ParamSnapshot snapshot() const { return detail::snapshot_of(model_, z_, x_); }

private:
  std::vector<SeriesData> series_;
  TsModel model_;
  std::vector<int> z_;
  Index T_ = 0;
  MatrixXd eta_;
  MatrixXd x_;
};

/// Exact collapsed Gibbs: each candidate costs a coupled Kalman filter over
/// the cluster plus series i, O(T n_k^3).
class CollapsedTsSampler {
public:
  CollapsedTsSampler(std::vector<SeriesData> series, TsModel model, std::vector<int> z0,
                     WorkerPool *pool = nullptr)
      : series_(std::move(series)), model_(std::move(model)), z_(std::move(z0)),
        pool_(pool) {
    detail::check_setup(series_, model_, z_);
    T_ = detail::common_length(series_);
    rebuild();
  }

  void sweep(Rng &rng) {
    const int K = model_.num_clusters();
    const std::size_t n = series_.size();
    std::vector<double> cand(static_cast<std::size_t>(K));
    VectorXd ll(K);
    for (std::size_t i = 0; i < n; ++i) {
      const int k_old = z_[i];
      auto &own = members_[std::size_t(k_old)];
      own.erase(std::find(own.begin(), own.end(), i));
      loglik_[std::size_t(k_old)] = cluster_loglik(series_, model_.params, own);
      auto one = [&](std::size_t k) {
        std::vector<std::size_t> m = members_[k];
        m.insert(std::upper_bound(m.begin(), m.end(), i), i);
        cand[k] = cluster_loglik(series_, model_.params, m);
      };
      if (pool_ && pool_->size() > 1)
        pool_->parallel_for(std::size_t(K), one);
      else
        for (std::size_t k = 0; k < std::size_t(K); ++k)
          one(k);
      for (int k = 0; k < K; ++k)
        ll(k) = cand[std::size_t(k)] - loglik_[std::size_t(k)];
      std::vector<int> counts(static_cast<std::size_t>(K));
      for (int k = 0; k < K; ++k)
        counts[std::size_t(k)] = int(members_[std::size_t(k)].size());
      const int k_new = sample_assignment(log_prior_weights(counts, model_.dirichlet), ll, rng);
      auto &dst = members_[std::size_t(k_new)];
      dst.insert(std::upper_bound(dst.begin(), dst.end(), i), i);
      loglik_[std::size_t(k_new)] = cand[std::size_t(k_new)];
      z_[i] = k_new;
    }
    if (model_.sample_hyperparams) {
      // paths jointly per cluster, then eta | paths
      x_ = MatrixXd::Zero(Index(n), T_);
      MatrixXd eta(K, T_);
      for (int k = 0; k < K; ++k) {
        const auto &m = members_[std::size_t(k)];
        std::vector<ClusterMember> c;
        std::vector<SsmParams> pm;
        for (std::size_t j : m) {
          c.push_back({std::cref(series_[j]), model_.params[j]});
          pm.push_back(model_.params[j]);
        }
        MatrixXd xm(0, T_);
        if (!m.empty()) {
          xm = multi_ffbs_sample(c, rng);
          for (std::size_t j = 0; j < m.size(); ++j)
            x_.row(Index(m[j])) = xm.row(Index(j));
        }
        eta.row(k) = sample_eta_given_paths(xm, pm, T_, rng).transpose();
      }
      sample_ts_hyperparams(z_, series_, x_, eta, model_, rng);
      rebuild();
    }
  }

  const std::vector<int> &z() const noexcept { return z_; }
  const TsModel &model() const noexcept { return model_; }
  double loglik() const {
    double s = 0.0;
    for (double v : loglik_)
      s += v;
    return s;
  }
  ParamSnapshot snapshot() const { return detail::snapshot_of(model_, z_, x_); }

private:
  void rebuild() {
    const int K = model_.num_clusters();
    members_.assign(std::size_t(K), {});
    loglik_.assign(std::size_t(K), 0.0);
    for (int k = 0; k < K; ++k) {
      members_[std::size_t(k)] = members_of(z_, k);
      loglik_[std::size_t(k)] = cluster_loglik(series_, model_.params, members_[std::size_t(k)]);
    }
  }

  std::vector<SeriesData> series_;
  TsModel model_;
  std::vector<int> z_;
  WorkerPool *pool_;
  Index T_ = 0;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<double> loglik_;
  MatrixXd x_;
};

/// Hooks for EpEngine: q_k is a diagonal Gaussian over eta_k.
class TsEpModel {
public:
  using Approx = DiagGaussianTrack;
  struct Cavity {
    DiagGaussianTrack nat;
  };

  TsEpModel(const std::vector<SeriesData> &series, const TsModel &model)
      : series_(series), model_(model), T_(detail::common_length(series)) {}

  std::size_t num_items() const { return series_.size(); }
  Approx prior() const { return DiagGaussianTrack::standard(T_); }
  Approx zero_site() const { return DiagGaussianTrack::zeros(T_); }

  Cavity make_cavity(const Approx &a) const {
    for (Index t = 0; t < a.size(); ++t)
      if (!(a.rho(t) > 0.0))
        throw NonPositiveCavityPrecision(std::size_t(t));
    return {a};
  }
  double candidate_loglike(std::size_t i, const Cavity &c) const {
    return ep_z_loglike(i, c.nat, model_, series_);
  }
  Approx site_update(std::size_t i, const Cavity &c) const {
    return ep_site_update_ts(i, c.nat, model_, series_);
  }

private:
  const std::vector<SeriesData> &series_;
  const TsModel &model_;
  Index T_;
};

struct TsEpOptions {
  EpSweepOptions sweep;
  /// Full EP refresh at fixed z every this many sweeps (0 = never).
  int refresh_every = 0;
  int refresh_max_passes = 50;
  double refresh_tol = 1e-8;
};

/// Sparse-update EP Gibbs. With hyperparameter sampling on, eta_k is drawn
/// from q_k, then x_i | eta, then the hyperparameters.
class EpTsSampler {
public:
  EpTsSampler(std::vector<SeriesData> series, TsModel model, std::vector<int> z0,
              TsEpOptions opt = {}, WorkerPool *pool = nullptr)
      : series_(std::move(series)), model_(std::move(model)), opt_(opt) {
    detail::check_setup(series_, model_, z0);
    T_ = detail::common_length(series_);
    hooks_ = std::make_unique<TsEpModel>(series_, model_);
    engine_ = std::make_unique<EpEngine<TsEpModel>>(
        *hooks_,
        ClusterState<DiagGaussianTrack>::init(std::move(z0), model_.num_clusters(),
                                              hooks_->prior(), hooks_->zero_site()),
        model_.dirichlet, pool);
  }
  EpTsSampler(const EpTsSampler &) = delete;
  EpTsSampler &operator=(const EpTsSampler &) = delete;

  void sweep(Rng &rng) {
    last_ = engine_->sweep(rng, opt_.sweep);
    ++sweeps_;
    if (opt_.refresh_every > 0 && sweeps_ % opt_.refresh_every == 0)
      engine_->full_refresh(opt_.refresh_max_passes, opt_.refresh_tol, opt_.sweep);
    if (model_.sample_hyperparams) {
      const auto &st = engine_->state();
      const int K = model_.num_clusters();
      MatrixXd eta(K, T_);
      for (int k = 0; k < K; ++k)
        eta.row(k) = draw_from_track(st.q[std::size_t(k)], rng).transpose();
      x_.resize(Index(series_.size()), T_);
      for (std::size_t i = 0; i < series_.size(); ++i)
        x_.row(Index(i)) =
            uni_ffbs_sample(series_[i], model_.params[i], eta.row(st.z[i]).transpose(), rng)
                .transpose();
      sample_ts_hyperparams(st.z, series_, x_, eta, model_, rng);
    }
  }

  const std::vector<int> &z() const noexcept { return engine_->state().z; }
  const TsModel &model() const noexcept { return model_; }
  const ClusterState<DiagGaussianTrack> &state() const noexcept { return engine_->state(); }
  EpEngine<TsEpModel> &engine() noexcept { return *engine_; }
  const SweepStats &last_sweep() const noexcept { return last_; }
  double loglik() const {
    return ts_marginal_loglik(series_, z(), model_.params, model_.num_clusters());
  }
  ParamSnapshot snapshot() const { return detail::snapshot_of(model_, z(), x_); }

private:
  std::vector<SeriesData> series_;
  TsModel model_;
  TsEpOptions opt_;
  Index T_ = 0;
  std::unique_ptr<TsEpModel> hooks_;
  std::unique_ptr<EpEngine<TsEpModel>> engine_;
  SweepStats last_;
  int sweeps_ = 0;
  MatrixXd x_;
};

} // namespace epg
