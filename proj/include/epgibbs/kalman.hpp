#pragma once

// Univariate and coupled-cluster Kalman recursions for the AR(1) latent
// series x_t = a x_{t-1} + lambda eta_t + eps_t, y_t = x_t + noise.
//
// Initial-state convention: x_0 = 0 and the first transition uses init_var
// in place of sigma_x2, so x_1 ~ N(lambda eta_1, init_var).

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include "errors.hpp"
#include "random.hpp"

namespace epg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

struct SsmParams {
  double a = 0.0;
  double lambda = 0.0;
  double sigma_x2 = 1.0;
  double sigma_y2 = 1.0;
  double init_var = 1.0;

  /// Stationary variance sigma_x2/(1-a^2), clamped to [sigma_x2, 1e6].
  static double default_init_var(double a, double sigma_x2) {
    const double v = std::abs(a) < 1.0 ? sigma_x2 / (1.0 - a * a) : 1e6;
    return std::clamp(v, sigma_x2, 1e6);
  }

  void validate() const {
    if (!(sigma_x2 > 0.0) || !(sigma_y2 > 0.0) || !(init_var > 0.0))
      throw InvalidArgument("SsmParams: variances must be positive");
  }

  /// Innovation variance of the transition into index t (0-based).
  double transition_var(Index t) const { return t == 0 ? init_var : sigma_x2; }
  /// Coefficient on the previous state for the transition into t.
  double transition_coef(Index t) const { return t == 0 ? 0.0 : a; }
};

/// Observed values with a per-index missing mask.
struct SeriesData {
  VectorXd values;
  std::vector<char> observed;

  static SeriesData dense(VectorXd v) {
    SeriesData s;
    s.observed.assign(std::size_t(v.size()), 1);
    s.values = std::move(v);
    return s;
  }

  /// NaN entries become missing.
  static SeriesData from_values(VectorXd v) {
    SeriesData s;
    s.observed.resize(std::size_t(v.size()));
    for (Index t = 0; t < v.size(); ++t) {
      s.observed[std::size_t(t)] = std::isfinite(v(t)) ? 1 : 0;
      if (!std::isfinite(v(t)))
        v(t) = 0.0;
    }
    s.values = std::move(v);
    return s;
  }

  Index size() const noexcept { return values.size(); }
  bool is_observed(Index t) const { return observed[std::size_t(t)] != 0; }
  Index observed_count() const {
    return Index(std::count(observed.begin(), observed.end(), char(1)));
  }
};

/// Gaussian belief about eta per index; var = 0 is a point value.
struct EtaBelief {
  VectorXd mean;
  VectorXd var;

  static EtaBelief point(VectorXd values) {
    EtaBelief b;
    b.var = VectorXd::Zero(values.size());
    b.mean = std::move(values);
    return b;
  }
  /// N(0, 1) at every index.
  static EtaBelief prior(Index length) {
    return {VectorXd::Zero(length), VectorXd::Ones(length)};
  }
  static EtaBelief moments(VectorXd mean, VectorXd var) {
    return {std::move(mean), std::move(var)};
  }

  Index size() const noexcept { return mean.size(); }
};

namespace detail {
inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;
}

/// Forward pass output; pred_* are one-step predictions of x_t.
struct UniFilter {
  VectorXd pred_mean, pred_var, filt_mean, filt_var;
  double loglik = 0.0;
};

/// Scalar Kalman filter with the eta belief folded into the transition:
/// mean a m + lambda E[eta_t], variance a^2 P + q_t + lambda^2 Var[eta_t].
inline UniFilter uni_filter(const SeriesData &y, const SsmParams &p,
                            const EtaBelief &eta) {
  const Index T = y.size();
  if (eta.size() != T || eta.var.size() != T)
    throw LengthMismatch("uni_filter: eta belief length differs from series");
  UniFilter f;
  f.pred_mean.resize(T);
  f.pred_var.resize(T);
  f.filt_mean.resize(T);
  f.filt_var.resize(T);
  double m = 0.0, P = 0.0;
  for (Index t = 0; t < T; ++t) {
    const double a = p.transition_coef(t);
    const double pm = a * m + p.lambda * eta.mean(t);
    const double pv =
        a * a * P + p.transition_var(t) + p.lambda * p.lambda * eta.var(t);
    f.pred_mean(t) = pm;
    f.pred_var(t) = pv;
    if (y.is_observed(t)) {
      const double s = pv + p.sigma_y2;
      const double r = y.values(t) - pm;
      f.loglik += -0.5 * (detail::kLog2Pi + std::log(s) + r * r / s);
      const double k = pv / s;
      m = pm + k * r;
      P = (1.0 - k) * pv;
    } else {
      m = pm;
      P = pv;
    }
    f.filt_mean(t) = m;
    f.filt_var(t) = P;
  }
  return f;
}

/// log p(y | eta belief) with x integrated out; O(T).
inline double uni_loglik(const SeriesData &y, const SsmParams &p,
                         const EtaBelief &eta) {
  return uni_filter(y, p, eta).loglik;
}

/// Rauch-Tung-Striebel pass over a UniFilter.
struct UniSmoother {
  VectorXd mean, var;
  /// cross(t) = Cov(x_t, x_{t-1} | y) for t >= 1; cross(0) = 0.
  VectorXd cross;
};

inline UniSmoother uni_smooth(const UniFilter &f, const SsmParams &p) {
  const Index T = f.filt_mean.size();
  UniSmoother s;
  s.mean.resize(T);
  s.var.resize(T);
  s.cross = VectorXd::Zero(T);
  if (T == 0)
    return s;
  s.mean(T - 1) = f.filt_mean(T - 1);
  s.var(T - 1) = f.filt_var(T - 1);
  for (Index t = T - 2; t >= 0; --t) {
    const double a = p.transition_coef(t + 1);
    const double j = a * f.filt_var(t) / f.pred_var(t + 1);
    s.mean(t) = f.filt_mean(t) + j * (s.mean(t + 1) - f.pred_mean(t + 1));
    s.var(t) = f.filt_var(t) + j * j * (s.var(t + 1) - f.pred_var(t + 1));
    s.cross(t + 1) = j * s.var(t + 1);
  }
  return s;
}

/// Draws x ~ p(x | y, eta) by forward filtering, backward sampling.
inline VectorXd uni_ffbs_sample(const SeriesData &y, const SsmParams &p,
                                const VectorXd &eta_point, Rng &rng) {
  if (!eta_point.allFinite())
    throw InvalidArgument("uni_ffbs_sample: eta must be finite");
  const UniFilter f = uni_filter(y, p, EtaBelief::point(eta_point));
  const Index T = y.size();
  VectorXd x(T);
  if (T == 0)
    return x;
  x(T - 1) = f.filt_mean(T - 1) +
             std::sqrt(std::max(f.filt_var(T - 1), 0.0)) * draw_normal(rng);
  for (Index t = T - 2; t >= 0; --t) {
    const double a = p.transition_coef(t + 1);
    const double j = a * f.filt_var(t) / f.pred_var(t + 1);
    const double mean = f.filt_mean(t) + j * (x(t + 1) - f.pred_mean(t + 1));
    const double var = std::max(f.filt_var(t) - j * a * f.filt_var(t), 0.0);
    x(t) = mean + std::sqrt(var) * draw_normal(rng);
  }
  return x;
}

/// One series inside a coupled cluster.
struct ClusterMember {
  std::reference_wrapper<const SeriesData> data;
  SsmParams params;
};

namespace detail {

/// Multivariate filter over a cluster with eta integrated out. Calls
/// `on_step(t, pred_mean, pred_cov, filt_mean, filt_cov)` after each update.
template <class OnStep>
double multi_filter(std::span<const ClusterMember> cluster, OnStep &&on_step) {
  const Index n = Index(cluster.size());
  if (n == 0)
    throw InvalidArgument("multi_cluster_loglik: empty cluster");
  const Index T = cluster[0].data.get().size();
  VectorXd a(n), lam(n), q0(n), q(n), r(n);
  for (Index i = 0; i < n; ++i) {
    const auto &m = cluster[std::size_t(i)];
    if (m.data.get().size() != T)
      throw LengthMismatch("multi_cluster_loglik: series lengths differ");
    a(i) = m.params.a;
    lam(i) = m.params.lambda;
    q0(i) = m.params.init_var;
    q(i) = m.params.sigma_x2;
    r(i) = m.params.sigma_y2;
  }
  const MatrixXd lam_outer = lam * lam.transpose();
  VectorXd mean = VectorXd::Zero(n);
  MatrixXd cov = MatrixXd::Zero(n, n);
  std::vector<Index> obs;
  obs.reserve(std::size_t(n));
  double loglik = 0.0;
  for (Index t = 0; t < T; ++t) {
    VectorXd pm;
    MatrixXd pc;
    if (t == 0) {
      pm = VectorXd::Zero(n);
      pc = lam_outer;
      pc.diagonal() += q0;
    } else {
      pm = a.cwiseProduct(mean);
      pc = a.asDiagonal() * cov * a.asDiagonal();
      pc += lam_outer;
      pc.diagonal() += q;
    }
    obs.clear();
    for (Index i = 0; i < n; ++i)
      if (cluster[std::size_t(i)].data.get().is_observed(t))
        obs.push_back(i);
    mean = pm;
    cov = pc;
    if (!obs.empty()) {
      const Index m = Index(obs.size());
      MatrixXd s(m, m);
      VectorXd resid(m);
      MatrixXd pc_cols(n, m);
      for (Index j = 0; j < m; ++j) {
        resid(j) = cluster[std::size_t(obs[j])].data.get().values(t) - pm(obs[j]);
        pc_cols.col(j) = pc.col(obs[j]);
        for (Index k = 0; k < m; ++k)
          s(j, k) = pc(obs[j], obs[k]);
        s(j, j) += r(obs[j]);
      }
      Eigen::LLT<MatrixXd> llt(s);
      if (llt.info() != Eigen::Success) {
        const double jitter = 1e-10 * s.trace() / double(m);
        s.diagonal().array() += jitter;
        llt.compute(s);
        if (llt.info() != Eigen::Success)
          throw SingularInnovation("multi_cluster_loglik: singular innovation "
                                   "covariance at t=" + std::to_string(t));
      }
      const VectorXd w = llt.matrixL().solve(resid);
      const double log_det =
          2.0 * llt.matrixLLT().diagonal().array().log().sum();
      loglik += -0.5 * (double(m) * kLog2Pi + log_det + w.squaredNorm());
      // gain^T = S^{-1} P_{o,:}
      const MatrixXd gain_t = llt.solve(pc_cols.transpose());
      mean.noalias() += gain_t.transpose() * resid;
      cov.noalias() -= pc_cols * gain_t;
      cov = 0.5 * (cov + cov.transpose());
    }
    on_step(t, pm, pc, mean, cov);
  }
  return loglik;
}

} // namespace detail

/// Exact log-likelihood of all series in a cluster with the shared eta
/// process integrated out; O(T n^3).
inline double multi_cluster_loglik(std::span<const ClusterMember> cluster) {
  return detail::multi_filter(cluster, [](Index, const VectorXd &,
                                          const MatrixXd &, const VectorXd &,
                                          const MatrixXd &) {});
}

/// Joint draw of every member's latent path, eta integrated out. Returns an
/// n x T matrix (row i = series i).
inline MatrixXd multi_ffbs_sample(std::span<const ClusterMember> cluster,
                                  Rng &rng) {
  const Index n = Index(cluster.size());
  const Index T = n > 0 ? cluster[0].data.get().size() : 0;
  const auto steps = std::size_t(T);
  std::vector<VectorXd> pred_mean(steps), filt_mean(steps);
  std::vector<MatrixXd> pred_cov(steps), filt_cov(steps);
  detail::multi_filter(cluster, [&](Index t, const VectorXd &pm,
                                    const MatrixXd &pc, const VectorXd &fm,
                                    const MatrixXd &fc) {
    pred_mean[std::size_t(t)] = pm;
    pred_cov[std::size_t(t)] = pc;
    filt_mean[std::size_t(t)] = fm;
    filt_cov[std::size_t(t)] = fc;
  });
  VectorXd a(n);
  for (Index i = 0; i < n; ++i)
    a(i) = cluster[std::size_t(i)].params.a;
  MatrixXd x(n, T);
  if (T == 0)
    return x;
  auto draw = [&](const VectorXd &mean, MatrixXd cov) {
    cov = 0.5 * (cov + cov.transpose());
    Eigen::LDLT<MatrixXd> ldlt(cov);
    // Semi-definite covariances arise with near-noiseless observations.
    VectorXd z = draw_std_normal(rng, n);
    VectorXd d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
    VectorXd v = ldlt.matrixL() * d.cwiseProduct(z);
    return VectorXd(mean + ldlt.transpositionsP().transpose() * v);
  };
  x.col(T - 1) = draw(filt_mean[std::size_t(T - 1)], filt_cov[std::size_t(T - 1)]);
  for (Index t = T - 2; t >= 0; --t) {
    const MatrixXd &fc = filt_cov[std::size_t(t)];
    const MatrixXd fa = fc * a.asDiagonal(); // P_t A^T
    Eigen::LLT<MatrixXd> llt(pred_cov[std::size_t(t + 1)]);
    const MatrixXd j = llt.solve(fa.transpose()).transpose(); // P A^T Pp^{-1}
    const VectorXd mean = filt_mean[std::size_t(t)] +
                          j * (VectorXd(x.col(t + 1)) - pred_mean[std::size_t(t + 1)]);
    const MatrixXd cov = fc - j * fa.transpose();
    x.col(t) = draw(mean, cov);
  }
  return x;
}

struct TiltedEta {
  VectorXd mean;
  VectorXd var;
  /// log of the tilted normalizer, i.e. uni_loglik under the cavity.
  double log_z = 0.0;
};

/// Marginal moments of eta_t under p(y | eta) * cavity(eta), from the
/// smoothed pairwise law of (x_{t-1}, x_t) and the Gaussian conditional of
/// eta_t given that pair. O(T).
inline TiltedEta eta_tilted_moments(const SeriesData &y, const SsmParams &p,
                                    const EtaBelief &cavity) {
  const Index T = y.size();
  if (cavity.size() != T)
    throw LengthMismatch("eta_tilted_moments: cavity length differs");
  if (!(cavity.var.array() > 0.0).all())
    throw InvalidArgument("eta_tilted_moments: cavity variances must be > 0");
  const UniFilter f = uni_filter(y, p, cavity);
  const UniSmoother s = uni_smooth(f, p);
  TiltedEta out;
  out.mean.resize(T);
  out.var.resize(T);
  out.log_z = f.loglik;
  const double lam = p.lambda;
  for (Index t = 0; t < T; ++t) {
    const double m = cavity.mean(t), v = cavity.var(t);
    const double a = p.transition_coef(t);
    const double innov = p.transition_var(t) + lam * lam * v;
    const double gain = lam * v / innov;
    double r_mean, r_var;
    if (t == 0) {
      r_mean = s.mean(0);
      r_var = s.var(0);
    } else {
      r_mean = s.mean(t) - a * s.mean(t - 1);
      r_var = s.var(t) + a * a * s.var(t - 1) - 2.0 * a * s.cross(t);
    }
    out.mean(t) = m + gain * (r_mean - lam * m);
    out.var(t) = v - gain * lam * v + gain * gain * std::max(r_var, 0.0);
  }
  return out;
}

} // namespace epg
