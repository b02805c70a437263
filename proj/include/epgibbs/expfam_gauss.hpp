#pragma once

// Diagonal-Gaussian and normal-inverse-Wishart approximation families:
// natural-parameter bookkeeping, cavity removal, moment matching and the
// gamma-quantile grid used to integrate out a Student-t scale.

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <algorithm>
#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>
#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace epg {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Diagonal Gaussian over a length-T track
// ---------------------------------------------------------------------------

/// Product of T independent univariate Gaussians in natural parameters
/// (h = mean/var, rho = 1/var). Sites reuse the type with an explicit
/// log-scale and may have rho <= 0.
struct DiagGaussianTrack {
  VectorXd h;
  VectorXd rho;
  double log_c = 0.0;

  static DiagGaussianTrack zeros(Index length) {
    return {VectorXd::Zero(length), VectorXd::Zero(length), 0.0};
  }

  /// Standard normal at every index.
  static DiagGaussianTrack standard(Index length) {
    return {VectorXd::Zero(length), VectorXd::Ones(length), 0.0};
  }

  static DiagGaussianTrack from_moments(const VectorXd &mean,
                                        const VectorXd &var) {
    if (mean.size() != var.size())
      throw LengthMismatch("DiagGaussianTrack: mean/var length mismatch");
    VectorXd rho = var.cwiseInverse();
    return {mean.cwiseProduct(rho), rho, 0.0};
  }

  Index size() const noexcept { return h.size(); }
  VectorXd mean() const { return h.cwiseQuotient(rho); }
  VectorXd var() const { return rho.cwiseInverse(); }

  bool normalizable() const { return (rho.array() > 0.0).all(); }

  DiagGaussianTrack &operator+=(const DiagGaussianTrack &o) {
    h += o.h;
    rho += o.rho;
    log_c += o.log_c;
    return *this;
  }
  DiagGaussianTrack &operator-=(const DiagGaussianTrack &o) {
    h -= o.h;
    rho -= o.rho;
    log_c -= o.log_c;
    return *this;
  }
  friend DiagGaussianTrack operator+(DiagGaussianTrack a,
                                     const DiagGaussianTrack &b) {
    return a += b;
  }
  friend DiagGaussianTrack operator-(DiagGaussianTrack a,
                                     const DiagGaussianTrack &b) {
    return a -= b;
  }
  DiagGaussianTrack scaled(double s) const { return {s * h, s * rho, s * log_c}; }
};

/// Largest absolute difference over natural parameters (log-scale ignored).
inline double max_abs_diff(const DiagGaussianTrack &a,
                           const DiagGaussianTrack &b) {
  if (a.size() != b.size())
    throw LengthMismatch("max_abs_diff: length mismatch");
  if (a.size() == 0)
    return 0.0;
  return std::max((a.h - b.h).cwiseAbs().maxCoeff(),
                  (a.rho - b.rho).cwiseAbs().maxCoeff());
}

inline DiagGaussianTrack include_site(const DiagGaussianTrack &q,
                                      const DiagGaussianTrack &site) {
  return q + site;
}

/// q with `site` divided out. Throws NonPositiveCavityPrecision(t) at the
/// first index whose precision would become <= 0.
inline DiagGaussianTrack diag_cavity_remove(const DiagGaussianTrack &q,
                                            const DiagGaussianTrack &site) {
  if (q.size() != site.size())
    throw LengthMismatch("diag_cavity_remove: length mismatch");
  DiagGaussianTrack cavity = q - site;
  for (Index t = 0; t < cavity.size(); ++t)
    if (!(cavity.rho(t) > 0.0))
      throw NonPositiveCavityPrecision(static_cast<std::size_t>(t));
  return cavity;
}

/// Per-index log-partition of N(h/rho, 1/rho) in natural form.
inline double diag_log_partition(double h, double rho) {
  return 0.5 * h * h / rho - 0.5 * std::log(rho) +
         0.5 * std::log(2.0 * std::numbers::pi);
}

/// Site that moves `cavity` onto the tilted moments. `log_z` is the log
/// normalizer of the tilted distribution; it only sets the site's log-scale.
inline DiagGaussianTrack diag_site_from_tilted(const VectorXd &tilted_mean,
                                               const VectorXd &tilted_var,
                                               const DiagGaussianTrack &cavity,
                                               double log_z = 0.0) {
  if (tilted_mean.size() != cavity.size() || tilted_var.size() != cavity.size())
    throw LengthMismatch("diag_site_from_tilted: length mismatch");
  if (!tilted_mean.allFinite() || !tilted_var.allFinite())
    throw NonFiniteMoment("diag_site_from_tilted: non-finite tilted moment");
  if (!(tilted_var.array() > 0.0).all())
    throw NonFiniteMoment("diag_site_from_tilted: non-positive tilted variance");

  const DiagGaussianTrack matched =
      DiagGaussianTrack::from_moments(tilted_mean, tilted_var);
  DiagGaussianTrack site = matched - cavity;
  double log_ratio = 0.0;
  for (Index t = 0; t < cavity.size(); ++t)
    log_ratio += diag_log_partition(matched.h(t), matched.rho(t)) -
                 diag_log_partition(cavity.h(t), cavity.rho(t));
  site.log_c = log_z - log_ratio;
  return site;
}

/// (1 - gamma) * old + gamma * matched, in natural parameters.
template <class Site>
Site damp_site(const Site &old_site, const Site &matched, double gamma) {
  if (gamma == 1.0)
    return matched;
  return old_site.scaled(1.0 - gamma) + matched.scaled(gamma);
}

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// Multivariate digamma: sum_{j<d} psi(x - j/2).
inline double mv_digamma(double x, Index d) {
  double s = 0.0;
  for (Index j = 0; j < d; ++j)
    s += boost::math::digamma(x - 0.5 * double(j));
  return s;
}

inline double mv_trigamma(double x, Index d) {
  double s = 0.0;
  for (Index j = 0; j < d; ++j)
    s += boost::math::trigamma(x - 0.5 * double(j));
  return s;
}

/// log Gamma_d(x).
inline double mv_lgamma(double x, Index d) {
  double s = 0.25 * double(d * (d - 1)) * std::log(std::numbers::pi);
  for (Index j = 0; j < d; ++j)
    s += std::lgamma(x - 0.5 * double(j));
  return s;
}

// ---------------------------------------------------------------------------
// Normal-inverse-Wishart
// ---------------------------------------------------------------------------

/// NIW(mu, kappa, nu, psi): mu|Sigma ~ N(mu, Sigma/kappa), Sigma ~ IW(nu, psi).
struct NiwParams {
  VectorXd mu;
  double kappa = 1.0;
  double nu = 1.0;
  MatrixXd psi;

  Index dim() const noexcept { return mu.size(); }

  /// Checks kappa > 0, nu > d - 1, symmetric SPD psi.
  void validate() const {
    const Index d = dim();
    if (psi.rows() != d || psi.cols() != d)
      throw ShapeMismatch("NiwParams: psi must be d x d");
    if (!(kappa > 0.0))
      throw InvalidArgument("NiwParams: kappa must be positive");
    if (!(nu > double(d) - 1.0))
      throw InvalidArgument("NiwParams: nu must exceed d - 1");
    const double asym = (psi - psi.transpose()).cwiseAbs().maxCoeff();
    if (asym > 1e-10 * std::max(1.0, psi.cwiseAbs().maxCoeff()))
      throw InvalidArgument("NiwParams: psi is not symmetric");
    Eigen::LLT<MatrixXd> llt(psi);
    if (llt.info() != Eigen::Success)
      throw NonSpdResult("NiwParams: psi is not positive definite");
  }

  /// E[Sigma] = psi / (nu - d - 1); requires nu > d + 1.
  MatrixXd mean_sigma() const {
    if (!(nu > double(dim()) + 1.0))
      throw InvalidArgument("NiwParams: E[Sigma] needs nu > d + 1");
    return psi / (nu - double(dim()) - 1.0);
  }
};

/// NIW in conjugate natural form: (kappa*mu, kappa, psi + kappa*mu*mu^T, nu).
/// Weighted observations add (u*y, u, u*y*y^T, 1) so prior + sites is a sum.
struct NiwNatural {
  VectorXd kappa_mu;
  double kappa = 0.0;
  MatrixXd scatter;
  double nu = 0.0;

  static NiwNatural zeros(Index d) {
    return {VectorXd::Zero(d), 0.0, MatrixXd::Zero(d, d), 0.0};
  }

  static NiwNatural observation(const VectorXd &y, double u) {
    return {u * y, u, u * y * y.transpose(), 1.0};
  }

  Index dim() const noexcept { return kappa_mu.size(); }

  NiwNatural &operator+=(const NiwNatural &o) {
    kappa_mu += o.kappa_mu;
    kappa += o.kappa;
    scatter += o.scatter;
    nu += o.nu;
    return *this;
  }
  NiwNatural &operator-=(const NiwNatural &o) {
    kappa_mu -= o.kappa_mu;
    kappa -= o.kappa;
    scatter -= o.scatter;
    nu -= o.nu;
    return *this;
  }
  friend NiwNatural operator+(NiwNatural a, const NiwNatural &b) { return a += b; }
  friend NiwNatural operator-(NiwNatural a, const NiwNatural &b) { return a -= b; }
  NiwNatural scaled(double s) const {
    return {s * kappa_mu, s * kappa, s * scatter, s * nu};
  }
};

inline double max_abs_diff(const NiwNatural &a, const NiwNatural &b) {
  double m = std::max(std::abs(a.kappa - b.kappa), std::abs(a.nu - b.nu));
  if (a.dim() > 0) {
    m = std::max(m, (a.kappa_mu - b.kappa_mu).cwiseAbs().maxCoeff());
    m = std::max(m, (a.scatter - b.scatter).cwiseAbs().maxCoeff());
  }
  return m;
}

inline NiwNatural to_natural(const NiwParams &p) {
  return {p.kappa * p.mu, p.kappa, p.psi + p.kappa * p.mu * p.mu.transpose(),
          p.nu};
}

/// Inverse of to_natural. Symmetrizes psi; throws InvalidCavity when the
/// natural parameters do not describe a proper NIW.
inline NiwParams from_natural(const NiwNatural &n) {
  const Index d = n.dim();
  if (!(n.kappa > 0.0) || !(n.nu > double(d) - 1.0))
    throw InvalidCavity("NIW natural parameters: kappa <= 0 or nu <= d - 1");
  NiwParams p;
  p.kappa = n.kappa;
  p.nu = n.nu;
  p.mu = n.kappa_mu / n.kappa;
  p.psi = n.scatter - n.kappa * p.mu * p.mu.transpose();
  p.psi = 0.5 * (p.psi + p.psi.transpose());
  Eigen::LLT<MatrixXd> llt(p.psi);
  if (llt.info() != Eigen::Success)
    throw InvalidCavity("NIW natural parameters: psi not positive definite");
  return p;
}

/// Whether natural parameters describe a proper NIW.
inline bool niw_natural_valid(const NiwNatural &n) {
  try {
    (void)from_natural(n);
    return true;
  } catch (const InvalidCavity &) {
    return false;
  }
}

struct WeightedObs {
  VectorXd y;
  double u = 1.0;
};

namespace detail {
inline void require_spd(MatrixXd &m, const char *what) {
  m = 0.5 * (m + m.transpose());
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success)
    throw NonSpdResult(std::string(what) + ": result lost positive definiteness");
}
} // namespace detail

/// Conjugate update with weighted observations N(y | mu, Sigma/u).
inline NiwParams niw_posterior_update(const NiwParams &prior,
                                      std::span<const WeightedObs> obs) {
  if (obs.empty())
    return prior;
  const Index d = prior.dim();
  double sum_u = 0.0;
  VectorXd sum_uy = VectorXd::Zero(d);
  MatrixXd sum_uyy = MatrixXd::Zero(d, d);
  for (const auto &o : obs) {
    if (o.y.size() != d)
      throw LengthMismatch("niw_posterior_update: observation dimension");
    if (!(o.u > 0.0))
      throw InvalidArgument("niw_posterior_update: weights must be positive");
    sum_u += o.u;
    sum_uy += o.u * o.y;
    sum_uyy.noalias() += o.u * o.y * o.y.transpose();
  }
  NiwParams post;
  post.kappa = prior.kappa + sum_u;
  post.mu = (prior.kappa * prior.mu + sum_uy) / post.kappa;
  post.nu = prior.nu + double(obs.size());
  post.psi = prior.psi + prior.kappa * prior.mu * prior.mu.transpose() +
             sum_uyy - post.kappa * post.mu * post.mu.transpose();
  detail::require_spd(post.psi, "niw_posterior_update");
  return post;
}

/// Expected sufficient statistics (Sigma^{-1} mu, mu^T Sigma^{-1} mu,
/// Sigma^{-1}, -log|Sigma|) under an NIW.
struct NiwMoments {
  VectorXd m1;
  double m2 = 0.0;
  MatrixXd m3;
  double m4 = 0.0;

  Index dim() const noexcept { return m1.size(); }
};

inline NiwMoments niw_suffstat_moments(const NiwParams &p) {
  const Index d = p.dim();
  if (!(p.nu > double(d) - 1.0))
    throw InvalidArgument("niw_suffstat_moments: nu must exceed d - 1");
  Eigen::LLT<MatrixXd> llt(p.psi);
  if (llt.info() != Eigen::Success)
    throw NonSpdResult("niw_suffstat_moments: psi not positive definite");
  const MatrixXd psi_inv = llt.solve(MatrixXd::Identity(d, d));
  const double log_det =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  NiwMoments m;
  m.m3 = p.nu * psi_inv;
  m.m1 = m.m3 * p.mu;
  m.m2 = p.mu.dot(m.m1) + double(d) / p.kappa;
  m.m4 = mv_digamma(0.5 * p.nu, d) + double(d) * std::log(2.0) - log_det;
  return m;
}

/// Solves psi_d(nu/2) - d*log(nu/2) = target for nu on (lo, hi). The left
/// side increases monotonically towards 0.
inline double solve_niw_dof(double target, Index d, double lo, double hi) {
  auto residual = [&](double nu) {
    return mv_digamma(0.5 * nu, d) - double(d) * std::log(0.5 * nu) - target;
  };
  double r_lo = residual(lo);
  double r_hi = residual(hi);
  if (!(r_lo < 0.0 && r_hi > 0.0)) {
    if (r_lo == 0.0)
      return lo;
    if (r_hi == 0.0)
      return hi;
    throw RootNotBracketed("niw_from_moments: no sign change for nu in [" +
                           std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  // Safeguarded Newton on log(nu); falls back to bisection in log space.
  double nu = std::sqrt(lo * hi);
  for (int it = 0; it < 200; ++it) {
    const double r = residual(nu);
    if (r == 0.0)
      return nu;
    if (r < 0.0)
      lo = nu;
    else
      hi = nu;
    const double slope =
        0.5 * mv_trigamma(0.5 * nu, d) - double(d) / nu; // dr/dnu
    double next = nu - r / slope;
    if (!(next > lo && next < hi) || !std::isfinite(next))
      next = std::sqrt(lo * hi);
    if (std::abs(next - nu) <= 4e-16 * nu || hi - lo <= 4e-16 * hi) {
      nu = next;
      break;
    }
    nu = next;
  }
  if (std::abs(residual(nu)) > 1e-10)
    throw RootNotBracketed("niw_from_moments: nu root did not converge");
  return nu;
}

/// Moment inversion: recovers the NIW whose expected sufficient statistics
/// are `m`.
inline NiwParams niw_from_moments(const NiwMoments &m) {
  const Index d = m.dim();
  if (m.m3.rows() != d || m.m3.cols() != d)
    throw ShapeMismatch("niw_from_moments: m3 must be d x d");
  if (!m.m1.allFinite() || !m.m3.allFinite() || !std::isfinite(m.m2) ||
      !std::isfinite(m.m4))
    throw NonFiniteMoment("niw_from_moments: non-finite moment");
  MatrixXd m3 = 0.5 * (m.m3 + m.m3.transpose());
  Eigen::LLT<MatrixXd> llt(m3);
  if (llt.info() != Eigen::Success)
    throw NonSpdResult("niw_from_moments: m3 not positive definite");
  NiwParams p;
  p.mu = llt.solve(m.m1);
  const double gap = m.m2 - p.mu.dot(m.m1);
  if (!(gap > 0.0))
    throw NegativeKappa("niw_from_moments: m2 <= mu^T m1");
  p.kappa = double(d) / gap;
  const double log_det_m3 =
      2.0 * llt.matrixLLT().diagonal().array().log().sum();
  // psi_d(nu/2) + d log 2 - log|nu m3^{-1}| = m4
  //   <=> psi_d(nu/2) - d log(nu/2) = m4 - log|m3|
  const double lo = std::max(double(d) - 1.0, 0.0) + 1e-6;
  p.nu = solve_niw_dof(m.m4 - log_det_m3, d, lo, 1e8);
  p.psi = p.nu * llt.solve(MatrixXd::Identity(d, d));
  p.psi = 0.5 * (p.psi + p.psi.transpose());
  return p;
}

// ---------------------------------------------------------------------------
// Quadrature over the Student-t scale
// ---------------------------------------------------------------------------

struct QuadGrid {
  std::vector<double> nodes;
  std::vector<double> weights;

  std::size_t size() const noexcept { return nodes.size(); }
};

/// Midpoint rule over M equal-probability bins of Gamma(alpha, rate alpha).
inline QuadGrid gamma_quadrature(double alpha, int m) {
  if (!(alpha > 0.0) || m < 1)
    throw InvalidArgument("gamma_quadrature: need alpha > 0 and M >= 1");
  QuadGrid g;
  g.nodes.resize(std::size_t(m));
  g.weights.assign(std::size_t(m), 1.0 / double(m));
  for (int i = 0; i < m; ++i) {
    const double p = (double(i) + 0.5) / double(m);
    g.nodes[std::size_t(i)] = boost::math::gamma_p_inv(alpha, p) / alpha;
  }
  return g;
}

/// Grid with explicit nodes (normalized weights).
inline QuadGrid fixed_quadrature(std::vector<double> nodes,
                                 std::vector<double> weights) {
  if (nodes.size() != weights.size() || nodes.empty())
    throw InvalidArgument("fixed_quadrature: nodes/weights mismatch");
  double s = 0.0;
  for (double w : weights)
    s += w;
  for (double &w : weights)
    w /= s;
  return {std::move(nodes), std::move(weights)};
}

// ---------------------------------------------------------------------------
// Rank-one NIW family over a grid of observation weights
// ---------------------------------------------------------------------------

/// Shared factorization of `base` for updates by one observation y with a
/// varying weight u. Each node costs O(1) once the O(d^3) setup is done.
class NiwRankOneFamily {
public:
  NiwRankOneFamily(const NiwParams &base, const VectorXd &y)
      : base_(base), delta_(y - base.mu) {
    const Index d = base.dim();
    if (y.size() != d)
      throw LengthMismatch("NiwRankOneFamily: observation dimension");
    llt_.compute(base.psi);
    if (llt_.info() != Eigen::Success)
      throw NonSpdResult("NiwRankOneFamily: psi not positive definite");
    log_det_psi_ = 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    psi_inv_ = llt_.solve(MatrixXd::Identity(d, d));
    v_ = llt_.solve(delta_);
    quad_ = delta_.dot(v_);
    const double dd = double(d);
    log_const_ = std::lgamma(0.5 * (base.nu + 1.0)) -
                 std::lgamma(0.5 * (base.nu + 1.0 - dd)) -
                 0.5 * dd * std::log(std::numbers::pi) - 0.5 * log_det_psi_;
  }

  const NiwParams &base() const noexcept { return base_; }
  const VectorXd &delta() const noexcept { return delta_; }
  /// psi^{-1} (y - mu)
  const VectorXd &psi_inv_delta() const noexcept { return v_; }
  /// (y - mu)^T psi^{-1} (y - mu)
  double quad_form() const noexcept { return quad_; }
  double log_det_psi() const noexcept { return log_det_psi_; }
  const Eigen::LLT<MatrixXd> &psi_llt() const noexcept { return llt_; }
  const MatrixXd &psi_inv() const noexcept { return psi_inv_; }

  /// Scatter increment c = kappa*u/(kappa+u).
  double shrink(double u) const noexcept { return base_.kappa * u / (base_.kappa + u); }

  /// log p(y | u) under the base NIW: a Student-t with nu-d+1 degrees of
  /// freedom and scale psi (kappa+u) / (kappa u (nu-d+1)).
  double log_marginal(double u) const {
    const double c = shrink(u);
    return log_const_ + 0.5 * double(base_.dim()) * std::log(c) -
           0.5 * (base_.nu + 1.0) * std::log1p(c * quad_);
  }

  /// Posterior of base after the single weighted observation (y, u).
  NiwParams posterior(double u) const {
    NiwParams p;
    p.kappa = base_.kappa + u;
    p.mu = base_.mu + (u / p.kappa) * delta_;
    p.nu = base_.nu + 1.0;
    p.psi = base_.psi + shrink(u) * delta_ * delta_.transpose();
    return p;
  }

  /// Woodbury: (psi + c delta delta^T)^{-1}.
  MatrixXd posterior_psi_inv(double u) const {
    const double c = shrink(u);
    const double b = c / (1.0 + c * quad_);
    MatrixXd inv = psi_inv_;
    inv.noalias() -= b * v_ * v_.transpose();
    return inv;
  }

  /// Determinant lemma: log|psi + c delta delta^T|.
  double posterior_log_det_psi(double u) const {
    return log_det_psi_ + std::log1p(shrink(u) * quad_);
  }

private:
  NiwParams base_;
  VectorXd delta_;
  Eigen::LLT<MatrixXd> llt_;
  MatrixXd psi_inv_;
  VectorXd v_;
  double quad_ = 0.0;
  double log_det_psi_ = 0.0;
  double log_const_ = 0.0;
};

struct NiwRankOneVariant {
  NiwParams params;
  /// log p(y | u) under the base; the change in NIW log-normalizer plus the
  /// Gaussian constant.
  double log_marginal = 0.0;
  double log_det_psi = 0.0;
  /// (y - mu)^T psi^{-1} (y - mu) with the base psi.
  double quad_form = 0.0;
  MatrixXd psi_inv;
};

/// Posterior of `base` after (y, u_m) for each grid node.
inline std::vector<NiwRankOneVariant>
niw_rank_one_variants(const NiwParams &base, const VectorXd &y,
                      const QuadGrid &grid) {
  const NiwRankOneFamily fam(base, y);
  std::vector<NiwRankOneVariant> out;
  out.reserve(grid.size());
  for (double u : grid.nodes) {
    NiwRankOneVariant v;
    v.params = fam.posterior(u);
    v.log_marginal = fam.log_marginal(u);
    v.log_det_psi = fam.posterior_log_det_psi(u);
    v.quad_form = fam.quad_form();
    v.psi_inv = fam.posterior_psi_inv(u);
    out.push_back(std::move(v));
  }
  return out;
}

} // namespace epg
