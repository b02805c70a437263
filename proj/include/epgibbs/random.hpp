#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <cstdint>
#include <random>

#include "errors.hpp"

namespace epg {

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
inline std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Purposes for derived streams. Values are part of the on-disk determinism
/// contract; append only.
enum class Stream : std::uint64_t {
  data = 1,
  init = 2,
  chain = 3,
  diagnostic = 4,
};

/// Counter-based split: (root, purpose, index) -> independent generator.
inline Rng make_stream(std::uint64_t root, Stream purpose,
                       std::uint64_t index = 0) {
  std::uint64_t s = splitmix64(root);
  s = splitmix64(s ^ static_cast<std::uint64_t>(purpose));
  s = splitmix64(s ^ index);
  std::seed_seq seq{static_cast<std::uint32_t>(s),
                    static_cast<std::uint32_t>(s >> 32)};
  return Rng(seq);
}

inline double draw_uniform(Rng &rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

inline double draw_normal(Rng &rng, double mean = 0.0, double sd = 1.0) {
  return std::normal_distribution<double>(mean, sd)(rng);
}

/// Gamma(shape, rate); mean shape/rate.
inline double draw_gamma(Rng &rng, double shape, double rate) {
  return std::gamma_distribution<double>(shape, 1.0 / rate)(rng);
}

/// Inverse-Gamma(shape, scale); mean scale/(shape-1).
inline double draw_inv_gamma(Rng &rng, double shape, double scale) {
  return 1.0 / draw_gamma(rng, shape, scale);
}

inline Eigen::VectorXd draw_std_normal(Rng &rng, Eigen::Index n) {
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i)
    v(i) = draw_normal(rng);
  return v;
}

/// x ~ N(mean, cov) via Cholesky.
inline Eigen::VectorXd draw_mvn(Rng &rng, const Eigen::VectorXd &mean,
                                const Eigen::MatrixXd &cov) {
  Eigen::LLT<Eigen::MatrixXd> llt(cov);
  if (llt.info() != Eigen::Success)
    throw NonSpdResult("draw_mvn: covariance is not positive definite");
  return mean + llt.matrixL() * draw_std_normal(rng, mean.size());
}

/// Sigma ~ Inverse-Wishart(nu, psi), density proportional to
/// |Sigma|^{-(nu+d+1)/2} exp(-tr(psi Sigma^{-1})/2).
/// Bartlett decomposition of the Wishart(nu, psi^{-1}) precision.
inline Eigen::MatrixXd draw_inv_wishart(Rng &rng, double nu,
                                        const Eigen::MatrixXd &psi) {
  const Eigen::Index d = psi.rows();
  Eigen::LLT<Eigen::MatrixXd> psi_llt(psi);
  if (psi_llt.info() != Eigen::Success)
    throw NonSpdResult("draw_inv_wishart: scale is not positive definite");
  // W = L^{-T} A A^T L^{-1} with psi = L L^T, so W ~ Wishart(nu, psi^{-1}).
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i) {
    a(i, i) = std::sqrt(2.0 * draw_gamma(rng, 0.5 * (nu - double(i)), 1.0));
    for (Eigen::Index j = 0; j < i; ++j)
      a(i, j) = draw_normal(rng);
  }
  // Sigma = W^{-1} = L A^{-T} A^{-1} L^T.
  Eigen::MatrixXd l = psi_llt.matrixL();
  Eigen::MatrixXd b =
      a.triangularView<Eigen::Lower>().solve(l.transpose()).transpose();
  Eigen::MatrixXd sigma = b * b.transpose();
  return 0.5 * (sigma + sigma.transpose());
}

} // namespace epg
