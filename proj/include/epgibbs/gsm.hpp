#pragma once

// Stale-site diagnostic on a 1-D Gaussian scale mixture. A sparse-update EP
// Gibbs chain over two clusters keeps a Gaussian q over each cluster mean;
// at each checkpoint a copy of the state is refreshed to the EP fixed point
// at the current z and the two are compared.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "datasets.hpp"
#include "errors.hpp"
#include "eval_metrics.hpp"
#include "expfam_gauss.hpp"
#include "gibbs_core.hpp"
#include "random.hpp"

namespace epg {

/// EP hooks: Approx is a length-1 DiagGaussianTrack over the cluster mean.
class GsmEpModel {
public:
  using Approx = DiagGaussianTrack;
  struct Cavity {
    DiagGaussianTrack nat;
    double mean = 0.0;
    double var = 1.0;
  };

  GsmEpModel(std::vector<double> y, double r, double C, double sigma2, double prior_var)
      : y_(std::move(y)), r_(r), C_(C), s2_(sigma2), prior_var_(prior_var) {
    if (r < 0.0 || r > 1.0 || !(C > 0.0) || !(sigma2 > 0.0) || !(prior_var > 0.0))
      throw InvalidArgument("GsmEpModel: invalid parameters");
  }

  std::size_t num_items() const { return y_.size(); }
  Approx prior() const {
    return DiagGaussianTrack::from_moments(VectorXd::Zero(1), VectorXd::Constant(1, prior_var_));
  }
  Approx zero_site() const { return DiagGaussianTrack::zeros(1); }

  Cavity make_cavity(const Approx &a) const {
    if (!(a.rho(0) > 0.0))
      throw NonPositiveCavityPrecision(0);
    return {a, a.h(0) / a.rho(0), 1.0 / a.rho(0)};
  }

  double candidate_loglike(std::size_t i, const Cavity &c) const {
    double lw[2];
    const int n = components(c, y_[i], lw, nullptr, nullptr);
    return n == 1 ? lw[0] : std::max(lw[0], lw[1]) + std::log1p(std::exp(-std::abs(lw[0] - lw[1])));
  }

  /// Tilted moments of a Gaussian cavity times a two-component mixture,
  /// both components centred on the cluster mean.
  Approx site_update(std::size_t i, const Cavity &c) const {
    double lw[2], m[2], v[2];
    const int n = components(c, y_[i], lw, m, v);
    double p0 = 1.0;
    if (n == 2)
      p0 = 1.0 / (1.0 + std::exp(lw[1] - lw[0]));
    const double p1 = 1.0 - p0;
    const double mean = n == 1 ? m[0] : p0 * m[0] + p1 * m[1];
    double var = v[0];
    if (n == 2)
      var = p0 * (v[0] + m[0] * m[0]) + p1 * (v[1] + m[1] * m[1]) - mean * mean;
    return diag_site_from_tilted(VectorXd::Constant(1, mean), VectorXd::Constant(1, var), c.nat);
  }

private:
  /// Log weight, mean and variance of each mixture component's posterior.
  int components(const Cavity &c, double y, double *lw, double *m, double *v) const {
    const double scales[2] = {s2_, C_ * s2_};
    const double logp[2] = {std::log1p(-r_), std::log(r_)};
    int n = 0;
    for (int j = 0; j < 2; ++j) {
      if ((j == 0 && r_ == 1.0) || (j == 1 && r_ == 0.0))
        continue;
      const double s = c.var + scales[j];
      const double e = y - c.mean;
      lw[n] = logp[j] - 0.5 * (std::log(2.0 * std::numbers::pi * s) + e * e / s);
      if (m) {
        m[n] = c.mean + c.var / s * e;
        v[n] = c.var * scales[j] / s;
      }
      ++n;
    }
    return n;
  }

  std::vector<double> y_;
  double r_, C_, s2_, prior_var_;
};

struct GsmDiagOptions {
  std::vector<double> C{2.0, 5.0, 10.0};
  std::vector<double> r{0.0, 0.2, 0.5};
  std::vector<double> delta{0.0, 0.5};
  int n = 100;
  int passes = 20;
  int replicates = 1000;
  double sigma2 = 1.0;
  double prior_var = 10.0;
  double alpha = 1.0;
  int refresh_max_passes = 1000;
  double refresh_tol = 1e-10;
  /// Reported values are rounded to this many decimal places.
  int decimals = 8;

  void validate() const {
    if (C.empty() || r.empty() || delta.empty())
      throw InvalidArgument("gsm_diagnostic: empty grid");
    if (n < 2 || passes < 1 || replicates < 1)
      throw InvalidArgument("gsm_diagnostic: n, passes and replicates must be positive");
  }
};

/// Errors of q against q* for one checkpoint of one chain. KL is summed over
/// the two clusters, percent errors averaged.
struct GsmErrors {
  double kl = 0.0;
  double mean_pe = 0.0;
  double mean_ape = 0.0;
  double var_pe = 0.0;
  double var_ape = 0.0;
};

inline GsmErrors gsm_errors(const std::vector<DiagGaussianTrack> &q,
                            const std::vector<DiagGaussianTrack> &q_star) {
  GsmErrors e;
  const double K = double(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    e.kl += kl_diag_gaussians(q[k], q_star[k]);
    const double m = q[k].mean()(0), ms = q_star[k].mean()(0);
    const double v = q[k].var()(0), vs = q_star[k].var()(0);
    // an empty cluster sits at the prior mean 0 in both; equal means are 0% off
    const double mpe = m == ms ? 0.0 : 100.0 * (m - ms) / std::abs(ms);
    const double vpe = 100.0 * (v - vs) / vs;
    e.mean_pe += mpe / K;
    e.mean_ape += std::abs(mpe) / K;
    e.var_pe += vpe / K;
    e.var_ape += std::abs(vpe) / K;
  }
  return e;
}

/// One row per (C, r, delta, start, pass): median and standard deviation
/// over replicates.
struct GsmRow {
  double C = 0.0, r = 0.0, delta = 0.0;
  std::string start;
  int pass = 0;
  GsmErrors median, sd;
};

struct GsmDiagResult {
  std::vector<GsmRow> rows;
  int unconverged_refreshes = 0;
  int site_resets = 0;
};

namespace detail {
inline double round_to(double v, int decimals) {
  const double s = std::pow(10.0, decimals);
  const double r = std::round(v * s) / s;
  return r == 0.0 ? 0.0 : r;
}

inline std::pair<double, double> median_sd(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  const double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  double mean = 0.0;
  for (double x : v)
    mean += x;
  mean /= double(n);
  double ss = 0.0;
  for (double x : v)
    ss += (x - mean) * (x - mean);
  return {med, n > 1 ? std::sqrt(ss / double(n - 1)) : 0.0};
}
} // namespace detail

/// Runs the grid. Chains for cell c, replicate j use data and init streams
/// indexed by c*replicates+j, so the flat and warm starts share data and z0.
inline GsmDiagResult gsm_diagnostic(const GsmDiagOptions &opt, std::uint64_t seed) {
  opt.validate();
  GsmDiagResult out;
  const DirichletPrior dir{opt.alpha, 2};
  std::uint64_t cell = 0;
  for (double C : opt.C)
    for (double r : opt.r)
      for (double delta : opt.delta) {
        for (const char *start : {"flat", "full_ep"}) {
          const bool warm = std::string(start) == "full_ep";
          // per pass, per replicate
          std::vector<std::vector<GsmErrors>> errs(std::size_t(opt.passes + 1));
          for (int j = 0; j < opt.replicates; ++j) {
            const std::uint64_t idx = cell * std::uint64_t(opt.replicates) + std::uint64_t(j);
            Rng data_rng = make_stream(seed, Stream::data, idx);
            const GsmGenParams g{opt.n, r, C, delta, opt.sigma2};
            const GsmDataset data = generate_gsm(g, data_rng);
            const GsmEpModel model(data.y, r, C, opt.sigma2, opt.prior_var);
            Rng init_rng = make_stream(seed, Stream::init, idx);
            EpEngine<GsmEpModel> chain(
                model,
                ClusterState<DiagGaussianTrack>::init(
                    uniform_assignments(data.y.size(), 2, init_rng), 2, model.prior(),
                    model.zero_site()),
                dir);
            if (warm && !chain.full_refresh(opt.refresh_max_passes, opt.refresh_tol).converged)
              ++out.unconverged_refreshes;
            Rng rng = make_stream(seed, Stream::chain, idx);
            for (int pass = 0; pass <= opt.passes; ++pass) {
              if (pass > 0)
                chain.sweep(rng);
              EpEngine<GsmEpModel> ref(model, chain.state(), dir);
              if (!ref.full_refresh(opt.refresh_max_passes, opt.refresh_tol).converged)
                ++out.unconverged_refreshes;
              errs[std::size_t(pass)].push_back(gsm_errors(chain.state().q, ref.state().q));
            }
            out.site_resets += chain.total_resets();
          }
          for (int pass = 0; pass <= opt.passes; ++pass) {
            GsmRow row{C, r, delta, start, pass, {}, {}};
            const auto &e = errs[std::size_t(pass)];
            auto column = [&](double GsmErrors::*f, double &med, double &sd) {
              std::vector<double> v;
              for (const auto &x : e)
                v.push_back(x.*f);
              const auto [m, s] = detail::median_sd(std::move(v));
              med = detail::round_to(m, opt.decimals);
              sd = detail::round_to(s, opt.decimals);
            };
            column(&GsmErrors::kl, row.median.kl, row.sd.kl);
            column(&GsmErrors::mean_pe, row.median.mean_pe, row.sd.mean_pe);
            column(&GsmErrors::mean_ape, row.median.mean_ape, row.sd.mean_ape);
            column(&GsmErrors::var_pe, row.median.var_pe, row.sd.var_pe);
            column(&GsmErrors::var_ape, row.median.var_ape, row.sd.var_ape);
            out.rows.push_back(std::move(row));
          }
        }
        ++cell;
      }
  return out;
}

} // namespace epg
