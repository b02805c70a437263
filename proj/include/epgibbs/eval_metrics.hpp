#pragma once

// Clustering and sampler diagnostics: normalized mutual information, KL
// between diagonal Gaussians, parameter MSE traces and runtime aggregation.

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "errors.hpp"
#include "expfam_gauss.hpp"
#include "gibbs_core.hpp"

namespace epg {

enum class NmiNorm { arithmetic, geometric, min, max };

/// Normalized mutual information. Two constant labelings score 1; exactly
/// one constant labeling scores 0.
inline double nmi(const std::vector<int> &a, const std::vector<int> &b,
                  NmiNorm norm = NmiNorm::arithmetic) {
  if (a.size() != b.size())
    throw LengthMismatch("nmi: labelings differ in length");
  if (a.empty())
    throw InvalidArgument("nmi: empty labeling");
  std::map<int, double> ca, cb;
  std::map<std::pair<int, int>, double> cab;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i] < 0 || b[i] < 0)
      throw InvalidArgument("nmi: labels must be nonnegative");
    ca[a[i]] += 1.0;
    cb[b[i]] += 1.0;
    cab[{a[i], b[i]}] += 1.0;
  }
  const double n = double(a.size());
  auto entropy = [n](const std::map<int, double> &c) {
    double h = 0.0;
    for (const auto &[k, v] : c)
      h -= (v / n) * std::log(v / n);
    return h;
  };
  const double ha = entropy(ca), hb = entropy(cb);
  if (ca.size() == 1 && cb.size() == 1)
    return 1.0;
  if (ca.size() == 1 || cb.size() == 1)
    return 0.0;
  double mi = 0.0;
  for (const auto &[key, v] : cab) {
    const double pab = v / n;
    mi += pab * std::log(pab * n * n / (ca[key.first] * cb[key.second]));
  }
  double den = 0.0;
  switch (norm) {
  case NmiNorm::arithmetic:
    den = 0.5 * (ha + hb);
    break;
  case NmiNorm::geometric:
    den = std::sqrt(ha * hb);
    break;
  case NmiNorm::min:
    den = std::min(ha, hb);
    break;
  case NmiNorm::max:
    den = std::max(ha, hb);
    break;
  }
  return std::clamp(mi / den, 0.0, 1.0);
}

/// sum_t KL(N(mu_p, s_p) || N(mu_q, s_q)).
inline double kl_diag_gaussians(const DiagGaussianTrack &p,
                                const DiagGaussianTrack &q) {
  if (p.size() != q.size())
    throw LengthMismatch("kl_diag_gaussians: length mismatch");
  if (!p.normalizable() || !q.normalizable())
    throw InvalidArgument("kl_diag_gaussians: inputs must be normalizable");
  const VectorXd mp = p.mean(), mq = q.mean();
  double kl = 0.0;
  for (Index t = 0; t < p.size(); ++t) {
    const double vp = 1.0 / p.rho(t), vq = 1.0 / q.rho(t);
    const double d = mp(t) - mq(t);
    kl += 0.5 * (vp / vq + d * d / vq - 1.0 + std::log(vq / vp));
  }
  return std::max(kl, 0.0);
}

/// One sampled (or true) parameter configuration of the time-series model.
struct ParamSnapshot {
  VectorXd a;
  VectorXd lambda;
  VectorXd sigma_y2;
  /// Latent paths, one row per series; may be empty.
  MatrixXd x;
  /// Cluster of each series, used to resolve the (lambda, eta) sign per
  /// cluster; empty means one global sign.
  std::vector<int> groups;
};

struct MseRow {
  double a = 0.0;
  double lambda = 0.0;
  double sigma_y2 = 0.0;
  double x = std::numeric_limits<double>::quiet_NaN();
};

inline MseRow mse_row(const ParamSnapshot &s, const ParamSnapshot &truth) {
  const Index n = truth.a.size();
  if (s.a.size() != n || s.lambda.size() != n || s.sigma_y2.size() != n ||
      truth.lambda.size() != n || truth.sigma_y2.size() != n)
    throw ShapeMismatch("mse_trace: parameter vectors differ in length");
  if (!s.groups.empty() && Index(s.groups.size()) != n)
    throw ShapeMismatch("mse_trace: groups length differs");
  MseRow r;
  r.a = (s.a - truth.a).squaredNorm() / double(n);
  r.sigma_y2 = (s.sigma_y2 - truth.sigma_y2).squaredNorm() / double(n);
  // lambda: per group, the better of the two signs
  std::map<int, std::pair<double, double>> err; // group -> (same, flipped)
  for (Index i = 0; i < n; ++i) {
    const int g = s.groups.empty() ? 0 : s.groups[std::size_t(i)];
    auto &e = err[g];
    e.first += std::pow(s.lambda(i) - truth.lambda(i), 2);
    e.second += std::pow(-s.lambda(i) - truth.lambda(i), 2);
  }
  for (const auto &[g, e] : err)
    r.lambda += std::min(e.first, e.second);
  r.lambda /= double(n);
  if (s.x.size() > 0 || truth.x.size() > 0) {
    if (s.x.rows() != truth.x.rows() || s.x.cols() != truth.x.cols())
      throw ShapeMismatch("mse_trace: latent path shapes differ");
    r.x = (s.x - truth.x).squaredNorm() / double(s.x.size());
  }
  return r;
}

inline std::vector<MseRow> mse_trace(const std::vector<ParamSnapshot> &samples,
                                     const ParamSnapshot &truth) {
  std::vector<MseRow> out;
  out.reserve(samples.size());
  for (const auto &s : samples)
    out.push_back(mse_row(s, truth));
  return out;
}

/// Mean per-sweep time of one trace, tagged with a group and problem size.
struct RuntimeSample {
  std::string group;
  double n = 0.0;
  double seconds_per_iteration = 0.0;
};

inline RuntimeSample runtime_sample(std::string group, double n,
                                    const ChainTrace &trace) {
  const auto s = trace.sweep_seconds();
  if (s.empty())
    throw InvalidArgument("runtime_summary: trace has no sweeps");
  double m = 0.0;
  for (double v : s)
    m += v;
  return {std::move(group), n, m / double(s.size())};
}

struct RuntimeRow {
  std::string group;
  double n = 0.0;
  double mean = 0.0;
  double stddev = 0.0;
  std::size_t count = 0;
};

struct RuntimeSummary {
  std::vector<RuntimeRow> rows;
  /// Least-squares slope of log(mean time) against log(n), per group.
  std::map<std::string, double> slope;
};

/// Least-squares slope of y on x.
inline double ols_slope(const std::vector<double> &x, const std::vector<double> &y) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n)
    return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= double(n);
  my /= double(n);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

inline RuntimeSummary runtime_summary(const std::vector<RuntimeSample> &samples) {
  if (samples.empty())
    throw InvalidArgument("runtime_summary: no samples");
  std::map<std::pair<std::string, double>, std::vector<double>> cells;
  for (const auto &s : samples)
    cells[{s.group, s.n}].push_back(s.seconds_per_iteration);
  RuntimeSummary out;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> fit;
  for (const auto &[key, v] : cells) {
    RuntimeRow r;
    r.group = key.first;
    r.n = key.second;
    r.count = v.size();
    for (double t : v)
      r.mean += t;
    r.mean /= double(v.size());
    if (v.size() > 1) {
      double ss = 0.0;
      for (double t : v)
        ss += (t - r.mean) * (t - r.mean);
      r.stddev = std::sqrt(ss / double(v.size() - 1));
    }
    out.rows.push_back(r);
    if (r.n > 0.0 && r.mean > 0.0) {
      fit[r.group].first.push_back(std::log(r.n));
      fit[r.group].second.push_back(std::log(r.mean));
    }
  }
  for (const auto &[g, xy] : fit)
    out.slope[g] = ols_slope(xy.first, xy.second);
  return out;
}

} // namespace epg
