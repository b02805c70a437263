#pragma once

// Model-agnostic pieces of the collapsed samplers: Dirichlet-marginalized
// prior weights, categorical draws from log-weights, a small worker pool for
// concurrent candidate evaluation, and the sparse-update EP sweep with an
// optional full refresh at fixed assignments.

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <concepts>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <limits>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "expfam_gauss.hpp"
#include "random.hpp"

namespace epg {

struct DirichletPrior {
  double alpha = 1.0;
  int k = 1;

  void validate() const {
    if (!(alpha > 0.0) || k < 1)
      throw InvalidArgument("DirichletPrior: need alpha > 0 and K >= 1");
  }
};

/// Predictive p(z_i = k | z_{-i}) with the weights pi integrated out:
/// (n_k + alpha/K) / (N - 1 + alpha).
inline VectorXd prior_weights(const std::vector<int> &counts_minus_i,
                              const DirichletPrior &prior) {
  prior.validate();
  if (counts_minus_i.size() != std::size_t(prior.k))
    throw LengthMismatch("prior_weights: counts length differs from K");
  VectorXd w(prior.k);
  const double a = prior.alpha / double(prior.k);
  for (int k = 0; k < prior.k; ++k) {
    if (counts_minus_i[std::size_t(k)] < 0)
      throw InvalidArgument("prior_weights: negative count");
    w(k) = double(counts_minus_i[std::size_t(k)]) + a;
  }
  return w / w.sum();
}

inline VectorXd log_prior_weights(const std::vector<int> &counts_minus_i,
                                  const DirichletPrior &prior) {
  return prior_weights(counts_minus_i, prior).array().log();
}

/// Draws k with probability proportional to exp(log_prior + log_like).
/// Consumes exactly one uniform from `rng`.
inline int sample_assignment(const VectorXd &log_prior, const VectorXd &log_like,
                             Rng &rng) {
  if (log_prior.size() != log_like.size() || log_prior.size() == 0)
    throw LengthMismatch("sample_assignment: weight vectors differ in length");
  const Index K = log_prior.size();
  VectorXd lw = log_prior + log_like;
  double mx = -std::numeric_limits<double>::infinity();
  for (Index k = 0; k < K; ++k) {
    if (std::isnan(lw(k)))
      throw NonFiniteMoment("sample_assignment: NaN log-weight");
    mx = std::max(mx, lw(k));
  }
  if (mx == -std::numeric_limits<double>::infinity())
    throw AllForbidden();
  if (mx == std::numeric_limits<double>::infinity())
    throw NonFiniteMoment("sample_assignment: +inf log-weight");
  VectorXd w = (lw.array() - mx).exp();
  const double u = draw_uniform(rng) * w.sum();
  double acc = 0.0;
  for (Index k = 0; k < K; ++k) {
    acc += w(k);
    if (u < acc)
      return int(k);
  }
  // Rounding can leave u == sum; return the last admissible index.
  for (Index k = K - 1; k >= 0; --k)
    if (w(k) > 0.0)
      return int(k);
  throw AllForbidden();
}

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Fixed set of threads running `fn(i)` for i in [0, n). The calling thread
/// takes part. Work is split by index, so results written to per-index slots
/// are independent of the thread count.
class WorkerPool {
public:
  explicit WorkerPool(unsigned threads = 1) {
    const unsigned extra = threads > 1 ? threads - 1 : 0;
    for (unsigned t = 0; t < extra; ++t)
      workers_.emplace_back([this] { loop(); });
  }
  ~WorkerPool() {
    {
      std::lock_guard lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto &w : workers_)
      w.join();
  }
  WorkerPool(const WorkerPool &) = delete;
  WorkerPool &operator=(const WorkerPool &) = delete;

  unsigned size() const noexcept { return unsigned(workers_.size()) + 1; }

  void parallel_for(std::size_t n, const std::function<void(std::size_t)> &fn) {
    if (workers_.empty() || n <= 1) {
      for (std::size_t i = 0; i < n; ++i)
        fn(i);
      return;
    }
    {
      std::lock_guard lk(mu_);
      job_ = &fn;
      n_ = n;
      next_ = 0;
      pending_ = workers_.size();
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    run_items();
    std::unique_lock lk(mu_);
    done_cv_.wait(lk, [&] { return pending_ == 0; });
    job_ = nullptr;
    if (error_)
      std::rethrow_exception(error_);
  }

private:
  void run_items() {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard lk(mu_);
        if (next_ >= n_)
          return;
        i = next_++;
      }
      try {
        (*job_)(i);
      } catch (...) {
        std::lock_guard lk(mu_);
        if (!error_)
          error_ = std::current_exception();
      }
    }
  }

  void loop() {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_)
          return;
        seen = generation_;
      }
      run_items();
      {
        std::lock_guard lk(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> workers_;
  std::mutex mu_;
  std::condition_variable cv_, done_cv_;
  const std::function<void(std::size_t)> *job_ = nullptr;
  std::size_t n_ = 0, next_ = 0, pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
  std::exception_ptr error_;
};

// ---------------------------------------------------------------------------
// EP cluster state and sweep
// ---------------------------------------------------------------------------

/// Hooks a case study supplies to the EP engine. `Approx` is a natural-
/// parameter type closed under +, - and scaled(); `Cavity` is whatever the
/// model wants precomputed from a normalizable approximation.
template <class M>
concept EpModel = requires(const M &m, std::size_t i,
                           const typename M::Approx &a,
                           const typename M::Cavity &c) {
  { m.num_items() } -> std::convertible_to<std::size_t>;
  { m.prior() } -> std::convertible_to<typename M::Approx>;
  { m.zero_site() } -> std::convertible_to<typename M::Approx>;
  /// Throws InvalidCavity when `a` is not normalizable.
  { m.make_cavity(a) } -> std::convertible_to<typename M::Cavity>;
  { m.candidate_loglike(i, c) } -> std::convertible_to<double>;
  /// Undamped site moving `c` onto the tilted moments of item i.
  { m.site_update(i, c) } -> std::convertible_to<typename M::Approx>;
  { max_abs_diff(a, a) } -> std::convertible_to<double>;
};

template <class Approx> struct ClusterState {
  std::vector<int> z;
  std::vector<int> counts;
  std::vector<Approx> q;
  std::vector<Approx> sites;

  std::size_t num_items() const noexcept { return z.size(); }
  int num_clusters() const noexcept { return int(counts.size()); }

  /// All sites zero, every q equal to the prior.
  static ClusterState init(std::vector<int> z, int K, const Approx &prior,
                           const Approx &zero) {
    ClusterState s;
    s.counts.assign(std::size_t(K), 0);
    for (int k : z) {
      if (k < 0 || k >= K)
        throw InvalidArgument("ClusterState: assignment out of range");
      ++s.counts[std::size_t(k)];
    }
    s.z = std::move(z);
    s.q.assign(std::size_t(K), prior);
    s.sites.assign(s.z.size(), zero);
    return s;
  }

  /// Largest natural-parameter gap between q_k and prior + member sites.
  /// Throws if counts disagree with z.
  double consistency_error(const Approx &prior) const {
    std::vector<int> c(counts.size(), 0);
    std::vector<Approx> sum(counts.size(), prior);
    for (std::size_t i = 0; i < z.size(); ++i) {
      ++c[std::size_t(z[i])];
      sum[std::size_t(z[i])] += sites[i];
    }
    if (c != counts)
      throw InvalidArgument("ClusterState: counts disagree with assignments");
    double err = 0.0;
    for (std::size_t k = 0; k < q.size(); ++k)
      err = std::max(err, max_abs_diff(sum[k], q[k]));
    return err;
  }

  std::vector<int> counts_without(std::size_t i) const {
    std::vector<int> c = counts;
    --c[std::size_t(z[i])];
    return c;
  }
};

struct EpSweepOptions {
  double damping = 1.0;
  bool random_order = false;
  /// Replace a failed site update (numerical error) by a zero site.
  bool reset_on_site_error = true;
  bool record_item_times = false;
};

struct SweepStats {
  double seconds = 0.0;
  int moves = 0;
  int site_resets = 0;
  std::vector<double> item_seconds;
};

namespace detail {
inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
      .count();
}

inline std::vector<std::size_t> sweep_order(std::size_t n, bool random,
                                            Rng &rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t(0));
  if (random)
    for (std::size_t i = n; i > 1; --i) {
      const auto j = std::size_t(draw_uniform(rng) * double(i));
      std::swap(order[i - 1], order[std::min(j, i - 1)]);
    }
  return order;
}
} // namespace detail

/// Sparse-update EP engine around a ClusterState. Keeps prepared cavities of
/// each cluster's q so unchanged clusters are not re-factorized.
template <EpModel M> class EpEngine {
public:
  using Approx = typename M::Approx;
  using Cavity = typename M::Cavity;

  EpEngine(const M &model, ClusterState<Approx> state, DirichletPrior prior,
           WorkerPool *pool = nullptr)
      : model_(model), state_(std::move(state)), prior_(prior),
        prior_approx_(model.prior()), zero_(model.zero_site()), pool_(pool) {
    prior_.validate();
    if (state_.num_clusters() != prior_.k)
      throw InvalidArgument("EpEngine: K differs between state and prior");
    if (state_.num_items() != model_.num_items())
      throw LengthMismatch("EpEngine: item count differs from model");
    prepared_.resize(std::size_t(prior_.k));
  }

  const ClusterState<Approx> &state() const noexcept { return state_; }
  ClusterState<Approx> &mutable_state() noexcept {
    prepared_.assign(prepared_.size(), std::nullopt);
    return state_;
  }
  const M &model() const noexcept { return model_; }
  int total_resets() const noexcept { return resets_; }

  /// Prepared view of q_k (cached).
  const Cavity &cluster_cavity(int k) {
    auto &slot = prepared_[std::size_t(k)];
    if (!slot) {
      try {
        slot.emplace(model_.make_cavity(state_.q[std::size_t(k)]));
      } catch (const InvalidCavity &) {
        reset_cluster(k);
        slot.emplace(model_.make_cavity(state_.q[std::size_t(k)]));
      }
    }
    return *slot;
  }

  /// One Gibbs pass over all items.
  SweepStats sweep(Rng &rng, const EpSweepOptions &opt = {}) {
    SweepStats st;
    const auto t0 = std::chrono::steady_clock::now();
    const int K = prior_.k;
    const auto order =
        detail::sweep_order(state_.num_items(), opt.random_order, rng);
    VectorXd ll(K);
    std::vector<const Cavity *> cav(static_cast<std::size_t>(K));
    if (opt.record_item_times)
      st.item_seconds.assign(state_.num_items(), 0.0);
    const int resets_before = resets_;
    for (std::size_t i : order) {
      const auto ti = std::chrono::steady_clock::now();
      const int k_old = state_.z[i];
      // Cavity of the current cluster with item i removed.
      auto [removed, own] = remove_item(i);
      for (int k = 0; k < K; ++k)
        cav[std::size_t(k)] = k == k_old ? &own : &cluster_cavity(k);
      evaluate(i, cav, ll);
      const VectorXd lp = log_prior_weights(state_.counts_without(i), prior_);
      const int k_new = sample_assignment(lp, ll, rng);

      const Approx &old_site = state_.sites[i];
      const Approx base = k_new == k_old ? old_site : zero_;
      Approx site = updated_site(i, *cav[std::size_t(k_new)], base, opt);
      if (k_new != k_old) {
        state_.q[std::size_t(k_old)] = std::move(removed);
        prepared_[std::size_t(k_old)].reset();
        --state_.counts[std::size_t(k_old)];
        ++state_.counts[std::size_t(k_new)];
        state_.z[i] = k_new;
        ++st.moves;
        state_.q[std::size_t(k_new)] += site;
      } else {
        state_.q[std::size_t(k_new)] = std::move(removed);
        state_.q[std::size_t(k_new)] += site;
      }
      prepared_[std::size_t(k_new)].reset();
      state_.sites[i] = std::move(site);
      if (opt.record_item_times)
        st.item_seconds[i] = detail::seconds_since(ti);
    }
    st.site_resets = resets_ - resets_before;
    st.seconds = detail::seconds_since(t0);
    return st;
  }

  struct RefreshResult {
    int passes = 0;
    bool converged = false;
    double max_change = 0.0;
  };

  /// Standard EP at fixed z: re-matches every site until the largest
  /// natural-parameter change of a pass is below `tol`.
  RefreshResult full_refresh(int max_passes, double tol,
                             const EpSweepOptions &opt = {}) {
    RefreshResult r;
    if (tol == std::numeric_limits<double>::infinity()) {
      r.converged = true;
      return r;
    }
    for (int pass = 0; pass < max_passes; ++pass) {
      double change = 0.0;
      for (std::size_t i = 0; i < state_.num_items(); ++i) {
        const int k = state_.z[i];
        auto [removed, cav] = remove_item(i);
        Approx site = updated_site(i, cav, state_.sites[i], opt);
        change = std::max(change, max_abs_diff(site, state_.sites[i]));
        state_.q[std::size_t(k)] = std::move(removed);
        state_.q[std::size_t(k)] += site;
        prepared_[std::size_t(k)].reset();
        state_.sites[i] = std::move(site);
      }
      r.passes = pass + 1;
      r.max_change = change;
      if (change < tol) {
        r.converged = true;
        break;
      }
    }
    return r;
  }

private:
  /// q_{z_i} minus site_i, repairing invalid cavities: first drop the site,
  /// then, if the rest of the cluster is still improper, reset the cluster.
  std::pair<Approx, Cavity> remove_item(std::size_t i) {
    const int k = state_.z[i];
    Approx removed = state_.q[std::size_t(k)] - state_.sites[i];
    try {
      Cavity c = model_.make_cavity(removed);
      return {std::move(removed), std::move(c)};
    } catch (const InvalidCavity &) {
      ++resets_;
    }
    state_.sites[i] = zero_;
    state_.q[std::size_t(k)] = rebuild(k);
    prepared_[std::size_t(k)].reset();
    try {
      Cavity c = model_.make_cavity(state_.q[std::size_t(k)]);
      return {state_.q[std::size_t(k)], std::move(c)};
    } catch (const InvalidCavity &) {
      reset_cluster(k);
    }
    return {state_.q[std::size_t(k)], model_.make_cavity(state_.q[std::size_t(k)])};
  }

  Approx rebuild(int k) const {
    Approx s = prior_approx_;
    for (std::size_t j = 0; j < state_.num_items(); ++j)
      if (state_.z[j] == k)
        s += state_.sites[j];
    return s;
  }

  void reset_cluster(int k) {
    for (std::size_t j = 0; j < state_.num_items(); ++j)
      if (state_.z[j] == k)
        state_.sites[j] = zero_;
    state_.q[std::size_t(k)] = prior_approx_;
    prepared_[std::size_t(k)].reset();
    ++resets_;
  }

  Approx updated_site(std::size_t i, const Cavity &cav, const Approx &base,
                      const EpSweepOptions &opt) {
    try {
      Approx matched = model_.site_update(i, cav);
      return damp_site(base, matched, opt.damping);
    } catch (const NumericalError &) {
      if (!opt.reset_on_site_error)
        throw;
      ++resets_;
      return zero_;
    }
  }

  void evaluate(std::size_t i, const std::vector<const Cavity *> &cav,
                VectorXd &ll) const {
    auto one = [&](std::size_t k) {
      ll(Index(k)) = model_.candidate_loglike(i, *cav[k]);
    };
    if (pool_ && pool_->size() > 1)
      pool_->parallel_for(cav.size(), one);
    else
      for (std::size_t k = 0; k < cav.size(); ++k)
        one(k);
  }

  const M &model_;
  ClusterState<Approx> state_;
  DirichletPrior prior_;
  Approx prior_approx_;
  Approx zero_;
  WorkerPool *pool_;
  std::vector<std::optional<Cavity>> prepared_;
  int resets_ = 0;
};

// ---------------------------------------------------------------------------
// Chain trace
// ---------------------------------------------------------------------------

/// FNV-1a over the assignment vector.
inline std::uint64_t hash_assignments(const std::vector<int> &z) {
  std::uint64_t h = 1469598103934665603ULL;
  for (int k : z) {
    auto v = static_cast<std::uint32_t>(k);
    for (int b = 0; b < 4; ++b) {
      h ^= (v >> (8 * b)) & 0xffu;
      h *= 1099511628211ULL;
    }
  }
  return h;
}

struct TraceRow {
  int iteration = 0;
  double loglik = 0.0;
  double nmi = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
  std::uint64_t z_hash = 0;
  /// Named parameter MSEs (a, lambda, sigma_y2, x) when available.
  std::vector<std::pair<std::string, double>> mse;
};

struct ChainTrace {
  std::string label;
  std::vector<TraceRow> rows;
  std::vector<std::vector<int>> snapshots;

  void push(TraceRow row) {
    if (!rows.empty() && row.iteration <= rows.back().iteration)
      throw InvalidArgument("ChainTrace: iterations must increase");
    if (row.seconds < 0.0)
      throw InvalidArgument("ChainTrace: negative wall time");
    rows.push_back(std::move(row));
  }

  /// Per-sweep wall times, excluding the initialization row (iteration 0).
  std::vector<double> sweep_seconds() const {
    std::vector<double> s;
    for (const auto &r : rows)
      if (r.iteration > 0)
        s.push_back(r.seconds);
    return s;
  }
};

/// z drawn uniformly over {0..K-1}.
inline std::vector<int> uniform_assignments(std::size_t n, int K, Rng &rng) {
  std::vector<int> z(n);
  for (auto &k : z)
    k = std::min(K - 1, int(draw_uniform(rng) * K));
  return z;
}

inline std::vector<int> counts_of(const std::vector<int> &z, int K) {
  std::vector<int> c(std::size_t(K), 0);
  for (int k : z)
    ++c[std::size_t(k)];
  return c;
}

} // namespace epg
