#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kmle/core.hpp"
#include "kmle/errors.hpp"
#include "kmle/parallel.hpp"

namespace kmle {

enum class StopMode { ParamTol, LogLikTol };

// Termination control for the alternating solver. ParamTol compares successive
// parameter iterates, LogLikTol successive total log-likelihoods.
struct StopRule {
  StopMode mode = StopMode::LogLikTol;
  double epsilon = 1e-6;
  int max_iters = 200;
};

inline void validate_stop_rule(const StopRule& s) {
  if (!(s.epsilon > 0) || !std::isfinite(s.epsilon))
    fail(errc::invalid_argument, "stop tolerance must be finite and positive");
  if (s.max_iters < 1) fail(errc::invalid_argument, "max_iters must be positive");
}

enum class StopReason { Converged, MaxIters, LabelFixedPoint };

inline const char* stop_reason_name(StopReason r) {
  switch (r) {
    case StopReason::Converged: return "converged";
    case StopReason::MaxIters: return "max_iters";
    case StopReason::LabelFixedPoint: return "label_fixed_point";
  }
  return "unknown";
}

// Runtime certificate that the returned point is unimprovable by either
// coordinate step alone: tau_stable means re-running the label step changes
// no label (ties allowed), theta_stable means a re-fit moves no cluster's
// parameters beyond the stop tolerance.
struct PartialMaxCertificate {
  bool tau_stable = false;
  bool theta_stable = false;
};

template <class Params>
struct FitResult {
  Assignment assignment;
  std::vector<Params> params;
  std::vector<double> trace;  // total log-likelihood after each completed iteration
  int iters = 0;
  StopReason stop_reason = StopReason::MaxIters;
  PartialMaxCertificate certificate;

  double final_loglik() const {
    return trace.empty() ? -std::numeric_limits<double>::infinity() : trace.back();
  }
};

// Contract a cluster-model family must satisfy to be driven by the solver:
// items are addressed by index, log densities are per-item, fit_mle is the
// per-cluster maximum-likelihood estimate and must be deterministic for a
// fixed item set.
template <class F>
concept ClusterModelFamily =
    requires(const F& fam, const typename F::Params& q, std::size_t n, std::span<const std::size_t> items) {
      { fam.size() } -> std::convertible_to<std::size_t>;
      { fam.log_density(n, q) } -> std::convertible_to<double>;
      { fam.fit_mle(items) } -> std::same_as<typename F::Params>;
      { fam.params_distance(q, q) } -> std::convertible_to<double>;
    };

struct KmleOptions {
  StopRule stop;
  // When a cluster loses every member (or its MLE fails), re-seed its
  // parameters from the single worst-fit item instead of aborting. The label
  // vector is left untouched, so the ascent property is preserved exactly.
  bool rescue_empty = true;
  int threads = 0;  // 0 = hardware default
  // Called after each completed iteration with (iter, labels, loglik).
  std::function<void(int, const Assignment&, double)> observer;
};

// Label step: labels[n] = argmax_k loglik(n, k), ties broken by lowest index.
inline Assignment tau_step(const Eigen::MatrixXd& loglik) {
  const auto n = loglik.rows();
  const auto k = loglik.cols();
  if (n < 1 || k < 1) fail(errc::empty_input, "log-likelihood matrix is empty");
  if (!loglik.allFinite()) fail(errc::non_finite, "log-likelihood matrix has NaN or Inf entries");
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = loglik(i, 0);
    int arg = 0;
    for (Eigen::Index j = 1; j < k; ++j) {
      if (loglik(i, j) > best) {
        best = loglik(i, j);
        arg = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = arg;
  }
  return make_assignment(std::move(labels), static_cast<int>(k));
}

template <ClusterModelFamily F>
Eigen::MatrixXd loglik_matrix(const F& fam, const std::vector<typename F::Params>& params, int threads) {
  const std::size_t n = fam.size();
  const std::size_t k = params.size();
  Eigen::MatrixXd ll(n, k);
  parallel_for(n, threads, [&](std::size_t i) {
    for (std::size_t j = 0; j < k; ++j) ll(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
        fam.log_density(i, params[j]);
  });
  return ll;
}

// Parameter step: per-cluster MLE over the items currently assigned to it.
// `current` supplies the pre-update parameters, required for re-seeding empty
// or degenerate clusters from the globally worst-fit item.
template <ClusterModelFamily F>
std::vector<typename F::Params> theta_step(const F& fam, const Assignment& asg, const KmleOptions& opts = {},
                                           const std::vector<typename F::Params>* current = nullptr) {
  using P = typename F::Params;
  const std::size_t n = fam.size();
  const int k = asg.k;
  if (asg.labels.size() != n) fail(errc::length_mismatch, "assignment does not match family size");

  std::vector<std::vector<std::size_t>> members(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < n; ++i) members[static_cast<std::size_t>(asg.labels[i])].push_back(i);

  std::vector<P> out(static_cast<std::size_t>(k));
  std::vector<std::string> failure(static_cast<std::size_t>(k));
  std::vector<char> needs_rescue(static_cast<std::size_t>(k), 0);

  parallel_for(static_cast<std::size_t>(k), opts.threads, [&](std::size_t c) {
    if (members[c].empty()) {
      needs_rescue[c] = 1;
      failure[c] = "no members";
      return;
    }
    try {
      out[c] = fam.fit_mle(std::span<const std::size_t>(members[c]));
    } catch (const Error& e) {
      needs_rescue[c] = 1;
      failure[c] = e.what();
    }
  });

  // Items ranked worst-first by their best log-density under the current
  // parameters; each cluster needing rescue takes the next distinct one.
  std::vector<std::size_t> pool;
  std::size_t pool_next = 0;
  auto next_rescue_item = [&]() -> std::size_t {
    if (pool.empty()) {
      std::vector<double> best(n, 0.0);
      parallel_for(n, opts.threads, [&](std::size_t i) {
        double b = -std::numeric_limits<double>::infinity();
        for (const auto& q : *current) b = std::max(b, fam.log_density(i, q));
        best[i] = b;
      });
      pool.resize(n);
      std::iota(pool.begin(), pool.end(), std::size_t{0});
      std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b2) { return best[a] < best[b2]; });
    }
    if (pool_next >= pool.size())
      fail(errc::degenerate_cluster, "no item can re-seed a degenerate cluster");
    return pool[pool_next++];
  };

  for (int c = 0; c < k; ++c) {
    if (!needs_rescue[static_cast<std::size_t>(c)]) continue;
    if (!opts.rescue_empty || current == nullptr)
      fail(errc::degenerate_cluster, "cluster " + std::to_string(c) + ": " + failure[static_cast<std::size_t>(c)]);
    std::string last = failure[static_cast<std::size_t>(c)];
    bool done = false;
    while (!done) {
      const std::size_t item = next_rescue_item();
      try {
        std::array<std::size_t, 1> one{item};
        out[static_cast<std::size_t>(c)] = fam.fit_mle(std::span<const std::size_t>(one));
        done = true;
      } catch (const Error& e) {
        last = e.what();
        if (pool_next >= pool.size())
          fail(errc::degenerate_cluster, "cluster " + std::to_string(c) + ": rescue failed (" + last + ")");
      }
    }
  }
  return out;
}

template <ClusterModelFamily F>
PartialMaxCertificate check_partial_maximum(const F& fam, const FitResult<typename F::Params>& res,
                                            double epsilon, const KmleOptions& opts = {}) {
  PartialMaxCertificate cert;
  const Eigen::MatrixXd ll = loglik_matrix(fam, res.params, opts.threads);
  cert.tau_stable = true;
  for (Eigen::Index i = 0; i < ll.rows(); ++i) {
    const double at_label = ll(i, res.assignment.labels[static_cast<std::size_t>(i)]);
    if (at_label < ll.row(i).maxCoeff()) {
      cert.tau_stable = false;
      break;
    }
  }
  const auto refit = theta_step(fam, res.assignment, opts, &res.params);
  cert.theta_stable = true;
  for (std::size_t c = 0; c < refit.size(); ++c) {
    if (fam.params_distance(refit[c], res.params[c]) > epsilon) {
      cert.theta_stable = false;
      break;
    }
  }
  return cert;
}

// Alternate label and parameter steps from the given initial parameters until
// the label vector reaches a fixed point, the stop rule fires, or max_iters is
// hit. The log-likelihood trace is non-decreasing; each label vector is
// visited at most once before termination.
template <ClusterModelFamily F>
FitResult<typename F::Params> run_kmle(const F& fam, std::vector<typename F::Params> params,
                                       const KmleOptions& opts = {}) {
  using P = typename F::Params;
  validate_stop_rule(opts.stop);
  const std::size_t n = fam.size();
  const int k = static_cast<int>(params.size());
  if (k < 1) fail(errc::invalid_argument, "need at least one initial cluster parameter");
  if (n == 0) fail(errc::empty_input, "family has no items");

  FitResult<P> res;
  std::vector<int> prev_labels;
  Assignment asg;
  StopReason reason = StopReason::MaxIters;
  int completed = 0;
  std::vector<double> per_item(n);

  for (int iter = 0; iter < opts.stop.max_iters; ++iter) {
    const Eigen::MatrixXd ll = loglik_matrix(fam, params, opts.threads);
    asg = tau_step(ll);
    if (!prev_labels.empty() && asg.labels == prev_labels) {
      reason = StopReason::LabelFixedPoint;
      break;
    }

    auto next = theta_step(fam, asg, opts, &params);
    double max_move = 0.0;
    if (opts.stop.mode == StopMode::ParamTol)
      for (int c = 0; c < k; ++c)
        max_move = std::max(max_move, fam.params_distance(params[static_cast<std::size_t>(c)],
                                                          next[static_cast<std::size_t>(c)]));
    params = std::move(next);

    parallel_for(n, opts.threads, [&](std::size_t i) {
      per_item[i] = fam.log_density(i, params[static_cast<std::size_t>(asg.labels[i])]);
    });
    double loglik = 0.0;
    for (std::size_t i = 0; i < n; ++i) loglik += per_item[i];
    res.trace.push_back(loglik);
    completed = iter + 1;
    if (opts.observer) opts.observer(iter, asg, loglik);

    if (opts.stop.mode == StopMode::ParamTol && max_move < opts.stop.epsilon) {
      reason = StopReason::Converged;
      break;
    }
    if (opts.stop.mode == StopMode::LogLikTol && iter >= 1 &&
        std::abs(res.trace[static_cast<std::size_t>(iter)] - res.trace[static_cast<std::size_t>(iter - 1)]) <
            opts.stop.epsilon) {
      reason = StopReason::Converged;
      break;
    }
    prev_labels = asg.labels;
  }

  res.assignment = asg;
  res.params = std::move(params);
  res.iters = completed;
  res.stop_reason = reason;
  res.certificate = check_partial_maximum(fam, res, opts.stop.epsilon, opts);
  return res;
}

}  // namespace kmle
