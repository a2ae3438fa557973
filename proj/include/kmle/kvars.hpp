#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "kmle/core.hpp"
#include "kmle/engine.hpp"
#include "kmle/errors.hpp"
#include "kmle/parallel.hpp"
#include "kmle/rng.hpp"

namespace kmle::kvars {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Per-cluster VAR parameters: a = [A_0, A_1, ..., A_p] stacked column-wise
// (m x (1+m*p), column 0 is the intercept), sigma the driving-noise
// covariance with its lower Cholesky factor cached.
struct VarParams {
  Eigen::MatrixXd a;
  Eigen::MatrixXd sigma;
  Eigen::MatrixXd chol;  // lower triangular, sigma = chol * chol'
  int p = 0;

  int m() const { return static_cast<int>(sigma.rows()); }
  double log_det_sigma() const { return 2.0 * chol.diagonal().array().log().sum(); }
};

struct SolveOptions {
  bool ridge = false;  // jitter singular Gram/covariance matrices instead of failing
  int threads = 0;
};

inline void warn_ridge(const char* where, double delta) {
  std::fprintf(stderr, "warning: %s singular, added ridge %.3e to the diagonal\n", where, delta);
}

// Builds VarParams from a coefficient matrix and a (possibly asymmetric up to
// rounding) covariance estimate; caches the Cholesky factor.
inline VarParams make_var_params(Eigen::MatrixXd a, Eigen::MatrixXd sigma, int p,
                                 const SolveOptions& opts = {}) {
  const auto m = sigma.rows();
  if (sigma.cols() != m) fail(errc::invalid_argument, "sigma must be square");
  if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, sigma.cwiseAbs().maxCoeff()))
    fail(errc::invalid_argument, "sigma must be symmetric");
  sigma = ((sigma + sigma.transpose()) / 2.0).eval();
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    if (!opts.ridge) fail(errc::singular_sigma, "noise covariance is not positive definite");
    double delta = 1e-10 * sigma.trace() / static_cast<double>(m);
    if (!(delta > 0)) delta = 1e-10;
    warn_ridge("noise covariance", delta);
    sigma += delta * Eigen::MatrixXd::Identity(m, m);
    llt.compute(sigma);
    if (llt.info() != Eigen::Success) fail(errc::singular_sigma, "noise covariance singular even after ridge");
  }
  VarParams vp;
  vp.a = std::move(a);
  vp.sigma = std::move(sigma);
  vp.chol = llt.matrixL();
  vp.p = p;
  return vp;
}

// Cached thin-QR factorisation of a series' regressor block: r'r equals the
// block's Gram matrix, yq = Q' * targets.
struct QrCache {
  Eigen::MatrixXd r;   // (1+mp) x (1+mp) upper triangular
  Eigen::MatrixXd yq;  // (1+mp) x m
  bool rank_deficient = false;
};

// Regression views plus QR caches for a whole dataset at a common order p.
// Immutable after construction; shared by scoring and fitting.
struct KvarsContext {
  std::vector<RegressorBlock> blocks;
  std::vector<QrCache> caches;
  int p = 0;
  int m = 0;
  int t_len = 0;

  int n() const { return static_cast<int>(blocks.size()); }
  int rows() const { return t_len - p; }
};

inline QrCache qr_of_block(const RegressorBlock& blk) {
  const auto cols = blk.x.cols();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(blk.x);
  QrCache cache;
  cache.r = qr.matrixQR().topRows(cols).template triangularView<Eigen::Upper>();
  cache.yq = (qr.householderQ().transpose() * blk.y).topRows(cols);
  const Eigen::ArrayXd d = cache.r.diagonal().array().abs();
  cache.rank_deficient = d.minCoeff() <= 1e-12 * std::max(1.0, d.maxCoeff());
  return cache;
}

inline KvarsContext precompute_qr(const Dataset& ds, int p, int threads = 0) {
  if (p > ds.t_len - 2)
    fail(errc::order_too_large,
         "order " + std::to_string(p) + " too large for length " + std::to_string(ds.t_len));
  KvarsContext ctx;
  ctx.p = p;
  ctx.m = ds.m;
  ctx.t_len = ds.t_len;
  ctx.blocks.resize(ds.series.size());
  ctx.caches.resize(ds.series.size());
  parallel_for(ds.series.size(), threads, [&](std::size_t i) {
    ctx.blocks[i] = build_regressors(ds.series[i], p);
    ctx.caches[i] = qr_of_block(ctx.blocks[i]);
  });
  return ctx;
}

// Pooled least-squares coefficients for one cluster from the cached QR
// factors: A' = (sum r'r)^{-1} (sum r'yq), solved via Cholesky of the pooled
// Gram rather than an explicit inverse.
inline Eigen::MatrixXd fit_var(const KvarsContext& ctx, std::span<const std::size_t> items,
                               const SolveOptions& opts = {}) {
  if (items.empty()) fail(errc::empty_input, "cannot fit a VAR to zero series");
  const auto cols = ctx.caches[items.front()].r.cols();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cols, cols);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(cols, ctx.m);
  for (std::size_t n : items) {
    const auto& c = ctx.caches[n];
    gram.noalias() += c.r.transpose() * c.r;
    rhs.noalias() += c.r.transpose() * c.yq;
  }
  Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) {
    if (!opts.ridge) fail(errc::rank_deficient, "pooled regressor Gram matrix is singular");
    double delta = 1e-10 * gram.trace() / static_cast<double>(cols);
    if (!(delta > 0)) delta = 1e-10;
    warn_ridge("pooled regressor Gram matrix", delta);
    gram += delta * Eigen::MatrixXd::Identity(cols, cols);
    llt.compute(gram);
    if (llt.info() != Eigen::Success) fail(errc::rank_deficient, "Gram matrix singular even after ridge");
  }
  return llt.solve(rhs).transpose();
}

namespace detail {

// Residual cross-product E'E accumulated through the R factor of a QR of the
// residual block (direct product when rows < cols, where it is exact anyway).
inline Eigen::MatrixXd residual_outer(const RegressorBlock& blk, const Eigen::MatrixXd& a) {
  const Eigen::MatrixXd resid = blk.y - blk.x * a.transpose();
  if (resid.rows() < resid.cols()) return resid.transpose() * resid;
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(resid);
  const Eigen::MatrixXd v = qr.matrixQR().topRows(resid.cols()).template triangularView<Eigen::Upper>();
  return v.transpose() * v;
}

// Mean squared target magnitude; reference scale for deciding that residuals
// have vanished (exact-fit data) rather than merely being small.
inline double target_scale(const KvarsContext& ctx, std::span<const std::size_t> items) {
  double scale = 0.0;
  for (std::size_t n : items)
    scale = std::max(scale, ctx.blocks[n].y.squaredNorm() / static_cast<double>(ctx.blocks[n].y.size()));
  return scale;
}

// Rejects (or in ridge mode jitters) a residual covariance at rounding level
// relative to the data scale; Cholesky alone cannot tell 1e-30 from genuine
// variance.
inline void guard_vanishing_sigma(Eigen::MatrixXd& s, double scale, const SolveOptions& opts) {
  const auto m = s.rows();
  if (s.trace() > 1e-24 * scale * static_cast<double>(m)) return;
  if (!opts.ridge) fail(errc::singular_sigma, "residual covariance vanishes (exact-fit data)");
  warn_ridge("residual covariance", 1e-10);
  s += 1e-10 * Eigen::MatrixXd::Identity(m, m);
}

}  // namespace detail

// Per-cluster noise covariance: pooled residual outer products divided by
// (T-p) * |cluster|, with the Cholesky factor cached.
inline VarParams fit_sigma(const KvarsContext& ctx, std::span<const std::size_t> items,
                           const Eigen::MatrixXd& a, const SolveOptions& opts = {}) {
  if (items.empty()) fail(errc::empty_input, "cannot fit a covariance to zero series");
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(ctx.m, ctx.m);
  for (std::size_t n : items) s += detail::residual_outer(ctx.blocks[n], a);
  s /= static_cast<double>(ctx.rows()) * static_cast<double>(items.size());
  detail::guard_vanishing_sigma(s, detail::target_scale(ctx, items), opts);
  return make_var_params(a, std::move(s), ctx.p, opts);
}

// Goodness-of-fit score of one block under one cluster model:
//   D = (T-p) ln|Sigma| + sum_t e_t' Sigma^{-1} e_t,
// computed with forward substitution against the cached Cholesky factor.
// The block may be built at a larger common order than vp.p; only the first
// 1+m*vp.p regressor columns are used.
inline double score_block(const RegressorBlock& blk, const VarParams& vp) {
  const auto used = 1 + vp.m() * vp.p;
  if (used > blk.x.cols())
    fail(errc::order_too_large, "model order exceeds the block's common order");
  const Eigen::MatrixXd resid = blk.y - blk.x.leftCols(used) * vp.a.transpose();
  const Eigen::MatrixXd xi = vp.chol.triangularView<Eigen::Lower>().solve(resid.transpose());
  return static_cast<double>(blk.rows()) * vp.log_det_sigma() + xi.squaredNorm();
}

// Convenience overload on a raw series; p_common >= vp.p fixes the scored rows
// t = p_common+1..T so scores stay comparable across clusters of unequal order.
inline double score_series(const Eigen::MatrixXd& series, const VarParams& vp, int p_common) {
  if (p_common < vp.p) fail(errc::invalid_argument, "common order must be at least the model order");
  return score_block(build_regressors(series, p_common), vp);
}

// Conditional Gaussian log-likelihood of the block under the model; equals
// -(D + (T-p) m ln 2pi)/2.
inline double loglik_block(const RegressorBlock& blk, const VarParams& vp) {
  return -0.5 * (score_block(blk, vp) + static_cast<double>(blk.rows()) * vp.m() * kLog2Pi);
}

// Single-series fit through the cached QR: A' = R^{-1} yq, then the residual
// covariance. Used for initialisation.
inline VarParams fit_series_var(const KvarsContext& ctx, std::size_t n, const SolveOptions& opts = {}) {
  const auto& c = ctx.caches[n];
  if (c.rank_deficient) fail(errc::rank_deficient, "series " + std::to_string(n) + " has a rank-deficient regressor block");
  const Eigen::MatrixXd at = c.r.triangularView<Eigen::Upper>().solve(c.yq);
  Eigen::MatrixXd s = detail::residual_outer(ctx.blocks[n], at.transpose());
  s /= static_cast<double>(ctx.rows());
  const std::array<std::size_t, 1> self{n};
  detail::guard_vanishing_sigma(s, detail::target_scale(ctx, std::span<const std::size_t>(self)), opts);
  return make_var_params(at.transpose(), std::move(s), ctx.p, opts);
}

enum class InitMode { Rnd, Oracle };

struct InitDraw {
  std::vector<VarParams> params;
  std::vector<std::size_t> chosen;  // series index seeding each cluster
};

// Seeds k clusters from per-series VAR fits. Rnd draws k distinct series
// uniformly; Oracle draws one series per true cluster. Series whose
// single-series fit is degenerate are skipped, up to N attempts in total.
inline InitDraw init_random(const KvarsContext& ctx, int k, std::uint64_t seed, InitMode mode,
                            const std::vector<int>* true_labels = nullptr,
                            const SolveOptions& opts = {}) {
  const int n = ctx.n();
  if (k < 1) fail(errc::invalid_argument, "cluster count must be positive");
  if (k > n) fail(errc::too_few_series, "cannot seed " + std::to_string(k) + " clusters from " +
                                            std::to_string(n) + " series");
  auto rng = make_rng(seed);

  std::vector<std::vector<std::size_t>> pools;
  if (mode == InitMode::Oracle) {
    if (true_labels == nullptr || static_cast<int>(true_labels->size()) != n)
      fail(errc::invalid_argument, "oracle initialisation requires true labels for every series");
    std::vector<int> distinct(*true_labels);
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    if (static_cast<int>(distinct.size()) != k)
      fail(errc::invalid_argument, "oracle initialisation needs exactly k distinct true clusters");
    pools.resize(static_cast<std::size_t>(k));
    for (int i = 0; i < n; ++i) {
      const auto slot = std::lower_bound(distinct.begin(), distinct.end(), (*true_labels)[i]) - distinct.begin();
      pools[static_cast<std::size_t>(slot)].push_back(static_cast<std::size_t>(i));
    }
    for (auto& pool : pools) std::shuffle(pool.begin(), pool.end(), rng);
  } else {
    std::vector<std::size_t> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    pools.assign(1, std::move(all));
  }

  InitDraw draw;
  draw.params.reserve(static_cast<std::size_t>(k));
  std::string last_error = "no candidate series";
  int attempts = 0;
  for (int c = 0; c < k; ++c) {
    auto& pool = pools[mode == InitMode::Oracle ? static_cast<std::size_t>(c) : 0];
    bool seeded = false;
    while (!pool.empty() && attempts < n) {
      const std::size_t cand = pool.back();
      pool.pop_back();
      ++attempts;
      try {
        draw.params.push_back(fit_series_var(ctx, cand, opts));
        draw.chosen.push_back(cand);
        seeded = true;
        break;
      } catch (const Error& e) {
        last_error = e.what();
      }
    }
    if (!seeded)
      fail(errc::singular_sigma, "could not seed cluster " + std::to_string(c) + " (" + last_error + ")");
  }
  return draw;
}

// Both stopping rules: ParamTol compares max_k max(|dA|_F, |dSigma|_F) against
// epsilon, LogLikTol the absolute log-likelihood change.
inline bool stopping_check(const std::vector<VarParams>& prev, const std::vector<VarParams>& next,
                           double prev_loglik, double next_loglik, const StopRule& rule) {
  validate_stop_rule(rule);
  if (rule.mode == StopMode::LogLikTol) return std::abs(next_loglik - prev_loglik) < rule.epsilon;
  if (prev.size() != next.size()) fail(errc::length_mismatch, "parameter lists differ in length");
  double worst = 0.0;
  for (std::size_t c = 0; c < prev.size(); ++c) {
    if (prev[c].a.rows() != next[c].a.rows() || prev[c].a.cols() != next[c].a.cols() ||
        prev[c].sigma.rows() != next[c].sigma.rows())
      fail(errc::length_mismatch, "parameter shapes differ");
    worst = std::max(worst, (next[c].a - prev[c].a).norm());
    worst = std::max(worst, (next[c].sigma - prev[c].sigma).norm());
  }
  return worst < rule.epsilon;
}

// Solver-facing view of a dataset at a common order: items are series
// indices, parameters are VarParams.
class KvarsFamily {
 public:
  using Params = VarParams;

  KvarsFamily(const KvarsContext& ctx, SolveOptions opts = {}) : ctx_(&ctx), opts_(opts) {}

  std::size_t size() const { return ctx_->blocks.size(); }
  const KvarsContext& context() const { return *ctx_; }

  double log_density(std::size_t n, const Params& q) const { return loglik_block(ctx_->blocks[n], q); }

  Params fit_mle(std::span<const std::size_t> items) const {
    return fit_sigma(*ctx_, items, fit_var(*ctx_, items, opts_), opts_);
  }

  double params_distance(const Params& x, const Params& y) const {
    return std::max((x.a - y.a).norm(), (x.sigma - y.sigma).norm());
  }

 private:
  const KvarsContext* ctx_;
  SolveOptions opts_;
};

struct KvarsConfig {
  int k = 2;
  int p = 1;
  InitMode init = InitMode::Rnd;
  StopRule stop;
  std::uint64_t seed = 0;
  int restarts = 1;
  bool ridge = false;
  int threads = 0;
  bool rescue_empty = true;
};

struct KvarsRun {
  FitResult<VarParams> fit;
  std::uint64_t seed = 0;    // derived per-restart seed
  int restart = 0;
  std::vector<std::size_t> init_series;
};

inline std::vector<KvarsRun> run_kvars_restarts(const Dataset& ds, const KvarsConfig& cfg,
                                                const std::vector<int>* true_labels = nullptr) {
  if (cfg.restarts < 1) fail(errc::invalid_argument, "restarts must be at least 1");
  validate_stop_rule(cfg.stop);
  const KvarsContext ctx = precompute_qr(ds, cfg.p, cfg.threads);
  const SolveOptions solve{cfg.ridge, cfg.threads};
  const KvarsFamily fam(ctx, solve);
  KmleOptions opts;
  opts.stop = cfg.stop;
  opts.rescue_empty = cfg.rescue_empty;
  opts.threads = cfg.threads;

  std::vector<KvarsRun> runs;
  runs.reserve(static_cast<std::size_t>(cfg.restarts));
  for (int r = 0; r < cfg.restarts; ++r) {
    const std::uint64_t rs = derive_seed(cfg.seed, 0xA117, static_cast<std::uint64_t>(r));
    InitDraw draw = init_random(ctx, cfg.k, rs, cfg.init, true_labels, solve);
    KvarsRun run;
    run.fit = run_kmle(fam, std::move(draw.params), opts);
    run.seed = rs;
    run.restart = r;
    run.init_series = std::move(draw.chosen);
    runs.push_back(std::move(run));
  }
  return runs;
}

inline const KvarsRun& best_run(const std::vector<KvarsRun>& runs) {
  if (runs.empty()) fail(errc::empty_input, "no runs");
  std::size_t best = 0;
  for (std::size_t i = 1; i < runs.size(); ++i)
    if (runs[i].fit.final_loglik() > runs[best].fit.final_loglik()) best = i;
  return runs[best];
}

// Full pipeline: restart-loop over random (or oracle) initialisations and
// return the run with the highest final log-likelihood.
inline KvarsRun run_kvars(const Dataset& ds, const KvarsConfig& cfg,
                          const std::vector<int>* true_labels = nullptr) {
  auto runs = run_kvars_restarts(ds, cfg, true_labels);
  return best_run(runs);
}

}  // namespace kmle::kvars
