#pragma once

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/KroneckerProduct>

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kmle/core.hpp"
#include "kmle/errors.hpp"
#include "kmle/kvars.hpp"
#include "kmle/parallel.hpp"
#include "kmle/rng.hpp"

namespace kmle::synth {

// VSNR of a white-noise process is exactly 1/2.
inline constexpr double kWhiteNoiseFloorDb = -3.0102999566398120;

enum class NoiseKind { Gaussian, StudentT };

struct GenSpec {
  int m = 2;
  int p = 1;
  int t = 100;
  int k = 2;
  int n_per_cluster = 10;
  NoiseKind noise = NoiseKind::Gaussian;
  double dof = 5.0;  // Student-t degrees of freedom; needs dof > 2
  std::optional<double> target_snr_db;
  double target_spectral_radius = 0.9;
  std::uint64_t seed = 0;
};

inline void validate_spec(const GenSpec& s) {
  if (s.m < 1 || s.p < 0 || s.t < 2 || s.k < 1 || s.n_per_cluster < 1)
    fail(errc::invalid_argument, "generator sizes must be positive (t >= 2, p >= 0)");
  if (!(s.target_spectral_radius > 0 && s.target_spectral_radius < 1))
    fail(errc::invalid_argument, "target spectral radius must lie in (0,1)");
  if (s.noise == NoiseKind::StudentT && !(s.dof > 2))
    fail(errc::invalid_argument, "Student-t noise needs dof > 2 for a finite variance");
}

// Companion form of the lag polynomial; empty for p = 0.
inline Eigen::MatrixXd companion_matrix(const kvars::VarParams& vp) {
  const int m = vp.m();
  const int p = vp.p;
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(m * p, m * p);
  if (p == 0) return c;
  c.topRows(m) = vp.a.rightCols(m * p);
  if (p > 1) c.block(m, 0, m * (p - 1), m * (p - 1)).setIdentity();
  return c;
}

inline double spectral_radius(const Eigen::MatrixXd& mat) {
  if (mat.rows() == 0) return 0.0;
  Eigen::EigenSolver<Eigen::MatrixXd> es(mat, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

inline double spectral_radius(const kvars::VarParams& vp) { return spectral_radius(companion_matrix(vp)); }

// Multiplies lag block l by s^l, which rescales every companion eigenvalue
// by s. Intercept and noise covariance are untouched.
inline kvars::VarParams scale_lags(const kvars::VarParams& vp, double s) {
  kvars::VarParams out = vp;
  const int m = vp.m();
  double f = 1.0;
  for (int lag = 1; lag <= vp.p; ++lag) {
    f *= s;
    out.a.block(0, 1 + m * (lag - 1), m, m) *= f;
  }
  return out;
}

// Random VAR with companion spectral radius scaled to `radius` and noise
// covariance built from a random lower-triangular Cholesky factor with
// positive diagonal.
inline kvars::VarParams gen_stable_var(int m, int p, double radius, std::mt19937_64& rng) {
  if (m < 1 || p < 0) fail(errc::invalid_argument, "need m >= 1, p >= 0");
  if (!(radius > 0 && radius < 1)) fail(errc::invalid_argument, "radius must lie in (0,1)");
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> diag(0.5, 1.5);

  Eigen::MatrixXd a(m, 1 + m * p);
  for (;;) {
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < a.cols(); ++j) a(i, j) = unit(rng);
    if (p == 0) break;
    kvars::VarParams probe;
    probe.a = a;
    probe.sigma = Eigen::MatrixXd::Identity(m, m);
    probe.p = p;
    const double rho = spectral_radius(probe);
    if (rho < 1e-12) continue;  // resample the measure-zero nilpotent case
    double f = 1.0;
    const double s = radius / rho;
    for (int lag = 1; lag <= p; ++lag) {
      f *= s;
      a.block(0, 1 + m * (lag - 1), m, m) *= f;
    }
    break;
  }

  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(m, m);
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < i; ++j) l(i, j) = unit(rng);
    l(i, i) = diag(rng);
  }
  kvars::VarParams vp;
  vp.a = std::move(a);
  vp.sigma = l * l.transpose();
  vp.chol = std::move(l);
  vp.p = p;
  return vp;
}

// Zero-lag auto-covariance of the stationary process, from the discrete
// Lyapunov equation of the companion-form state covariance (top-left block).
inline Eigen::MatrixXd stationary_covariance(const kvars::VarParams& vp) {
  const int m = vp.m();
  if (vp.p == 0) return vp.sigma;
  const Eigen::MatrixXd c = companion_matrix(vp);
  if (spectral_radius(c) >= 1.0) fail(errc::unstable, "VAR is not stable");
  const auto d = c.rows();
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(d, d);
  q.topLeftCorner(m, m) = vp.sigma;
  const Eigen::MatrixXd lhs =
      Eigen::MatrixXd::Identity(d * d, d * d) - Eigen::kroneckerProduct(c, c);
  const Eigen::VectorXd vec_q = Eigen::Map<const Eigen::VectorXd>(q.data(), d * d);
  const Eigen::VectorXd vec_s = lhs.partialPivLu().solve(vec_q);
  const Eigen::MatrixXd s = Eigen::Map<const Eigen::MatrixXd>(vec_s.data(), d, d);
  Eigen::MatrixXd pi = s.topLeftCorner(m, m);
  return ((pi + pi.transpose()) / 2.0).eval();
}

// Scale-invariant signal-to-noise ratio in dB:
//   VSNR = lambda_max(Sigma^{-1/2} Pi Sigma^{-1/2}) / 2.
inline double vsnr_db(const kvars::VarParams& vp) {
  const Eigen::MatrixXd pi = stationary_covariance(vp);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(vp.sigma);
  if (es.info() != Eigen::Success || es.eigenvalues().minCoeff() <= 0)
    fail(errc::singular_sigma, "noise covariance is not positive definite");
  const Eigen::MatrixXd isqrt =
      es.eigenvectors() * es.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() * es.eigenvectors().transpose();
  Eigen::MatrixXd whitened = isqrt * pi * isqrt;
  whitened = ((whitened + whitened.transpose()) / 2.0).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ew(whitened);
  const double vsnr = ew.eigenvalues().maxCoeff() / 2.0;
  return 10.0 * std::log10(vsnr);
}

// Rescales the lag blocks so vsnr_db hits target_db within tol_db. VSNR is
// monotone increasing in the root scale s, so a bisection on (0, s_max] with
// s_max keeping the spectral radius below 0.999 suffices.
inline kvars::VarParams scale_to_snr(const kvars::VarParams& vp, double target_db, double tol_db = 0.01) {
  if (!(tol_db > 0)) fail(errc::invalid_argument, "tolerance must be positive");
  if (target_db < kWhiteNoiseFloorDb - 1e-9)
    fail(errc::unachievable, "target below the white-noise floor of " + std::to_string(kWhiteNoiseFloorDb) + " dB");
  if (vp.p == 0) {
    if (std::abs(target_db - kWhiteNoiseFloorDb) <= tol_db) return vp;
    fail(errc::unachievable, "a pure-noise model is pinned at the white-noise floor");
  }
  const double rho = spectral_radius(vp);
  if (rho <= 0) {
    if (std::abs(target_db - kWhiteNoiseFloorDb) <= tol_db) return vp;
    fail(errc::unachievable, "lag blocks vanish; only the white-noise floor is reachable");
  }
  const double s_max = 0.999 / rho;
  if (vsnr_db(scale_lags(vp, s_max)) < target_db - tol_db)
    fail(errc::unachievable, "target above the ceiling reachable with spectral radius < 0.999");

  double lo = 0.0, hi = s_max;
  for (int it = 0; it < 200; ++it) {
    const double mid = (it == 0) ? std::min(1.0, s_max) : 0.5 * (lo + hi);
    const kvars::VarParams cand = scale_lags(vp, mid);
    const double db = vsnr_db(cand);
    if (std::abs(db - target_db) <= tol_db) return cand;
    if (db < target_db)
      lo = mid;
    else
      hi = mid;
  }
  fail(errc::unachievable, "SNR bisection did not converge");
}

namespace detail {

template <class Dist>
inline Eigen::MatrixXd simulate_series(const kvars::VarParams& vp, int t_len, std::mt19937_64& rng,
                                       Dist& draw, double std_correction) {
  const int m = vp.m();
  const int p = vp.p;
  const int burn = 10 * p + 100;
  std::vector<Eigen::VectorXd> hist(static_cast<std::size_t>(std::max(p, 1)), Eigen::VectorXd::Zero(m));
  Eigen::MatrixXd out(m, t_len);
  Eigen::VectorXd z(m), y(m);
  for (int step = 0; step < burn + t_len; ++step) {
    for (int i = 0; i < m; ++i) z[i] = draw(rng) / std_correction;
    y = vp.a.col(0) + vp.chol.template triangularView<Eigen::Lower>() * z;
    for (int lag = 1; lag <= p; ++lag)
      y.noalias() += vp.a.block(0, 1 + m * (lag - 1), m, m) * hist[static_cast<std::size_t>(lag - 1)];
    for (int lag = p - 1; lag >= 1; --lag) hist[static_cast<std::size_t>(lag)] = hist[static_cast<std::size_t>(lag - 1)];
    if (p > 0) hist[0] = y;
    if (step >= burn) out.col(step - burn) = y;
  }
  return out;
}

}  // namespace detail

inline Eigen::MatrixXd simulate(const kvars::VarParams& vp, int t_len, NoiseKind noise, double dof,
                                std::mt19937_64& rng) {
  if (noise == NoiseKind::StudentT) {
    if (!(dof > 2)) fail(errc::invalid_argument, "Student-t noise needs dof > 2");
    std::student_t_distribution<double> d(dof);
    return detail::simulate_series(vp, t_len, rng, d, std::sqrt(dof / (dof - 2.0)));
  }
  std::normal_distribution<double> d(0.0, 1.0);
  return detail::simulate_series(vp, t_len, rng, d, 1.0);
}

struct SynthData {
  Dataset dataset;
  Assignment truth;
  std::vector<kvars::VarParams> models;
  std::vector<double> snr_db;
  GenSpec spec;
};

// K independent stable models, n_per_cluster series each; per-model and
// per-series RNG streams are derived from the spec seed so the output is
// reproducible regardless of evaluation order.
inline SynthData gen_dataset(const GenSpec& spec) {
  validate_spec(spec);
  if (spec.target_snr_db && *spec.target_snr_db < kWhiteNoiseFloorDb - 1e-9)
    fail(errc::unachievable, "target SNR below the white-noise floor");
  SynthData out;
  out.spec = spec;
  out.models.reserve(static_cast<std::size_t>(spec.k));
  out.snr_db.reserve(static_cast<std::size_t>(spec.k));
  for (int c = 0; c < spec.k; ++c) {
    auto rng = make_rng(derive_seed(spec.seed, 0x30DE1, static_cast<std::uint64_t>(c)));
    kvars::VarParams vp;
    bool ok = false;
    std::string last_error;
    // A draw whose SNR ceiling (radius < 0.999) sits below the target is
    // discarded and redrawn from the same stream, keeping determinism.
    for (int attempt = 0; attempt < 50 && !ok; ++attempt) {
      vp = gen_stable_var(spec.m, spec.p, spec.target_spectral_radius, rng);
      if (!spec.target_snr_db) {
        ok = true;
        break;
      }
      try {
        vp = scale_to_snr(vp, *spec.target_snr_db);
        ok = true;
      } catch (const Error& e) {
        if (e.code() != errc::unachievable) throw;
        last_error = e.what();
      }
    }
    if (!ok)
      fail(errc::unachievable, "cluster " + std::to_string(c) + ": " + last_error);
    out.snr_db.push_back(spec.p == 0 ? kWhiteNoiseFloorDb : vsnr_db(vp));
    out.models.push_back(std::move(vp));
  }

  const int n = spec.k * spec.n_per_cluster;
  std::vector<Eigen::MatrixXd> series(static_cast<std::size_t>(n));
  std::vector<int> labels(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), 0, [&](std::size_t idx) {
    const int c = static_cast<int>(idx) / spec.n_per_cluster;
    auto rng = make_rng(derive_seed(spec.seed, 0x5E21E5, static_cast<std::uint64_t>(idx)));
    series[idx] = simulate(out.models[static_cast<std::size_t>(c)], spec.t, spec.noise, spec.dof, rng);
    labels[idx] = c;
  });
  out.dataset = validate_dataset(std::move(series));
  out.truth = make_assignment(std::move(labels), spec.k);
  return out;
}

}  // namespace kmle::synth
