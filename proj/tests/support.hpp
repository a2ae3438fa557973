// Shared test utilities: independent reference implementations used as
// oracles, plus small data generators. Everything here must stay independent
// of the library code paths it is used to check.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <random>
#include <vector>

#include "kmle/core.hpp"
#include "kmle/kvars.hpp"
#include "kmle/synth.hpp"

namespace testsupport {

// ---- naive VAR pipeline (normal equations, explicit inverses) ----

struct NaiveVar {
  Eigen::MatrixXd a;
  Eigen::MatrixXd sigma;
};

// Pooled least squares straight from the raw regressor blocks, solved with an
// explicit inverse of the summed Gram matrix.
inline Eigen::MatrixXd naive_fit_var(const std::vector<kmle::RegressorBlock>& blocks,
                                     const std::vector<std::size_t>& items) {
  const auto cols = blocks[items.front()].x.cols();
  const auto m = blocks[items.front()].y.cols();
  Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(cols, cols);
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(cols, m);
  for (std::size_t n : items) {
    gram += blocks[n].x.transpose() * blocks[n].x;
    rhs += blocks[n].x.transpose() * blocks[n].y;
  }
  return (gram.inverse() * rhs).transpose();
}

inline Eigen::MatrixXd naive_fit_sigma(const std::vector<kmle::RegressorBlock>& blocks,
                                       const std::vector<std::size_t>& items, const Eigen::MatrixXd& a) {
  const auto m = blocks[items.front()].y.cols();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(m, m);
  long long rows = 0;
  for (std::size_t n : items) {
    const Eigen::MatrixXd resid = blocks[n].y - blocks[n].x * a.transpose();
    s += resid.transpose() * resid;
    rows += resid.rows();
  }
  return s / static_cast<double>(rows);
}

// D_{n,k} evaluated with an explicit matrix inverse and determinant.
inline double naive_score(const kmle::RegressorBlock& blk, const Eigen::MatrixXd& a,
                          const Eigen::MatrixXd& sigma) {
  const Eigen::MatrixXd resid = blk.y - blk.x.leftCols(a.cols()) * a.transpose();
  const Eigen::MatrixXd inv = sigma.inverse();
  double quad = 0.0;
  for (Eigen::Index t = 0; t < resid.rows(); ++t)
    quad += resid.row(t) * inv * resid.row(t).transpose();
  return static_cast<double>(resid.rows()) * std::log(sigma.determinant()) + quad;
}

// Conditional Gaussian log-density of a block, term by term.
inline double naive_loglik(const kmle::RegressorBlock& blk, const Eigen::MatrixXd& a,
                           const Eigen::MatrixXd& sigma) {
  const Eigen::MatrixXd resid = blk.y - blk.x.leftCols(a.cols()) * a.transpose();
  const Eigen::MatrixXd inv = sigma.inverse();
  const double logdet = std::log(sigma.determinant());
  const auto m = static_cast<double>(sigma.rows());
  double ll = 0.0;
  for (Eigen::Index t = 0; t < resid.rows(); ++t) {
    const double quad = resid.row(t) * inv * resid.row(t).transpose();
    ll += -0.5 * m * std::log(2.0 * M_PI) - 0.5 * logdet - 0.5 * quad;
  }
  return ll;
}

// Whole-dataset classification log-likelihood for a given hard assignment,
// fitting each cluster by the naive pipeline. Returns -inf when any cluster
// fit is degenerate.
inline double naive_assignment_loglik(const std::vector<kmle::RegressorBlock>& blocks,
                                      const std::vector<int>& labels, int k) {
  double total = 0.0;
  for (int c = 0; c < k; ++c) {
    std::vector<std::size_t> items;
    for (std::size_t n = 0; n < labels.size(); ++n)
      if (labels[n] == c) items.push_back(n);
    if (items.empty()) continue;
    const Eigen::MatrixXd a = naive_fit_var(blocks, items);
    const Eigen::MatrixXd sigma = naive_fit_sigma(blocks, items, a);
    if (!(sigma.determinant() > 0)) return -std::numeric_limits<double>::infinity();
    for (std::size_t n : items) total += naive_loglik(blocks[n], a, sigma);
  }
  return total;
}

// ---- reference Lloyd iteration (classic k-means) ----

struct LloydState {
  std::vector<Eigen::VectorXd> centers;
  std::vector<int> labels;
};

inline std::vector<int> lloyd_assign(const std::vector<Eigen::VectorXd>& points,
                                     const std::vector<Eigen::VectorXd>& centers) {
  std::vector<int> labels(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = (points[i] - centers[0]).squaredNorm();
    for (std::size_t c = 1; c < centers.size(); ++c) {
      const double d = (points[i] - centers[c]).squaredNorm();
      if (d < best) {
        best = d;
        labels[i] = static_cast<int>(c);
      }
    }
  }
  return labels;
}

inline bool lloyd_update(const std::vector<Eigen::VectorXd>& points, LloydState& st) {
  const std::size_t k = st.centers.size();
  std::vector<Eigen::VectorXd> sums(k, Eigen::VectorXd::Zero(points[0].size()));
  std::vector<int> counts(k, 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    sums[static_cast<std::size_t>(st.labels[i])] += points[i];
    ++counts[static_cast<std::size_t>(st.labels[i])];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) return false;  // caller must pick tie-free instances
    st.centers[c] = sums[c] / counts[c];
  }
  return true;
}

// ---- misc ----

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::vector<int> random_labels(int n, int k, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> d(0, k - 1);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int& v : labels) v = d(rng);
  return labels;
}

// Small random stable-VAR dataset for solver stress tests.
inline kmle::synth::SynthData random_var_dataset(int m, int p, int k, int n_per_cluster, int t_len,
                                                 std::uint64_t seed) {
  kmle::synth::GenSpec spec;
  spec.m = m;
  spec.p = p;
  spec.k = k;
  spec.n_per_cluster = n_per_cluster;
  spec.t = t_len;
  spec.seed = seed;
  return kmle::synth::gen_dataset(spec);
}

}  // namespace testsupport
