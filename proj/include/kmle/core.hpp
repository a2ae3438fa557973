#pragma once

#include <Eigen/Dense>

#include <string>
#include <utility>
#include <vector>

#include "kmle/errors.hpp"

namespace kmle {

// A collection of N multivariate time series, each stored as an m x T matrix
// whose column t holds the measurement Y_t. All series share m and T.
// Immutable after validation; safe for shared concurrent reads.
struct Dataset {
  std::vector<Eigen::MatrixXd> series;
  std::vector<std::string> ids;  // optional, parallel to series
  int m = 0;
  int t_len = 0;

  int n() const { return static_cast<int>(series.size()); }
};

inline Dataset validate_dataset(std::vector<Eigen::MatrixXd> raw, std::vector<std::string> ids = {}) {
  if (raw.empty()) fail(errc::empty_input, "dataset has no series");
  const auto m = raw.front().rows();
  const auto t = raw.front().cols();
  if (m < 1) fail(errc::invalid_argument, "series must have at least one row");
  if (t < 2) fail(errc::invalid_argument, "series must have at least two time points");
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].rows() != m || raw[i].cols() != t)
      fail(errc::mixed_dims, "series " + std::to_string(i) + " has shape " + std::to_string(raw[i].rows()) +
                                 "x" + std::to_string(raw[i].cols()) + ", expected " + std::to_string(m) + "x" +
                                 std::to_string(t));
    if (!raw[i].allFinite()) fail(errc::non_finite, "series " + std::to_string(i) + " contains NaN or Inf");
  }
  if (!ids.empty() && ids.size() != raw.size())
    fail(errc::length_mismatch, "ids do not match number of series");
  Dataset ds;
  ds.series = std::move(raw);
  ds.ids = std::move(ids);
  ds.m = static_cast<int>(m);
  ds.t_len = static_cast<int>(t);
  return ds;
}

// Hard cluster assignment: labels[n] in 0..k-1, exactly one cluster per item.
struct Assignment {
  std::vector<int> labels;
  int k = 0;

  int n() const { return static_cast<int>(labels.size()); }

  bool operator==(const Assignment& other) const = default;
};

inline Assignment make_assignment(std::vector<int> labels, int k) {
  if (k < 1) fail(errc::invalid_argument, "cluster count must be positive");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= k)
      fail(errc::invalid_argument, "label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                                       " outside 0.." + std::to_string(k - 1));
  return Assignment{std::move(labels), k};
}

// Binary membership matrix: row n has a single 1 in column labels[n].
inline Eigen::MatrixXd assignment_to_membership(const Assignment& a) {
  Eigen::MatrixXd tau = Eigen::MatrixXd::Zero(a.n(), a.k);
  for (int i = 0; i < a.n(); ++i) tau(i, a.labels[i]) = 1.0;
  return tau;
}

inline Assignment assignment_from_membership(const Eigen::MatrixXd& tau) {
  std::vector<int> labels(static_cast<std::size_t>(tau.rows()), -1);
  for (Eigen::Index i = 0; i < tau.rows(); ++i) {
    int hits = 0;
    for (Eigen::Index j = 0; j < tau.cols(); ++j) {
      const double v = tau(i, j);
      if (v == 1.0) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(j);
        ++hits;
      } else if (v != 0.0) {
        fail(errc::invalid_argument, "membership entries must be 0 or 1");
      }
    }
    if (hits != 1) fail(errc::invalid_argument, "membership rows must sum to one");
  }
  return make_assignment(std::move(labels), static_cast<int>(tau.cols()));
}

// Stacked regression view of one series at block order p. Row i corresponds
// to time t = p+1+i (1-based): x row = [1, Y_{t-1}', ..., Y_{t-p}'],
// y row = Y_t'.
struct RegressorBlock {
  Eigen::MatrixXd x;  // (T-p) x (1+m*p)
  Eigen::MatrixXd y;  // (T-p) x m
  int p = 0;

  int rows() const { return static_cast<int>(y.rows()); }
};

inline RegressorBlock build_regressors(const Eigen::MatrixXd& series, int p) {
  const int m = static_cast<int>(series.rows());
  const int t = static_cast<int>(series.cols());
  if (p < 1) fail(errc::invalid_argument, "block order must be at least 1");
  if (p > t - 2)
    fail(errc::order_too_large,
         "order " + std::to_string(p) + " too large for length " + std::to_string(t));
  const int rows = t - p;
  RegressorBlock blk;
  blk.p = p;
  blk.x.resize(rows, 1 + m * p);
  blk.y.resize(rows, m);
  for (int i = 0; i < rows; ++i) {
    blk.x(i, 0) = 1.0;
    for (int lag = 1; lag <= p; ++lag)
      blk.x.block(i, 1 + m * (lag - 1), 1, m) = series.col(p + i - lag).transpose();
    blk.y.row(i) = series.col(p + i).transpose();
  }
  return blk;
}

}  // namespace kmle
