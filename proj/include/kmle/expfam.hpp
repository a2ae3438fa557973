#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "kmle/errors.hpp"

namespace kmle::expfam {

inline constexpr double kLog2Pi = 1.8378770664093454836;

// Each family exposes the natural parameterisation: log_density(x, theta),
// the mean map mu(theta) (gradient of the log-partition), its inverse link,
// the matched Bregman divergence d(x, mu), and the parameter-free remainder
// log b(x) of the decomposition  ln p(x; theta) = -d(x, mu(theta)) + ln b(x).

// Gaussian with known isotropic variance. Natural parameter theta = mu/sigma2.
class SphericalGaussian {
 public:
  SphericalGaussian(int dim, double sigma2) : dim_(dim), sigma2_(sigma2) {
    if (dim < 1) fail(errc::invalid_argument, "dimension must be positive");
    if (!(sigma2 > 0)) fail(errc::invalid_argument, "variance must be positive");
  }

  int dim() const { return dim_; }
  double sigma2() const { return sigma2_; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    check_dim(x);
    check_dim(theta);
    const Eigen::VectorXd mu = sigma2_ * theta;
    return -0.5 * dim_ * std::log(2.0 * std::numbers::pi * sigma2_) - (x - mu).squaredNorm() / (2.0 * sigma2_);
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return sigma2_ * theta;
  }

  Eigen::VectorXd natural_from_mean(const Eigen::VectorXd& mu) const {
    check_dim(mu);
    return mu / sigma2_;
  }

  double bregman(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) const {
    check_dim(x);
    check_dim(mu);
    return (x - mu).squaredNorm() / (2.0 * sigma2_);
  }

  double log_bfactor(const Eigen::VectorXd& x) const {
    check_dim(x);
    return -0.5 * dim_ * std::log(2.0 * std::numbers::pi * sigma2_);
  }

  double log_partition(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return 0.5 * sigma2_ * theta.squaredNorm();
  }

 private:
  void check_dim(const Eigen::VectorXd& v) const {
    if (v.size() != dim_) fail(errc::length_mismatch, "vector does not match family dimension");
  }

  int dim_;
  double sigma2_;
};

// Gaussian with known per-coordinate variances.
class DiagonalGaussian {
 public:
  explicit DiagonalGaussian(Eigen::VectorXd sigma2) : sigma2_(std::move(sigma2)) {
    if (sigma2_.size() < 1) fail(errc::invalid_argument, "dimension must be positive");
    if ((sigma2_.array() <= 0).any()) fail(errc::invalid_argument, "variances must be positive");
  }

  int dim() const { return static_cast<int>(sigma2_.size()); }
  const Eigen::VectorXd& sigma2() const { return sigma2_; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    check_dim(x);
    check_dim(theta);
    const Eigen::ArrayXd mu = sigma2_.array() * theta.array();
    const Eigen::ArrayXd d = x.array() - mu;
    return -0.5 * ((2.0 * std::numbers::pi * sigma2_.array()).log().sum() + (d * d / sigma2_.array()).sum());
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return (sigma2_.array() * theta.array()).matrix();
  }

  Eigen::VectorXd natural_from_mean(const Eigen::VectorXd& mu) const {
    check_dim(mu);
    return (mu.array() / sigma2_.array()).matrix();
  }

  double bregman(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) const {
    check_dim(x);
    check_dim(mu);
    const Eigen::ArrayXd d = x.array() - mu.array();
    return 0.5 * (d * d / sigma2_.array()).sum();
  }

  double log_bfactor(const Eigen::VectorXd& x) const {
    check_dim(x);
    return -0.5 * (2.0 * std::numbers::pi * sigma2_.array()).log().sum();
  }

  double log_partition(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return 0.5 * (sigma2_.array() * theta.array().square()).sum();
  }

 private:
  void check_dim(const Eigen::VectorXd& v) const {
    if (v.size() != sigma2_.size()) fail(errc::length_mismatch, "vector does not match family dimension");
  }

  Eigen::VectorXd sigma2_;
};

// Product of independent Poisson counts. Natural parameter theta_i = ln(rate_i).
class Poisson {
 public:
  explicit Poisson(int dim = 1) : dim_(dim) {
    if (dim < 1) fail(errc::invalid_argument, "dimension must be positive");
  }

  int dim() const { return dim_; }

  double log_density(const Eigen::VectorXd& x, const Eigen::VectorXd& theta) const {
    check_support(x);
    check_dim(theta);
    double s = 0.0;
    for (int i = 0; i < dim_; ++i)
      s += x[i] * theta[i] - std::exp(theta[i]) - std::lgamma(x[i] + 1.0);
    return s;
  }

  Eigen::VectorXd mean(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return theta.array().exp().matrix();
  }

  Eigen::VectorXd natural_from_mean(const Eigen::VectorXd& mu) const {
    check_dim(mu);
    if ((mu.array() <= 0).any())
      fail(errc::boundary_mle, "Poisson mean on the boundary of the parameter domain");
    return mu.array().log().matrix();
  }

  double bregman(const Eigen::VectorXd& x, const Eigen::VectorXd& mu) const {
    check_support(x);
    check_dim(mu);
    if ((mu.array() <= 0).any()) fail(errc::out_of_support, "Poisson mean must be positive");
    double s = 0.0;
    for (int i = 0; i < dim_; ++i) {
      const double xi = x[i];
      s += (xi > 0 ? xi * std::log(xi / mu[i]) : 0.0) - xi + mu[i];
    }
    return s;
  }

  double log_bfactor(const Eigen::VectorXd& x) const {
    check_support(x);
    double s = 0.0;
    for (int i = 0; i < dim_; ++i)
      if (x[i] > 0) s += x[i] * std::log(x[i]) - x[i] - std::lgamma(x[i] + 1.0);
    return s;
  }

  double log_partition(const Eigen::VectorXd& theta) const {
    check_dim(theta);
    return theta.array().exp().sum();
  }

 private:
  void check_dim(const Eigen::VectorXd& v) const {
    if (v.size() != dim_) fail(errc::length_mismatch, "vector does not match family dimension");
  }

  void check_support(const Eigen::VectorXd& x) const {
    check_dim(x);
    for (int i = 0; i < dim_; ++i)
      if (x[i] < 0 || x[i] != std::floor(x[i]))
        fail(errc::out_of_support, "Poisson support is the nonnegative integers");
  }

  int dim_;
};

template <class Fam>
double log_density(const Fam& fam, const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
  return fam.log_density(x, theta);
}

template <class Fam>
double bregman_divergence(const Fam& fam, const Eigen::VectorXd& x, const Eigen::VectorXd& mu) {
  return fam.bregman(x, mu);
}

// |ln p(x; theta) - (-d(x, mu(theta)) + ln b(x))|; zero up to rounding for a
// correctly matched family.
template <class Fam>
double decomposition_residual(const Fam& fam, const Eigen::VectorXd& x, const Eigen::VectorXd& theta) {
  return std::abs(fam.log_density(x, theta) - (-fam.bregman(x, fam.mean(theta)) + fam.log_bfactor(x)));
}

// MLE via the score identity: the fitted mean is the sample mean; the natural
// parameter is recovered through the family's inverse link.
template <class Fam>
Eigen::VectorXd fit_mle(const Fam& fam, std::span<const Eigen::VectorXd> items) {
  if (items.empty()) fail(errc::empty_input, "cannot fit a family to zero items");
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(items.front().size());
  for (const auto& x : items) mean += x;
  mean /= static_cast<double>(items.size());
  return fam.natural_from_mean(mean);
}

// Adapter exposing a fixed set of vectors as a solver-compatible family with
// the natural parameter as the cluster parameter.
template <class Fam>
class ExpFamilyModel {
 public:
  using Params = Eigen::VectorXd;

  ExpFamilyModel(Fam fam, std::vector<Eigen::VectorXd> items) : fam_(std::move(fam)), items_(std::move(items)) {
    if (items_.empty()) fail(errc::empty_input, "no items");
    for (const auto& x : items_)
      if (x.size() != fam_.dim()) fail(errc::mixed_dims, "item dimension does not match family");
  }

  std::size_t size() const { return items_.size(); }
  const std::vector<Eigen::VectorXd>& items() const { return items_; }
  const Fam& family() const { return fam_; }

  double log_density(std::size_t i, const Params& theta) const { return fam_.log_density(items_[i], theta); }

  Params fit_mle(std::span<const std::size_t> idx) const {
    if (idx.empty()) fail(errc::empty_input, "cannot fit a cluster with zero items");
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(items_.front().size());
    for (std::size_t i : idx) mean += items_[i];
    mean /= static_cast<double>(idx.size());
    return fam_.natural_from_mean(mean);
  }

  double params_distance(const Params& a, const Params& b) const { return (a - b).norm(); }

 private:
  Fam fam_;
  std::vector<Eigen::VectorXd> items_;
};

}  // namespace kmle::expfam
