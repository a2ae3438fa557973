#include <catch_amalgamated.hpp>

#include <random>
#include <set>
#include <vector>

#include "kmle/engine.hpp"
#include "kmle/expfam.hpp"
#include "kmle/metrics.hpp"
#include "support.hpp"

using Catch::Matchers::WithinAbs;
namespace ef = kmle::expfam;

namespace {

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

using GaussModel = ef::ExpFamilyModel<ef::SphericalGaussian>;

GaussModel blob_model(const std::vector<Eigen::VectorXd>& points) {
  return GaussModel(ef::SphericalGaussian(2, 1.0), points);
}

}  // namespace

TEST_CASE("tau_step takes the row-wise argmax with lowest-index ties") {
  Eigen::MatrixXd ll(2, 2);
  ll << -1, -2, -3, -0.5;
  CHECK(kmle::tau_step(ll).labels == std::vector<int>{0, 1});

  Eigen::MatrixXd tie(1, 2);
  tie << -1, -1;
  CHECK(kmle::tau_step(tie).labels == std::vector<int>{0});

  Eigen::MatrixXd single(3, 1);
  single << -4, -2, -9;
  CHECK(kmle::tau_step(single).labels == std::vector<int>{0, 0, 0});

  Eigen::MatrixXd bad(1, 2);
  bad << 0.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_MATCHES(kmle::tau_step(bad), kmle::Error,
                       Catch::Matchers::Predicate<kmle::Error>(
                           [](const kmle::Error& e) { return e.code() == kmle::errc::non_finite; }));
}

TEST_CASE("theta_step fits per-cluster MLEs") {
  const std::vector<Eigen::VectorXd> pts{vec2(0, 0), vec2(2, 2), vec2(10, 10)};
  const auto model = blob_model(pts);
  const kmle::Assignment asg = kmle::make_assignment({0, 0, 1}, 2);
  const auto params = kmle::theta_step(model, asg);
  CHECK_THAT((model.family().mean(params[0]) - vec2(1, 1)).norm(), WithinAbs(0.0, 1e-14));
  CHECK_THAT((model.family().mean(params[1]) - vec2(10, 10)).norm(), WithinAbs(0.0, 1e-14));
}

TEST_CASE("theta_step re-seeds an empty cluster from the worst-fit item") {
  const std::vector<Eigen::VectorXd> pts{vec2(0, 0), vec2(1, 0), vec2(40, 40)};
  const auto model = blob_model(pts);
  // Everything assigned to cluster 0; cluster 1 has no members.
  const kmle::Assignment asg = kmle::make_assignment({0, 0, 0}, 2);
  const std::vector<Eigen::VectorXd> current{vec2(0, 0), vec2(1, 1)};

  SECTION("rescue enabled") {
    const auto params = kmle::theta_step(model, asg, {}, &current);
    // Cluster 0 keeps its pooled fit; the empty cluster takes the outlier.
    CHECK_THAT((model.family().mean(params[1]) - vec2(40, 40)).norm(), WithinAbs(0.0, 1e-12));
  }
  SECTION("strict mode") {
    kmle::KmleOptions opts;
    opts.rescue_empty = false;
    CHECK_THROWS_MATCHES(kmle::theta_step(model, asg, opts, &current), kmle::Error,
                         Catch::Matchers::Predicate<kmle::Error>([](const kmle::Error& e) {
                           return e.code() == kmle::errc::degenerate_cluster;
                         }));
  }
}

TEST_CASE("single-cluster run terminates after one full iteration") {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> pts;
  for (int i = 0; i < 15; ++i) pts.push_back(vec2(gauss(rng), gauss(rng)));
  const auto model = blob_model(pts);
  const auto res = kmle::run_kmle(model, {model.family().natural_from_mean(pts[0])});
  CHECK(res.iters == 1);
  CHECK(res.stop_reason == kmle::StopReason::LabelFixedPoint);
  CHECK(res.certificate.tau_stable);
  CHECK(res.certificate.theta_stable);
}

TEST_CASE("well-separated blobs are recovered exactly") {
  std::mt19937_64 rng(17);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<Eigen::VectorXd> pts;
  std::vector<int> truth;
  for (int i = 0; i < 20; ++i) {
    pts.push_back(vec2(-10 + gauss(rng), -10 + gauss(rng)));
    truth.push_back(0);
  }
  for (int i = 0; i < 20; ++i) {
    pts.push_back(vec2(10 + gauss(rng), 10 + gauss(rng)));
    truth.push_back(1);
  }

  // Independent check that the instance is separable: every point is nearest
  // its own blob center.
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double d0 = (pts[i] - vec2(-10, -10)).norm();
    const double d1 = (pts[i] - vec2(10, 10)).norm();
    CHECK((truth[i] == 0 ? d0 < d1 : d1 < d0));
  }

  const auto model = blob_model(pts);
  const std::vector<Eigen::VectorXd> init{model.family().natural_from_mean(pts[3]),
                                          model.family().natural_from_mean(pts[25])};
  const auto res = kmle::run_kmle(model, init);
  CHECK_THAT(kmle::metrics::ari(res.assignment.labels, truth), WithinAbs(1.0, 1e-15));
  CHECK(res.certificate.tau_stable);
  CHECK(res.certificate.theta_stable);
}

TEST_CASE("no label vector repeats before termination and the trace ascends") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> unit(-3.0, 3.0);
  for (int rep = 0; rep < 10; ++rep) {
    std::vector<Eigen::VectorXd> pts;
    for (int i = 0; i < 30; ++i) pts.push_back(vec2(unit(rng), unit(rng)));
    const auto model = blob_model(pts);
    std::vector<Eigen::VectorXd> init;
    for (int c = 0; c < 3; ++c) init.push_back(model.family().natural_from_mean(pts[static_cast<std::size_t>(c)]));

    std::set<std::vector<int>> seen;
    bool repeated = false;
    kmle::KmleOptions opts;
    opts.observer = [&](int, const kmle::Assignment& a, double) {
      if (!seen.insert(a.labels).second) repeated = true;
    };
    const auto res = kmle::run_kmle(model, init, opts);
    CHECK_FALSE(repeated);
    CHECK(static_cast<int>(seen.size()) == res.iters);
    for (std::size_t i = 1; i < res.trace.size(); ++i)
      CHECK(res.trace[i] >= res.trace[i - 1] - 1e-9 * std::max(1.0, std::abs(res.trace[i - 1])));
    CHECK(res.stop_reason != kmle::StopReason::MaxIters);
  }
}

TEST_CASE("one extra iteration is a no-op at the fixed point") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> unit(-4.0, 4.0);
  std::vector<Eigen::VectorXd> pts;
  for (int i = 0; i < 24; ++i) pts.push_back(vec2(unit(rng), unit(rng)));
  const auto model = blob_model(pts);
  std::vector<Eigen::VectorXd> init{model.family().natural_from_mean(pts[0]),
                                    model.family().natural_from_mean(pts[1])};
  const auto res = kmle::run_kmle(model, init);
  REQUIRE(res.stop_reason != kmle::StopReason::MaxIters);

  const auto ll = kmle::loglik_matrix(model, res.params, 0);
  const auto relabeled = kmle::tau_step(ll);
  CHECK(relabeled.labels == res.assignment.labels);
  const auto refit = kmle::theta_step(model, relabeled, {}, &res.params);
  for (std::size_t c = 0; c < refit.size(); ++c)
    CHECK(model.params_distance(refit[c], res.params[c]) <= 1e-6);
}

TEST_CASE("certificate reports instability of truncated runs") {
  // One point sits between two centers in a way that needs two iterations;
  // capping at one leaves the label step unstable.
  const std::vector<Eigen::VectorXd> pts{vec2(0, 0), vec2(2.6, 0), vec2(4, 0)};
  const auto model = blob_model(pts);
  const std::vector<Eigen::VectorXd> init{model.family().natural_from_mean(vec2(0, 0)),
                                          model.family().natural_from_mean(vec2(8, 0))};
  kmle::KmleOptions opts;
  opts.stop.max_iters = 1;
  const auto res = kmle::run_kmle(model, init, opts);
  CHECK(res.stop_reason == kmle::StopReason::MaxIters);
  CHECK_FALSE(res.certificate.tau_stable);
}

TEST_CASE("a hand-built fixed point certifies as a partial maximum") {
  const std::vector<Eigen::VectorXd> pts{vec2(0, 0), vec2(0.5, 0.5), vec2(1, 0),
                                         vec2(7, 7), vec2(8, 6),     vec2(7.5, 7.5)};
  const auto model = blob_model(pts);

  // Run the two coordinate steps to exhaustion by hand.
  std::vector<Eigen::VectorXd> params{model.family().natural_from_mean(pts[0]),
                                      model.family().natural_from_mean(pts[5])};
  kmle::Assignment labels;
  for (int iter = 0; iter < 50; ++iter) {
    const auto next = kmle::tau_step(kmle::loglik_matrix(model, params, 0));
    if (iter > 0 && next == labels) break;
    labels = next;
    params = kmle::theta_step(model, labels, {}, &params);
  }

  kmle::FitResult<Eigen::VectorXd> res;
  res.assignment = labels;
  res.params = params;
  const auto cert = kmle::check_partial_maximum(model, res, 1e-9);
  CHECK(cert.tau_stable);
  CHECK(cert.theta_stable);
}
