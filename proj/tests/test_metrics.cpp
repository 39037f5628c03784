#include "eqdiff/metrics.hpp"

#include <doctest.h>

#include "helpers.hpp"

using namespace eqdiff;

TEST_CASE("jsd: identity, symmetry, disjoint support, frozen value") {
  std::vector<double> p{0.75, 0.25}, q{0.25, 0.75};
  CHECK(jsd(p, p) == 0.0);
  CHECK(jsd(p, q) == doctest::Approx(jsd(q, p)).epsilon(1e-15));
  // high-precision oracle for this pair
  CHECK(jsd(p, q) == doctest::Approx(0.130812035941136959).epsilon(1e-14));
  std::vector<double> p3{0.6, 0.3, 0.1}, q3{0.2, 0.5, 0.3};
  CHECK(jsd(p3, q3) == doctest::Approx(0.091120798525467475).epsilon(1e-14));
  // disjoint support reaches the ln 2 bound, with 0*log(0) = 0
  std::vector<double> a{1.0, 0.0}, b{0.0, 1.0};
  CHECK(std::abs(jsd(a, b) - std::log(2.0)) < 1e-12);
  CHECK_THROWS_AS(jsd(p, p3), ShapeError);
}

TEST_CASE("mmd: zero on identical sets, brute-force small case") {
  auto cloud = [](double x, double y) { return PointCloud{{x, y, 0.0, 0.0}}; };
  BevConfig cfg{4, 50.0};
  std::vector<PointCloud> ref{cloud(-30, -30), cloud(30, 30)};
  CHECK(mmd(ref, ref, cfg) == 0.0);
  // candidate matches one reference exactly; the other reference's nearest
  // candidate differs in two cells -> squared L2 = 1 + 1 = 2
  std::vector<PointCloud> cand{cloud(-30, -30)};
  CHECK(mmd(ref, cand, cfg) == doctest::Approx((0.0 + 2.0) / 2.0).epsilon(1e-12));
  CHECK_THROWS_AS(mmd({}, cand, cfg), DataError);
}

TEST_CASE("occupancy histogram normalizes over the set") {
  BevConfig cfg{4, 50.0};
  std::vector<PointCloud> clouds{{{{10, 10, 0, 0}, {10, 10, 0, 0}}}, {{{-10, -10, 0, 0}}}};
  auto h = occupancy_histogram(clouds, cfg);
  double total = 0;
  for (double v : h) total += v;
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(occupancy_histogram({PointCloud{{100, 100, 0, 0}}}, cfg), DataError);
}

TEST_CASE("masked error: hand case and empty-mask rejection") {
  Tensor a = Tensor::from_data({1, 3, 2}, {0, 0, 1, 0, 4, 0});
  Tensor b = Tensor::from_data({1, 3, 2}, {1, 0, 3, 0, 1, 0});
  std::vector<bool> mask{true, true, false};
  MaskedError e = masked_error(a, b, mask, 0);
  CHECK(e.count == 2);
  CHECK(e.mae == doctest::Approx((1 + 2) / 2.0).epsilon(1e-12));
  CHECK(e.rmse == doctest::Approx(std::sqrt((1 + 4) / 2.0)).epsilon(1e-12));
  CHECK_THROWS_AS(masked_error(a, b, {false, false, false}, 0), DataError);
  CHECK_THROWS_AS(masked_error(a, b, mask, 5), ShapeError);
}

TEST_CASE("frechet: identity, mean offset, 1-D analytic case") {
  GaussianSummary a;
  a.mean = Eigen::VectorXd::Zero(3);
  a.cov = Eigen::MatrixXd::Identity(3, 3);
  CHECK(frechet_distance(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  // identical identity covariances: distance reduces to the squared mean gap
  GaussianSummary b = a;
  b.mean << 1.0, -2.0, 0.5;
  CHECK(frechet_distance(a, b) == doctest::Approx(1.0 + 4.0 + 0.25).epsilon(1e-9));
  // 1-D: (mu1-mu2)^2 + (sigma1-sigma2)^2
  GaussianSummary c, d;
  c.mean = Eigen::VectorXd::Constant(1, 1.0);
  c.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);
  d.mean = Eigen::VectorXd::Constant(1, 3.0);
  d.cov = Eigen::MatrixXd::Constant(1, 1, 9.0);
  CHECK(frechet_distance(c, d) == doctest::Approx(4.0 + 1.0).epsilon(1e-9));
  // asymmetric covariance input is refused
  GaussianSummary e = a;
  e.cov(0, 1) = 0.5;
  CHECK_THROWS_AS(frechet_distance(e, a), NumericError);
}

TEST_CASE("gaussian summary from feature rows") {
  std::vector<std::vector<double>> feats{{1, 2}, {3, 6}, {5, 10}};
  GaussianSummary g = gaussian_summary(feats);
  CHECK(g.mean(0) == doctest::Approx(3.0));
  CHECK(g.mean(1) == doctest::Approx(6.0));
  CHECK(g.cov(0, 0) == doctest::Approx(4.0));   // unbiased variance of {1,3,5}
  CHECK(g.cov(1, 1) == doctest::Approx(16.0));
  CHECK(g.cov(0, 1) == doctest::Approx(8.0));
  CHECK_THROWS_AS(gaussian_summary({{1, 2}}), DataError);
  CHECK_THROWS_AS(gaussian_summary({{1, 2}, {1}}), ShapeError);
}

TEST_CASE("metric report serializes config fields and skips absent metrics") {
  MetricReport r;
  r.jsd = 0.5;
  r.bev_bins = 64;
  r.bev_extent = 50.0;
  r.n_reference = 4;
  r.n_candidate = 8;
  auto j = r.to_json();
  CHECK(j.at("jsd").get<double>() == 0.5);
  CHECK(j.at("bev_bins").get<std::int64_t>() == 64);
  CHECK(!j.contains("frechet"));
}
