#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include <Eigen/Eigenvalues>

#include "rnnc/covariance.hpp"

using namespace rnnc;

TEST_CASE("kernel at zero distance is the marginal variance") {
  Vector s(2);
  s << 0.3, -1.2;
  auto p = iso_params(4.0, 10.0);
  REQUIRE(kernel(s, s, p) == 4.0);
}

TEST_CASE("kernel is symmetric in its arguments") {
  Vector a(2), b(2);
  a << 0, 0;
  b << 3, 4;
  auto p = iso_params(2.5, 0.7);
  REQUIRE(kernel(a, b, p) == kernel(b, a, p));
}

TEST_CASE("isotropic kernel matches its closed form") {
  Vector a(2), b(2);
  a << 0, 0;
  b << 0.1, 0;  // distance 0.1
  auto p = iso_params(4.0, 10.0);
  REQUIRE_THAT(kernel(a, b, p),
               Catch::Matchers::WithinRel(4.0 * std::exp(-1.0), 1e-14));
}

TEST_CASE("anisotropic kernel sums per-axis absolute lags") {
  Vector a(2), b(2);
  a << 1.0, 2.0;
  b << 1.5, 0.5;
  CovarianceParams p;
  p.sigma2 = 3.0;
  p.decay = Vector(2);
  p.decay << 2.0, 4.0;
  REQUIRE_THAT(kernel(a, b, p),
               Catch::Matchers::WithinRel(3.0 * std::exp(-(2.0 * 0.5 + 4.0 * 1.5)),
                                          1e-14));
}

TEST_CASE("kernel depends only on coordinate lags") {
  std::mt19937 gen(11);
  std::uniform_real_distribution<double> unif(-2, 2);
  auto p = iso_params(1.7, 3.0);
  for (int rep = 0; rep < 20; ++rep) {
    Vector a(2), b(2), shift(2);
    a << unif(gen), unif(gen);
    b << unif(gen), unif(gen);
    shift << unif(gen), unif(gen);
    REQUIRE_THAT(kernel(a, b, p),
                 Catch::Matchers::WithinRel(
                     kernel(Vector(a + shift), Vector(b + shift), p), 1e-12));
  }
}

TEST_CASE("kernel strictly decreases in each axis lag") {
  Vector a = Vector::Zero(2);
  CovarianceParams p;
  p.sigma2 = 1.0;
  p.decay = Vector(2);
  p.decay << 1.0, 5.0;
  double prev = p.sigma2;
  for (double lag = 0.1; lag < 2.0; lag += 0.1) {
    Vector b(2);
    b << lag, 0;
    const double v = kernel(a, b, p);
    REQUIRE(v < prev);
    prev = v;
  }
  prev = p.sigma2;
  for (double lag = 0.1; lag < 2.0; lag += 0.1) {
    Vector b(2);
    b << 0, lag;
    const double v = kernel(a, b, p);
    REQUIRE(v < prev);
    prev = v;
  }
}

TEST_CASE("kernel rejects invalid parameters") {
  Vector a = Vector::Zero(2), b = Vector::Ones(2);
  REQUIRE_THROWS_AS(kernel(a, b, iso_params(0.0, 1.0)), validation_error);
  REQUIRE_THROWS_AS(kernel(a, b, iso_params(1.0, 0.0)), validation_error);
  Vector c = Vector::Zero(3);
  REQUIRE_THROWS_AS(kernel(a, c, iso_params(1.0, 1.0)), validation_error);
  CovarianceParams bad;
  bad.decay = Vector::Ones(3);  // neither scalar nor the point dimension
  REQUIRE_THROWS_AS(kernel(a, b, bad), validation_error);
}

TEST_CASE("covariance blocks evaluate the kernel entrywise") {
  Matrix ca(2, 2), cb(3, 2);
  ca << 0, 0, 1, 1;
  cb << 0.5, 0, 0, 0.5, 2, 2;
  auto A = make_location_set(ca);
  auto B = make_location_set(cb);
  auto p = iso_params(2.0, 1.5);
  Matrix block = cov_block(A, B, p);
  REQUIRE(block.rows() == 2);
  REQUIRE(block.cols() == 3);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      Vector si = ca.row(i).transpose(), sj = cb.row(j).transpose();
      REQUIRE(block(i, j) == kernel(si, sj, p));
    }
}

TEST_CASE("square blocks are symmetric with sigma2 on the diagonal") {
  Matrix coords(1, 2);
  coords << 0.2, 0.9;
  auto one = make_location_set(coords);
  auto p = iso_params(3.7, 2.0);
  Matrix single = cov_block(one, one, p);
  REQUIRE(single.rows() == 1);
  REQUIRE(single(0, 0) == 3.7);

  std::mt19937 gen(4);
  std::uniform_real_distribution<double> unif(0, 1);
  Matrix c(6, 2);
  for (int i = 0; i < 6; ++i) {
    c(i, 0) = unif(gen);
    c(i, 1) = unif(gen);
  }
  auto locs = make_location_set(c);
  Matrix block = cov_block(locs, locs, p);
  REQUIRE(block == block.transpose().eval());
  for (int i = 0; i < 6; ++i) REQUIRE(block(i, i) == 3.7);
}

TEST_CASE("square blocks on distinct points are positive definite") {
  Matrix coords(3, 2);
  coords << 0, 0, 0.3, 0.1, 0.8, 0.9;
  auto locs = make_location_set(coords);
  auto p = iso_params(4.0, 10.0);
  Matrix block = cov_block(locs, locs, p);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(block);
  REQUIRE(eig.eigenvalues().minCoeff() > 0.0);

  std::mt19937 gen(29);
  std::uniform_real_distribution<double> unif(0, 1);
  for (int rep = 0; rep < 10; ++rep) {
    const int n = 3 + rep;  // up to 12 points
    Matrix c(n, 2);
    for (int i = 0; i < n; ++i) {
      c(i, 0) = unif(gen);
      c(i, 1) = unif(gen);
    }
    auto set = make_location_set(c);
    Matrix b = cov_block(set, set, p);
    Eigen::SelfAdjointEigenSolver<Matrix> e(b);
    REQUIRE(e.eigenvalues().minCoeff() > -1e-10 * p.sigma2);
  }
}
