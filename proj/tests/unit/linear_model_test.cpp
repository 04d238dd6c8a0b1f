#include "doctest.h"

#include "carforest/linear_model.hpp"
#include "fixtures.hpp"

#include <random>

using namespace carforest;

namespace {

ArealDataset design(const Matrix& x, const Vector& y) {
  std::vector<std::string> ids, names;
  Coordinates c = Coordinates::Zero(x.rows(), 2);
  for (Index i = 0; i < x.rows(); ++i) {
    ids.push_back("r" + std::to_string(i));
    c(i, 0) = static_cast<double>(i);
  }
  for (Index j = 0; j < x.cols(); ++j) names.push_back("x" + std::to_string(j + 1));
  return ArealDataset(ids, c, x, y, names, TargetScale::log);
}

}  // namespace

TEST_SUITE("linear_model") {

TEST_CASE("exact linear relation") {
  Matrix x(6, 1);
  x << -2, -1, 0, 1, 2, 5;
  const Vector y = 2.0 * x.col(0);
  const auto fit = fit_lm(design(x, y));
  CHECK(std::abs(fit.beta(0) - 2.0) < 1e-10);
  CHECK(std::abs(fit.beta0) < 1e-10);
  CHECK(fit.sigma2 < 1e-10);
  const auto p = predict_lm(fit, design(x, y));
  CHECK((p.upper - p.lower).maxCoeff() < 1e-4);
}

TEST_CASE("intercept only gives the sample mean") {
  Vector y(4);
  y << 1, 2, 6, 7;
  const auto fit = fit_lm(design(Matrix(4, 0), y));
  CHECK(fit.beta0 == doctest::Approx(4.0));
  CHECK(fit.sigma2 == doctest::Approx(6.5));
}

TEST_CASE("coefficients match the normal equations") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto ds = fixtures::random_areal(50, 3, 50, seed);
    const auto fit = fit_lm(ds);
    Matrix a(50, 4);
    a.col(0).setOnes();
    a.rightCols(3) = ds.features();
    const Vector b = (a.transpose() * a).ldlt().solve(a.transpose() * ds.target());
    CHECK(std::abs(fit.beta0 - b(0)) < 1e-8);
    CHECK((fit.beta - b.tail(3)).cwiseAbs().maxCoeff() < 1e-8);
    const double rss = (ds.target() - a * b).squaredNorm();
    CHECK(fit.sigma2 == doctest::Approx(rss / 50.0).epsilon(1e-10));
    const Matrix cov = fit.sigma2 * (a.transpose() * a).inverse();
    CHECK(fit.covariance.isApprox(cov, 1e-8));
  }
}

TEST_CASE("rank deficient designs name the dependent columns") {
  auto ds = fixtures::random_areal(30, 3, 30, 2);
  Matrix x = ds.features();
  x.col(2) = x.col(0) - 2.0 * x.col(1);
  try {
    fit_lm(ds.with_features(x, ds.feature_names()));
    FAIL("expected an error");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("x1, x2, x3") != std::string::npos);
  }
  CHECK_THROWS_AS(fit_lm(fixtures::random_areal(30, 3, 4, 2)), ValidationError);
}

TEST_CASE("predictions") {
  const auto ds = fixtures::random_areal(40, 2, 40, 7);
  const auto fit = fit_lm(ds);
  const auto zero = design(Matrix::Zero(1, 2), Vector::Constant(1, kMissing));
  const auto p = predict_lm(fit, zero);
  CHECK(p.point(0) == doctest::Approx(fit.beta0));
  const double sd = std::sqrt(fit.sigma2 + fit.covariance(0, 0));
  CHECK(p.upper(0) - p.point(0) == doctest::Approx(kZ975 * sd));
  CHECK(p.scale == TargetScale::log);
  CHECK(lm_fit_from_json(to_json(fit)).beta.isApprox(fit.beta));
  CHECK_THROWS_AS(predict_lm(fit, fixtures::random_areal(5, 3, 0, 1)), ValidationError);
}

TEST_CASE("coverage on linear Gaussian data") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> z(0.0, 1.0);
  auto gen = [&](Index n) {
    Matrix x(n, 2);
    Vector y(n);
    for (Index i = 0; i < n; ++i) {
      x(i, 0) = z(rng);
      x(i, 1) = z(rng);
      y(i) = 1.0 + 0.5 * x(i, 0) - x(i, 1) + 0.7 * z(rng);
    }
    return design(x, y);
  };
  const auto train = gen(300), test = gen(2000);
  const auto p = predict_lm(fit_lm(train), test);
  const double cover = ((test.target().array() >= p.lower.array()) && (test.target().array() <= p.upper.array()))
                           .cast<double>()
                           .mean();
  CHECK(std::abs(cover - 0.95) < 0.03);
}

}
