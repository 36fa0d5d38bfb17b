#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "hhr/family.hpp"

using namespace hhr;

TEST_CASE("bernoulli log-likelihood") {
  CHECK(loglik_bernoulli(1.0, 0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  CHECK(loglik_bernoulli(0.0, 0.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-14));
  // No overflow and essentially exact at large eta.
  CHECK(std::abs(loglik_bernoulli(1.0, 30.0)) < 1e-12);
  CHECK(std::isfinite(loglik_bernoulli(0.0, 800.0)));
  CHECK(std::isfinite(loglik_bernoulli(1.0, -800.0)));
}

TEST_CASE("zero-truncated Poisson density") {
  SUBCASE("normalizes over the support") {
    for (double lambda : {0.1, 1.0, 5.0, 20.0}) {
      double total = 0.0;
      for (int y = 1; y <= 200; ++y) total += std::exp(ztpoisson_logpdf(y, lambda));
      CHECK(total == doctest::Approx(1.0).epsilon(1e-10));
    }
  }
  SUBCASE("matches the closed form at lambda = 1, y = 1") {
    const double expected = -1.0 - std::log(1.0 - std::exp(-1.0));
    CHECK(ztpoisson_logpdf(1.0, 1.0) == doctest::Approx(expected).epsilon(1e-14));
  }
  SUBCASE("rejects y = 0") {
    CHECK_THROWS_AS(ztpoisson_logpdf(0.0, 2.0), std::domain_error);
  }
  SUBCASE("stable for tiny lambda") {
    CHECK(std::isfinite(ztpoisson_logpdf(1.0, 1e-12)));
    CHECK(std::exp(ztpoisson_logpdf(1.0, 1e-12)) == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("zero-truncated Poisson mean") {
  SUBCASE("limits") {
    CHECK(ztpoisson_mean(1e-9) == doctest::Approx(1.0).epsilon(1e-8));
    CHECK_THROWS_AS(ztpoisson_mean(0.0), std::domain_error);
    CHECK_THROWS_AS(ztpoisson_mean(-1.0), std::domain_error);
  }
  SUBCASE("agrees with the brute-force expectation") {
    for (double lambda : {1.0, 20.0}) {
      double mean = 0.0;
      for (int y = 1; y <= 200; ++y) mean += y * std::exp(ztpoisson_logpdf(y, lambda));
      CHECK(ztpoisson_mean(lambda) == doctest::Approx(mean).epsilon(1e-7));
    }
    CHECK(ztpoisson_mean(1.0) == doctest::Approx(1.5819767).epsilon(1e-6));
  }
  SUBCASE("inverse solves back") {
    for (double lambda : {0.5, 1.0, 3.0, 12.0}) {
      const double mean = ztpoisson_mean(lambda);
      CHECK(ztpoisson_lambda_from_mean(mean) == doctest::Approx(lambda).epsilon(1e-9));
    }
  }
}

TEST_CASE("family derivatives match finite differences") {
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> eta_draw(-3.0, 3.0);
  const double h = 1e-6;
  for (const Family fam : {Family::bernoulli(), Family::ztpoisson()}) {
    for (int rep = 0; rep < 50; ++rep) {
      const double eta = eta_draw(rng);
      const double y = fam.kind() == Family::Kind::BernoulliLogit
                           ? static_cast<double>(rep % 2)
                           : static_cast<double>(1 + rep % 5);
      const double fd_score = (fam.loglik(y, eta + h) - fam.loglik(y, eta - h)) / (2.0 * h);
      const double fd_hess =
          -(fam.loglik(y, eta + h) - 2.0 * fam.loglik(y, eta) + fam.loglik(y, eta - h)) / (h * h);
      CHECK(fam.score(y, eta) == doctest::Approx(fd_score).epsilon(1e-5));
      CHECK(fam.neg_hessian(y, eta) == doctest::Approx(fd_hess).epsilon(1e-3));
    }
  }
}

TEST_CASE("saturated log-likelihood is an upper bound") {
  const Family fam = Family::ztpoisson();
  for (double y : {1.0, 2.0, 7.0}) {
    const double sat = fam.saturated_loglik(y);
    for (double eta : {-1.0, 0.0, 0.5, 2.0, 3.0})
      CHECK(fam.loglik(y, eta) <= sat + 1e-12);
  }
  CHECK(Family::bernoulli().saturated_loglik(1.0) == 0.0);
}
