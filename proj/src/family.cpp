#include "hhr/family.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace hhr {

namespace {

// log(1 - exp(-x)) for x > 0, stable at both ends (Maechler's log1mexp).
double log1mexp(double x) {
  if (x <= 0.0) throw std::domain_error("log1mexp requires x > 0");
  if (x <= 0.6931471805599453) return std::log(-std::expm1(-x));
  return std::log1p(-std::exp(-x));
}

}  // namespace

double loglik_bernoulli(double y, double eta) {
  // y*eta - log(1+e^eta); split on the sign of eta so the exponential
  // argument is never positive.
  if (eta > 0.0) return (y - 1.0) * eta - std::log1p(std::exp(-eta));
  return y * eta - std::log1p(std::exp(eta));
}

double inverse_logit(double eta) {
  if (eta > 0.0) return 1.0 / (1.0 + std::exp(-eta));
  const double e = std::exp(eta);
  return e / (1.0 + e);
}

double ztpoisson_logpdf(double y, double lambda) {
  if (y < 1.0) throw std::domain_error("ztpoisson_logpdf: y is outside the zero-truncated support (y >= 1)");
  if (!(lambda > 0.0)) throw std::domain_error("ztpoisson_logpdf: lambda must be positive");
  return y * std::log(lambda) - lambda - std::lgamma(y + 1.0) - log1mexp(lambda);
}

double ztpoisson_mean(double lambda) {
  if (!(lambda > 0.0)) throw std::domain_error("ztpoisson_mean: lambda must be positive");
  if (lambda < 1e-6) {
    // lambda/(1-e^-lambda) = 1 + lambda/2 + lambda^2/12 + O(lambda^4)
    return 1.0 + 0.5 * lambda + lambda * lambda / 12.0;
  }
  return lambda / -std::expm1(-lambda);
}

double ztpoisson_lambda_from_mean(double mean) {
  if (mean < 1.0) throw std::domain_error("ztpoisson_lambda_from_mean: mean below 1 is unattainable");
  if (mean == 1.0) return 0.0;
  // Newton on g(l) = mean(l) - target; g'(l) = mean(l)*(1 - mean(l)*e^-l)/l.
  double l = mean;
  for (int it = 0; it < 100; ++it) {
    const double mu = ztpoisson_mean(l);
    const double slope = mu * (1.0 - mu * std::exp(-l)) / l;
    const double step = (mu - mean) / slope;
    l -= step;
    if (l <= 0.0) l = 1e-12;
    if (std::abs(step) < 1e-13 * (1.0 + l)) break;
  }
  return l;
}

std::string Family::name() const {
  return kind_ == Kind::BernoulliLogit ? "bernoulli-logit" : "ztpoisson-log";
}

double Family::mean(double eta) const {
  if (kind_ == Kind::BernoulliLogit) return inverse_logit(eta);
  return ztpoisson_mean(std::exp(eta));
}

double Family::loglik(double y, double eta) const {
  if (kind_ == Kind::BernoulliLogit) return loglik_bernoulli(y, eta);
  return ztpoisson_logpdf(y, std::exp(eta));
}

double Family::score(double y, double eta) const {
  return y - mean(eta);
}

double Family::neg_hessian(double /*y*/, double eta) const {
  if (kind_ == Kind::BernoulliLogit) {
    const double p = inverse_logit(eta);
    return p * (1.0 - p);
  }
  const double lambda = std::exp(eta);
  const double mu = ztpoisson_mean(lambda);
  // Var(Y) = mu * (1 + lambda - mu) for the zero-truncated Poisson.
  const double v = mu * (1.0 + lambda - mu);
  return v > 0.0 ? v : 0.0;
}

double Family::saturated_loglik(double y) const {
  if (kind_ == Kind::BernoulliLogit) return 0.0;
  if (y <= 1.0) return 0.0;  // point mass at 1 as lambda -> 0
  return ztpoisson_logpdf(y, ztpoisson_lambda_from_mean(y));
}

}  // namespace hhr
