#ifndef HHR_FAMILY_HPP
#define HHR_FAMILY_HPP

#include <string>

namespace hhr {

/// Log-likelihood of a Bernoulli observation under the logit link,
/// y*eta - log(1 + exp(eta)), computed without overflow for large |eta|.
double loglik_bernoulli(double y, double eta);

/// Inverse logit, exp(eta) / (1 + exp(eta)).
double inverse_logit(double eta);

/// Log-density of a zero-truncated Poisson at y >= 1 with untruncated
/// mean lambda > 0:  y*log(lambda) - lambda - log(y!) - log(1 - exp(-lambda)).
/// Throws std::domain_error for y = 0 (outside the truncated support).
double ztpoisson_logpdf(double y, double lambda);

/// Mean of the zero-truncated Poisson, lambda / (1 - exp(-lambda)).
/// Approaches 1 as lambda -> 0+; a series expansion is used below 1e-6.
/// Throws std::domain_error for lambda <= 0.
double ztpoisson_mean(double lambda);

/// Untruncated mean lambda solving ztpoisson_mean(lambda) = mean for
/// mean > 1; returns 0 for mean == 1 (the degenerate point mass at 1).
double ztpoisson_lambda_from_mean(double mean);

/// One GLM response family on the linear-predictor scale. Both families
/// are in canonical form, so the negative second derivative of the
/// log-likelihood w.r.t. eta equals the conditional variance and is
/// nonnegative everywhere.
class Family {
 public:
  enum class Kind { BernoulliLogit, ZtPoissonLog };

  explicit Family(Kind kind) : kind_(kind) {}

  Kind kind() const { return kind_; }
  std::string name() const;

  /// Mean response at linear predictor eta.
  double mean(double eta) const;

  /// Per-observation log-likelihood.
  double loglik(double y, double eta) const;

  /// d loglik / d eta = y - mean(eta) for both families.
  double score(double y, double eta) const;

  /// -d2 loglik / d eta2 (the IRLS working weight), >= 0.
  double neg_hessian(double y, double eta) const;

  /// Log-likelihood of the saturated model for observation y (the
  /// maximum attainable contribution), used for deviance.
  double saturated_loglik(double y) const;

  static Family bernoulli() { return Family(Kind::BernoulliLogit); }
  static Family ztpoisson() { return Family(Kind::ZtPoissonLog); }

 private:
  Kind kind_;
};

}  // namespace hhr

#endif
