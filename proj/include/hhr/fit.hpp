#ifndef HHR_FIT_HPP
#define HHR_FIT_HPP

#include <Eigen/Dense>
#include <iosfwd>
#include <vector>

#include "hhr/design.hpp"
#include "hhr/family.hpp"

namespace hhr {

struct FitOptions {
  int max_iter = 100;
  double grad_tol = 1e-8;  // relative to the starting gradient norm

  // Smoothing-parameter search: per-term GCV over a log10 grid with
  // coordinate-wise sweeps. Deterministic; ties keep the first grid point.
  bool select_lambda = true;
  double lambda_log10_lo = -4.0;
  double lambda_log10_hi = 6.0;
  int lambda_grid_points = 21;
  int lambda_sweeps = 2;

  /// Fixed smoothing parameters (one per penalized term, in layout
  /// order); used instead of the grid search when select_lambda is false.
  std::vector<double> fixed_lambdas;

  /// Structured per-iteration trace lines, when set.
  std::ostream* trace = nullptr;
};

struct IterationRecord {
  int iteration = 0;
  double penalized_deviance = 0.0;
  double gradient_norm = 0.0;
};

struct ConvergenceReport {
  bool converged = false;
  int iterations = 0;
  double final_gradient_norm = 0.0;
  double gradient_scale = 1.0;
  double penalized_deviance = 0.0;
  double deviance = 0.0;
  bool separation_warning = false;
  std::vector<IterationRecord> trace;
};

/// One fitted stage: coefficients over the assembled design, selected
/// smoothing parameters, observed-information standard errors, and the
/// convergence report.
struct FittedStage {
  Family family = Family::bernoulli();
  Eigen::VectorXd coefficients;
  Eigen::VectorXd std_errors;
  std::vector<TermLayout> layout;
  std::vector<double> smoothing;  // one entry per penalized layout block
  double edf = 0.0;
  double gcv = 0.0;
  ConvergenceReport report;

  int penalized_term_count() const;
};

/// Maximizes sum_i w_i * loglik_i(beta) - 0.5 * sum_k lambda_k *
/// beta_k' S_k beta_k by penalized Newton with step halving (plain IRLS
/// when nothing is penalized). Throws on non-convergence of the final
/// fit; candidate fits during the lambda sweep that fail to converge are
/// skipped instead.
FittedStage fit_stage(const DesignMatrix& design, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& weights, Family family,
                      const FitOptions& options = {});

/// Linear predictor for new design rows.
Eigen::VectorXd predict_eta(const FittedStage& stage, const Eigen::MatrixXd& design);

}  // namespace hhr

#endif
