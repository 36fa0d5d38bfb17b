#ifndef HHR_EVALUATE_HPP
#define HHR_EVALUATE_HPP

#include <Eigen/Dense>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "hhr/calibrate.hpp"
#include "hhr/hurdle.hpp"
#include "hhr/panel.hpp"

namespace hhr {

struct TaddaConfig {
  double epsilon = 0.048;
};

/// Elementwise log1p(y_t) - log1p(y_{t-s}); throws on length mismatch or
/// negative counts.
Eigen::VectorXd delta_transform(const Eigen::VectorXd& y_t, const Eigen::VectorXd& y_tminus_s);

/// Mean over months of the per-month mean squared error. Scale-agnostic:
/// it scores whatever vectors it is given (the evaluation harness feeds
/// log1p-scale values and says so in its report header).
double mse_score(const std::vector<Eigen::VectorXd>& yhat_by_t,
                 const std::vector<Eigen::VectorXd>& y_by_t);

/// Absolute delta error plus a sign-mismatch penalty |dhat| gated by
/// |dhat - d| > epsilon, averaged within and then across months. Signs
/// live in {-1, 0, +1}; equal signs (including 0 vs 0) carry no penalty.
double tadda_score(const std::vector<Eigen::VectorXd>& dhat_by_t,
                   const std::vector<Eigen::VectorXd>& d_by_t, const TaddaConfig& config = {});

/// One (t, s) evaluation record: calibrated hurdles, stage predictions at
/// the test month, thresholded predictions, and the delta targets.
struct PairRecord {
  int t = 0;
  int s = 0;
  bool skipped = false;
  std::string skip_reason;
  Hurdles hurdles;
  StagePredictions preds;
  Eigen::VectorXd yhat;        // fatality scale after thresholding
  Eigen::VectorXd y_true;      // observed y_t (all zero for true forecasts)
  Eigen::VectorXd y_base;      // observed y_{t-s}
  Eigen::VectorXd delta_hat;   // log1p(yhat) - log1p(y_base)
  Eigen::VectorXd delta_true;  // log1p(y_true) - log1p(y_base)
  bool has_truth = true;
};

struct ScorePair {
  double mse = 0.0;
  double tadda = 0.0;
  int months = 0;
};

struct EvaluationRun {
  std::vector<int> eval_months;
  std::vector<int> steps;
  std::vector<PairRecord> records;
  std::map<int, ScorePair> scores_by_step;
  long leakage_rows_checked = 0;
  TaddaConfig tadda;
};

struct RunOptions {
  DEConfig de;
  TaddaConfig tadda;
  FitOptions fit;
  int parallel = 1;
  std::ostream* log = nullptr;
};

/// Aggregate MSE (log1p scale) and TADDA per step from non-skipped
/// records; skipped pairs never contribute.
std::map<int, ScorePair> aggregate_scores(const std::vector<PairRecord>& records,
                                          const TaddaConfig& config);

/// One full inner iteration of the expanding-window procedure: truncate
/// to months <= t, lag by s, split, pre-fit, calibrate the hurdles on the
/// t-s month, refit on the training range, predict and threshold at t.
/// Infeasible pairs come back with skipped = true.
PairRecord evaluate_pair(const Panel& raw, const CovariateSpec& spec, int t, int s,
                         const RunOptions& options);

/// Expanding-window evaluation over all (t, s) pairs, with the no-leakage
/// assertion instrumented over every consumed row.
EvaluationRun run_evaluation(const Panel& raw, const CovariateSpec& spec,
                             const std::vector<int>& eval_months, const std::vector<int>& steps,
                             const RunOptions& options);

/// True forecasts: for each step s, fit on everything up to the last
/// observed month T0, calibrate on T0, and predict month T0 + s from the
/// T0 covariates. Steps outside 2..7 are rejected.
EvaluationRun run_forecast(const Panel& raw, const CovariateSpec& spec,
                           const std::vector<int>& steps, const RunOptions& options);

/// CSV and manifest emitters (UTF-8, deterministic field formatting).
void write_predictions_csv(const PairRecord& record, const std::filesystem::path& path);
void write_scores_csv(const EvaluationRun& run, const std::filesystem::path& path);
std::string render_score_report(const EvaluationRun& run);

}  // namespace hhr

#endif
