#ifndef HHR_HURDLE_HPP
#define HHR_HURDLE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hhr/design.hpp"
#include "hhr/fit.hpp"
#include "hhr/panel.hpp"

namespace hhr {

/// The assembled three-stage model: country incidence (Bernoulli), cell
/// incidence (Bernoulli), cell intensity (zero-truncated Poisson), plus
/// the calibrated prediction hurdles once set.
struct HurdleModel {
  FittedStage stage1;
  FittedStage stage2;
  FittedStage stage3;
  StageDesign design1;
  StageDesign design2;
  StageDesign design3;

  std::optional<double> tau1;
  std::optional<double> tau2;

  int lag_s = 0;
  CovariateSpec spec;
  std::pair<int, int> train_months{0, 0};
  std::string spec_hash;  // hash of the spec file the model was fit from
  std::uint64_t seed = 0;
};

/// Per-row stage predictions for a test panel, aligned with the panel's
/// row order; pi1 is computed once per country-month and broadcast.
struct StagePredictions {
  std::vector<int32_t> cell_id;
  std::vector<int32_t> country_id;
  std::vector<int32_t> month;
  Eigen::VectorXd pi1;
  Eigen::VectorXd pi2;
  Eigen::VectorXd lambda3;
  Eigen::VectorXd y_true;  // observed sb_fatalities (NaN-free; 0 if unknown)
};

/// Fit all three stages on a lagged training panel: stage 1 on one row
/// per country-month (incidence target), stage 2 on cell rows within
/// positive country-months, stage 3 on positive cells. Thresholds stay
/// unset. Throws when a stage's subsample is empty, naming the stage.
HurdleModel fit_hurdle(const Panel& train, const CovariateSpec& spec, int lag_s,
                       const FitOptions& options = {});

/// The three-case joint probability of (Y = y, Ytilde = y_tilde) given
/// the stage quantities; zero on the inconsistent pair (0, y > 0).
double joint_probability(double pi1, double pi2, double lambda, double y, int y_tilde);

/// Joint probability evaluated at one row of a lagged panel.
double joint_probability(const HurdleModel& model, const Panel& panel, size_t row, double y,
                         int y_tilde);

/// Marginal mean pi1 * pi2 * lambda / (1 - exp(-lambda)).
double marginal_mean(double pi1, double pi2, double lambda);
Eigen::VectorXd marginal_mean(const HurdleModel& model, const StagePredictions& preds);

/// Stage-wise predictions on a lagged test panel (consistent lag
/// required). Deterministic; errors from range or country violations
/// propagate from the design evaluation.
StagePredictions predict_stages(const HurdleModel& model, const Panel& test);

/// Versioned JSON model file; loading a different version or a truncated
/// file throws. Round trips are exact: a loaded model predicts
/// bit-identically.
void save_model(const HurdleModel& model, const std::filesystem::path& path);
HurdleModel load_model(const std::filesystem::path& path);

}  // namespace hhr

#endif
