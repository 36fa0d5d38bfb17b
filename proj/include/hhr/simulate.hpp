#ifndef HHR_SIMULATE_HPP
#define HHR_SIMULATE_HPP

#include <cstdint>
#include <map>
#include <string>

#include "hhr/covariate_spec.hpp"
#include "hhr/panel.hpp"

namespace hhr {

/// True linear predictor for one stage: intercept plus named linear
/// effects on the transformed covariate scale. Names may reference raw
/// covariate columns (population, unrest, ...) or the derived lag
/// features (sb_last, cm_since_sb, ...).
struct StageTruth {
  double intercept = 0.0;
  std::map<std::string, double> coef;
};

struct SimConfig {
  int n_countries = 5;
  int cells_per_country = 20;
  int n_months = 60;
  std::uint64_t seed = 1;

  /// Months between covariate measurement and the response they drive.
  int dgp_lag = 2;

  StageTruth stage1;  // country incidence, logit scale
  StageTruth stage2;  // cell incidence, logit scale
  StageTruth stage3;  // cell intensity, log scale

  /// Transform lookup for raw covariates entering the truth (defaults to
  /// the built-in spec's transforms; unknown names fall back to identity).
  CovariateSpec transform_spec = default_covariate_spec();

  /// AR(1) dynamics of the cell-level unrest series.
  double unrest_rho = 0.8;
  double unrest_sd = 1.0;
};

/// A reasonable default truth: moderate incidence rates, arms-import and
/// remoteness effects, and last-month feedback in all stages.
SimConfig default_sim_config();

/// Samples a panel exactly from the three-stage hurdle model: per country
/// and month draw the incidence gate, then per cell a Bernoulli gate and
/// a zero-truncated Poisson count (zeros rejected). A country-month whose
/// gate fired but whose cells all came up empty is resampled, keeping the
/// draw inside the support of the joint model. Bit-reproducible for a
/// fixed seed.
Panel simulate_panel(const SimConfig& config);

/// The true stage probabilities the simulator used, for oracle tests:
/// evaluates the truth's linear predictor on a lagged row.
double truth_eta(const SimConfig& config, const StageTruth& truth, const Panel& lagged,
                 const PanelObservation& row);

}  // namespace hhr

#endif
