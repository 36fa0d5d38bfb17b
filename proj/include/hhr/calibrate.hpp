#ifndef HHR_CALIBRATE_HPP
#define HHR_CALIBRATE_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

#include "hhr/hurdle.hpp"

namespace hhr {

struct DEConfig {
  int population = 40;
  int generations = 200;
  double differential_weight = 0.8;  // F
  double crossover = 0.9;            // CR
  std::uint64_t seed = 0;
  int stall_generations = 30;  // stop when the best loss is unchanged this long
};

struct Hurdles {
  double tau1 = 0.0;
  double tau2 = 0.0;
  double achieved_loss = 0.0;
};

/// Thresholded sparse prediction: 0 where pi1 < tau1 or pi2 < tau2
/// (strictly; ties predict positive), otherwise lambda3.
Eigen::VectorXd apply_thresholds(const StagePredictions& preds, double tau1, double tau2);

/// |sum log(yhat + 1) - sum log(y + 1)|. Throws on negative entries.
double calibration_loss(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y);

/// DE/rand/1/bin over a box, with reflection at the bounds and greedy
/// selection. Deterministic under the config seed. The observer, when
/// set, sees every generation's population (used by the property tests).
using DEObserver = std::function<void(int generation, const std::vector<Eigen::VectorXd>& members,
                                      double best_loss)>;
Eigen::VectorXd differential_evolution(const std::function<double(const Eigen::VectorXd&)>& loss,
                                       const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                       const DEConfig& config, double* best_loss = nullptr,
                                       const DEObserver& observer = {});

/// Calibrates (tau1, tau2) in [0,1]^2 against the aggregate log-scale
/// loss on the calibration month. Throws on an empty calibration set.
Hurdles calibrate(const StagePredictions& preds, const Eigen::VectorXd& y_calibration,
                  const DEConfig& config);

}  // namespace hhr

#endif
