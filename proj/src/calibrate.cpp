#include "hhr/calibrate.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace hhr {

Eigen::VectorXd apply_thresholds(const StagePredictions& preds, double tau1, double tau2) {
  if (tau1 < 0.0 || tau1 > 1.0 || tau2 < 0.0 || tau2 > 1.0)
    throw std::invalid_argument("apply_thresholds: thresholds must lie in [0, 1]");
  Eigen::VectorXd yhat(preds.pi1.size());
  for (Eigen::Index i = 0; i < yhat.size(); ++i)
    yhat[i] = (preds.pi1[i] < tau1 || preds.pi2[i] < tau2) ? 0.0 : preds.lambda3[i];
  return yhat;
}

double calibration_loss(const Eigen::VectorXd& yhat, const Eigen::VectorXd& y) {
  if (yhat.size() != y.size())
    throw std::invalid_argument("calibration_loss: prediction and truth lengths differ");
  double pred_total = 0.0, true_total = 0.0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    if (yhat[i] < 0.0 || y[i] < 0.0)
      throw std::domain_error("calibration_loss: negative entries are not allowed");
    pred_total += std::log1p(yhat[i]);
    true_total += std::log1p(y[i]);
  }
  return std::abs(pred_total - true_total);
}

namespace {

double reflect_into(double v, double lo, double hi) {
  // Reflect at the violated bound; a second reflection can only happen
  // for steps larger than the box, where clamping is the sane fallback.
  if (v < lo) v = lo + (lo - v);
  if (v > hi) v = hi - (v - hi);
  if (v < lo || v > hi) v = std::min(std::max(v, lo), hi);
  return v;
}

}  // namespace

Eigen::VectorXd differential_evolution(const std::function<double(const Eigen::VectorXd&)>& loss,
                                       const Eigen::VectorXd& lower, const Eigen::VectorXd& upper,
                                       const DEConfig& config, double* best_loss_out,
                                       const DEObserver& observer) {
  const int dim = static_cast<int>(lower.size());
  if (upper.size() != lower.size())
    throw std::invalid_argument("differential_evolution: bound vectors differ in length");
  if (config.population < 4)
    throw std::invalid_argument("differential_evolution: population must be >= 4");

  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto rand_index = [&](int n) { return static_cast<int>(unif(rng) * n) % n; };

  std::vector<Eigen::VectorXd> pop(config.population);
  std::vector<double> fitness(config.population);
  for (int i = 0; i < config.population; ++i) {
    pop[i].resize(dim);
    for (int d = 0; d < dim; ++d) pop[i][d] = lower[d] + (upper[d] - lower[d]) * unif(rng);
    fitness[i] = loss(pop[i]);
  }
  int best = 0;
  for (int i = 1; i < config.population; ++i)
    if (fitness[i] < fitness[best]) best = i;

  int stall = 0;
  double best_so_far = fitness[best];
  if (observer) observer(0, pop, best_so_far);

  Eigen::VectorXd trial(dim);
  for (int gen = 1; gen <= config.generations && stall < config.stall_generations; ++gen) {
    for (int i = 0; i < config.population; ++i) {
      int a, b, c;
      do a = rand_index(config.population); while (a == i);
      do b = rand_index(config.population); while (b == i || b == a);
      do c = rand_index(config.population); while (c == i || c == b || c == a);

      const int forced = rand_index(dim);
      for (int d = 0; d < dim; ++d) {
        if (d == forced || unif(rng) < config.crossover) {
          const double v = pop[a][d] + config.differential_weight * (pop[b][d] - pop[c][d]);
          trial[d] = reflect_into(v, lower[d], upper[d]);
        } else {
          trial[d] = pop[i][d];
        }
      }
      const double f = loss(trial);
      if (f < fitness[i]) {
        pop[i] = trial;
        fitness[i] = f;
        if (f < fitness[best]) best = i;
      }
    }
    if (fitness[best] < best_so_far) {
      best_so_far = fitness[best];
      stall = 0;
    } else {
      ++stall;
    }
    if (observer) observer(gen, pop, best_so_far);
  }

  if (best_loss_out) *best_loss_out = fitness[best];
  return pop[best];
}

Hurdles calibrate(const StagePredictions& preds, const Eigen::VectorXd& y_calibration,
                  const DEConfig& config) {
  if (preds.pi1.size() == 0) throw std::runtime_error("calibrate: empty calibration set");
  if (preds.pi1.size() != y_calibration.size())
    throw std::invalid_argument("calibrate: predictions and truths are misaligned");

  const auto loss = [&](const Eigen::VectorXd& tau) {
    return calibration_loss(apply_thresholds(preds, tau[0], tau[1]), y_calibration);
  };
  double achieved = 0.0;
  const Eigen::VectorXd tau =
      differential_evolution(loss, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2), config,
                             &achieved);
  return Hurdles{tau[0], tau[1], achieved};
}

}  // namespace hhr
