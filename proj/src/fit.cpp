#include "hhr/fit.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace hhr {

namespace {

struct Problem {
  const DesignMatrix& design;
  const Eigen::VectorXd& y;
  const Eigen::VectorXd& w;
  Family family;
  double saturated = 0.0;  // sum_i w_i * loglik_sat(y_i)

  std::vector<int> penalized;  // indices into design.layout

  Problem(const DesignMatrix& d, const Eigen::VectorXd& yy, const Eigen::VectorXd& ww, Family fam)
      : design(d), y(yy), w(ww), family(fam) {
    for (int k = 0; k < static_cast<int>(d.layout.size()); ++k)
      if (d.layout[k].penalized) penalized.push_back(k);
    for (Eigen::Index i = 0; i < y.size(); ++i) saturated += w[i] * family.saturated_loglik(y[i]);
  }

  double loglik(const Eigen::VectorXd& eta) const {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) ll += w[i] * family.loglik(y[i], eta[i]);
    return ll;
  }

  double penalty(const Eigen::VectorXd& beta, const std::vector<double>& lambdas) const {
    double pen = 0.0;
    for (size_t j = 0; j < penalized.size(); ++j) {
      const TermLayout& lay = design.layout[static_cast<size_t>(penalized[j])];
      const auto b = beta.segment(lay.start, lay.size);
      pen += lambdas[j] * b.dot(lay.penalty * b);
    }
    return 0.5 * pen;
  }
};

struct NewtonResult {
  Eigen::VectorXd beta;
  Eigen::MatrixXd hessian;  // penalized, at the optimum
  ConvergenceReport report;
};

Eigen::VectorXd initial_beta(const Problem& p) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p.design.cols());
  const double wsum = p.w.sum();
  const double ybar = p.y.dot(p.w) / wsum;
  if (p.family.kind() == Family::Kind::BernoulliLogit) {
    const double pbar = std::clamp(ybar, 1e-3, 1.0 - 1e-3);
    beta[0] = std::log(pbar / (1.0 - pbar));
  } else {
    const double lam = std::max(ztpoisson_lambda_from_mean(std::max(ybar, 1.0 + 1e-9)), 1e-3);
    beta[0] = std::log(lam);
  }
  return beta;
}

NewtonResult newton_fit(const Problem& p, const std::vector<double>& lambdas,
                        const Eigen::VectorXd& start, const FitOptions& opt) {
  const Eigen::Index n = p.y.size();
  const int ncol = p.design.cols();
  NewtonResult res;
  res.beta = start;

  Eigen::VectorXd eta = p.design.X * res.beta;
  double objective = -p.loglik(eta) + p.penalty(res.beta, lambdas);  // to minimize

  Eigen::VectorXd score(n), hw(n);
  double grad_scale = 1.0;
  for (int iter = 1; iter <= opt.max_iter; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) {
      score[i] = p.w[i] * p.family.score(p.y[i], eta[i]);
      hw[i] = p.w[i] * p.family.neg_hessian(p.y[i], eta[i]);
    }
    Eigen::VectorXd grad = p.design.X.transpose() * score;
    for (size_t j = 0; j < p.penalized.size(); ++j) {
      const TermLayout& lay = p.design.layout[static_cast<size_t>(p.penalized[j])];
      grad.segment(lay.start, lay.size) -=
          lambdas[j] * (lay.penalty * res.beta.segment(lay.start, lay.size));
    }
    const double gnorm = grad.lpNorm<Eigen::Infinity>();
    if (iter == 1) grad_scale = std::max(1.0, gnorm);

    const double pdev = 2.0 * (p.saturated + objective);  // penalized deviance
    res.report.trace.push_back({iter, pdev, gnorm});
    if (opt.trace)
      (*opt.trace) << "fit-trace family=" << p.family.name() << " iter=" << iter
                   << " deviance=" << pdev << " grad=" << gnorm << "\n";

    if (gnorm <= opt.grad_tol * grad_scale) {
      res.report.converged = true;
      res.report.iterations = iter;
      res.report.final_gradient_norm = gnorm;
      res.report.gradient_scale = grad_scale;
      break;
    }

    Eigen::MatrixXd H = p.design.X.transpose() * hw.asDiagonal() * p.design.X;
    for (size_t j = 0; j < p.penalized.size(); ++j) {
      const TermLayout& lay = p.design.layout[static_cast<size_t>(p.penalized[j])];
      H.block(lay.start, lay.start, lay.size, lay.size) += lambdas[j] * lay.penalty;
    }
    res.hessian = H;
    const Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
    if (ldlt.info() != Eigen::Success) return res;  // indefinite system, give up
    const Eigen::VectorXd step = ldlt.solve(grad);

    // Step halving: the penalized objective must not increase.
    double scale = 1.0;
    bool accepted = false;
    for (int h = 0; h < 40; ++h) {
      const Eigen::VectorXd cand = res.beta + scale * step;
      const Eigen::VectorXd eta_cand = p.design.X * cand;
      const double obj_cand = -p.loglik(eta_cand) + p.penalty(cand, lambdas);
      if (std::isfinite(obj_cand) && obj_cand <= objective + 1e-12 * std::abs(objective)) {
        res.beta = cand;
        eta = eta_cand;
        objective = obj_cand;
        accepted = true;
        break;
      }
      scale *= 0.5;
    }
    res.report.iterations = iter;
    res.report.final_gradient_norm = gnorm;
    res.report.gradient_scale = grad_scale;
    if (!accepted) {
      // No descent direction left; treat the current point as the answer
      // if the gradient is small on an absolute scale.
      res.report.converged = gnorm <= 1e-4 * grad_scale;
      break;
    }
  }

  // Hessian at the final beta (for standard errors and GCV).
  for (Eigen::Index i = 0; i < n; ++i) hw[i] = p.w[i] * p.family.neg_hessian(p.y[i], eta[i]);
  Eigen::MatrixXd H = p.design.X.transpose() * hw.asDiagonal() * p.design.X;
  for (size_t j = 0; j < p.penalized.size(); ++j) {
    const TermLayout& lay = p.design.layout[static_cast<size_t>(p.penalized[j])];
    H.block(lay.start, lay.start, lay.size, lay.size) += lambdas[j] * lay.penalty;
  }
  res.hessian = H;

  res.report.deviance = 2.0 * (p.saturated - p.loglik(eta));
  res.report.penalized_deviance = 2.0 * (p.saturated + objective);
  if (p.family.kind() == Family::Kind::BernoulliLogit) {
    Eigen::Index extreme = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (std::abs(eta[i]) > 30.0) ++extreme;
    res.report.separation_warning = extreme > n / 100;
  }
  return res;
}

double effective_dof(const Problem& p, const NewtonResult& fit, const std::vector<double>& lambdas) {
  // edf = tr(H^-1 X'WX) with W from the converged weights.
  const Eigen::Index n = p.y.size();
  Eigen::VectorXd eta = p.design.X * fit.beta;
  Eigen::VectorXd hw(n);
  for (Eigen::Index i = 0; i < n; ++i) hw[i] = p.w[i] * p.family.neg_hessian(p.y[i], eta[i]);
  Eigen::MatrixXd XtWX = p.design.X.transpose() * hw.asDiagonal() * p.design.X;
  Eigen::MatrixXd H = XtWX;
  for (size_t j = 0; j < p.penalized.size(); ++j) {
    const TermLayout& lay = p.design.layout[static_cast<size_t>(p.penalized[j])];
    H.block(lay.start, lay.start, lay.size, lay.size) += lambdas[j] * lay.penalty;
  }
  return H.ldlt().solve(XtWX).trace();
}

double gcv_score(const Problem& p, const NewtonResult& fit, double edf) {
  const double n = static_cast<double>(p.y.size());
  const double denom = n - edf;
  if (denom <= 0.0) return std::numeric_limits<double>::infinity();
  return n * fit.report.deviance / (denom * denom);
}

}  // namespace

int FittedStage::penalized_term_count() const {
  int k = 0;
  for (const auto& lay : layout)
    if (lay.penalized) ++k;
  return k;
}

FittedStage fit_stage(const DesignMatrix& design, const Eigen::VectorXd& y,
                      const Eigen::VectorXd& weights, Family family, const FitOptions& options) {
  if (design.X.rows() != y.size() || y.size() != weights.size())
    throw std::invalid_argument("fit_stage: design, response, and weights disagree in length");
  if (y.size() == 0) throw std::invalid_argument("fit_stage: empty sample");
  if ((weights.array() <= 0.0).any())
    throw std::invalid_argument("fit_stage: weights must be positive");
  if (family.kind() == Family::Kind::ZtPoissonLog && (y.array() < 1.0).any())
    throw std::invalid_argument("fit_stage: zero-truncated response must be >= 1");

  Problem prob(design, y, weights, family);
  const int npen = static_cast<int>(prob.penalized.size());

  std::vector<double> lambdas(npen, 1.0);
  if (!options.select_lambda) {
    if (static_cast<int>(options.fixed_lambdas.size()) != npen)
      throw std::invalid_argument("fit_stage: fixed_lambdas must have one entry per penalized term");
    lambdas = options.fixed_lambdas;
  }

  Eigen::VectorXd warm = initial_beta(prob);

  if (options.select_lambda && npen > 0) {
    std::vector<double> grid(options.lambda_grid_points);
    for (int g = 0; g < options.lambda_grid_points; ++g) {
      const double frac = options.lambda_grid_points == 1
                              ? 0.0
                              : static_cast<double>(g) / (options.lambda_grid_points - 1);
      grid[g] = std::pow(10.0, options.lambda_log10_lo +
                                   frac * (options.lambda_log10_hi - options.lambda_log10_lo));
    }
    for (int sweep = 0; sweep < options.lambda_sweeps; ++sweep) {
      for (int j = 0; j < npen; ++j) {
        double best_gcv = std::numeric_limits<double>::infinity();
        double best_lambda = lambdas[j];
        for (double cand : grid) {
          std::vector<double> trial = lambdas;
          trial[j] = cand;
          const NewtonResult fit = newton_fit(prob, trial, warm, options);
          if (!fit.report.converged) continue;
          const double edf = effective_dof(prob, fit, trial);
          const double score = gcv_score(prob, fit, edf);
          if (score < best_gcv) {
            best_gcv = score;
            best_lambda = cand;
            warm = fit.beta;
          }
        }
        lambdas[j] = best_lambda;
      }
    }
  }

  NewtonResult fit = newton_fit(prob, lambdas, warm, options);
  if (!fit.report.converged) {
    std::ostringstream msg;
    msg << "fit_stage: no convergence after " << fit.report.iterations
        << " iterations (gradient " << fit.report.final_gradient_norm << ", scale "
        << fit.report.gradient_scale << "); trace:";
    for (const auto& rec : fit.report.trace)
      msg << "\n  iter " << rec.iteration << "  pdev " << rec.penalized_deviance << "  grad "
          << rec.gradient_norm;
    throw std::runtime_error(msg.str());
  }

  // Penalized deviance must be non-increasing over the iteration trace.
  for (size_t i = 1; i < fit.report.trace.size(); ++i) {
    const double prev = fit.report.trace[i - 1].penalized_deviance;
    const double cur = fit.report.trace[i].penalized_deviance;
    if (cur > prev + 1e-8 * std::max(1.0, std::abs(prev)))
      throw std::logic_error("fit_stage: penalized deviance increased between iterations");
  }

  FittedStage out;
  out.family = family;
  out.coefficients = fit.beta;
  out.layout = design.layout;
  out.smoothing = lambdas;
  out.report = fit.report;
  out.edf = effective_dof(prob, fit, lambdas);
  out.gcv = gcv_score(prob, fit, out.edf);

  const Eigen::MatrixXd cov = fit.hessian.ldlt().solve(
      Eigen::MatrixXd::Identity(design.cols(), design.cols()));
  out.std_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
  return out;
}

Eigen::VectorXd predict_eta(const FittedStage& stage, const Eigen::MatrixXd& design) {
  if (design.cols() != stage.coefficients.size())
    throw std::invalid_argument("predict_eta: design has " + std::to_string(design.cols()) +
                                " columns, model has " +
                                std::to_string(stage.coefficients.size()));
  return design * stage.coefficients;
}

}  // namespace hhr
