#include "hhr/evaluate.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <future>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace hhr {

namespace {

int sign_of(double x) { return (x > 0.0) - (x < 0.0); }

std::string fmt(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

Eigen::VectorXd delta_transform(const Eigen::VectorXd& y_t, const Eigen::VectorXd& y_tminus_s) {
  if (y_t.size() != y_tminus_s.size())
    throw std::invalid_argument("delta_transform: vectors differ in length");
  Eigen::VectorXd d(y_t.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (y_t[i] < 0.0 || y_tminus_s[i] < 0.0)
      throw std::domain_error("delta_transform: counts must be nonnegative");
    d[i] = std::log1p(y_t[i]) - std::log1p(y_tminus_s[i]);
  }
  return d;
}

double mse_score(const std::vector<Eigen::VectorXd>& yhat_by_t,
                 const std::vector<Eigen::VectorXd>& y_by_t) {
  if (yhat_by_t.empty() || yhat_by_t.size() != y_by_t.size())
    throw std::invalid_argument("mse_score: empty or misaligned month lists");
  double total = 0.0;
  for (size_t t = 0; t < yhat_by_t.size(); ++t) {
    if (yhat_by_t[t].size() != y_by_t[t].size() || y_by_t[t].size() == 0)
      throw std::invalid_argument("mse_score: month " + std::to_string(t) +
                                  " is empty or misaligned");
    total += (yhat_by_t[t] - y_by_t[t]).squaredNorm() / static_cast<double>(y_by_t[t].size());
  }
  return total / static_cast<double>(yhat_by_t.size());
}

double tadda_score(const std::vector<Eigen::VectorXd>& dhat_by_t,
                   const std::vector<Eigen::VectorXd>& d_by_t, const TaddaConfig& config) {
  if (dhat_by_t.empty() || dhat_by_t.size() != d_by_t.size())
    throw std::invalid_argument("tadda_score: empty or misaligned month lists");
  double total = 0.0;
  for (size_t t = 0; t < dhat_by_t.size(); ++t) {
    const auto& dhat = dhat_by_t[t];
    const auto& d = d_by_t[t];
    if (dhat.size() != d.size() || d.size() == 0)
      throw std::invalid_argument("tadda_score: month " + std::to_string(t) +
                                  " is empty or misaligned");
    double month = 0.0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double err = std::abs(d[i] - dhat[i]);
      double penalty = 0.0;
      if (sign_of(dhat[i]) != sign_of(d[i]) && err > config.epsilon) penalty = std::abs(dhat[i]);
      month += err + penalty;
    }
    total += month / static_cast<double>(d.size());
  }
  return total / static_cast<double>(dhat_by_t.size());
}

std::map<int, ScorePair> aggregate_scores(const std::vector<PairRecord>& records,
                                          const TaddaConfig& config) {
  std::map<int, std::vector<const PairRecord*>> by_step;
  for (const auto& rec : records)
    if (!rec.skipped && rec.has_truth) by_step[rec.s].push_back(&rec);

  std::map<int, ScorePair> scores;
  for (const auto& [s, recs] : by_step) {
    std::vector<Eigen::VectorXd> yhat_log, y_log, dhat, dtrue;
    for (const PairRecord* rec : recs) {
      Eigen::VectorXd lh(rec->yhat.size()), lt(rec->yhat.size());
      for (Eigen::Index i = 0; i < rec->yhat.size(); ++i) {
        lh[i] = std::log1p(rec->yhat[i]);
        lt[i] = std::log1p(rec->y_true[i]);
      }
      yhat_log.push_back(std::move(lh));
      y_log.push_back(std::move(lt));
      dhat.push_back(rec->delta_hat);
      dtrue.push_back(rec->delta_true);
    }
    ScorePair sp;
    sp.mse = mse_score(yhat_log, y_log);
    sp.tadda = tadda_score(dhat, dtrue, config);
    sp.months = static_cast<int>(recs.size());
    scores[s] = sp;
  }
  return scores;
}

namespace {

// Deterministic per-(t, s) stream for the calibration optimizer.
std::uint64_t pair_seed(std::uint64_t base, int t, int s) {
  std::uint64_t x = base ^ (0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(t) * 0xbf58476d1ce4e5b9ULL +
                            static_cast<std::uint64_t>(s) * 0x94d049bb133111ebULL);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  return x;
}

Eigen::VectorXd counts_at_month(const Panel& raw, int month,
                                const std::vector<int32_t>& cell_order) {
  std::unordered_map<int32_t, double> by_cell;
  for (const auto& r : raw.rows)
    if (r.month == month) by_cell[r.cell_id] = static_cast<double>(r.sb_fatalities);
  Eigen::VectorXd y(static_cast<Eigen::Index>(cell_order.size()));
  for (size_t i = 0; i < cell_order.size(); ++i) {
    const auto it = by_cell.find(cell_order[i]);
    if (it == by_cell.end())
      throw std::runtime_error("no observation for cell " + std::to_string(cell_order[i]) +
                               " at month " + std::to_string(month));
    y[static_cast<Eigen::Index>(i)] = it->second;
  }
  return y;
}

// Every covariate consumed by a fit or prediction must originate at or
// before the cutoff month.
long assert_no_leakage(const Panel& panel, int cutoff_month) {
  long checked = 0;
  for (const auto& r : panel.rows) {
    const int origin = r.month - panel.covariate_lag;
    if (origin > cutoff_month)
      throw std::logic_error("leakage: row at month " + std::to_string(r.month) +
                             " carries covariates from month " + std::to_string(origin) +
                             " past the cutoff " + std::to_string(cutoff_month));
    ++checked;
  }
  return checked;
}

PairRecord run_pair_pipeline(const Panel& raw, const CovariateSpec& spec, int t, int s,
                             const RunOptions& options, bool synthetic_test,
                             long* leakage_rows) {
  PairRecord rec;
  rec.t = t;
  rec.s = s;
  rec.has_truth = !synthetic_test;

  Panel upto = raw;
  if (!synthetic_test) upto = raw.filter_months(raw.month_range().first, t);

  std::vector<std::string> warnings;
  const Panel lagged = lag_covariates(upto, s, spec, &warnings);
  if (lagged.rows.empty()) {
    rec.skipped = true;
    rec.skip_reason = warnings.empty() ? "lagged panel is empty" : warnings.front();
    return rec;
  }

  const PanelSplit split = split_periodisation(lagged, t, s);
  if (leakage_rows) {
    *leakage_rows += assert_no_leakage(split.pre_train, t - s);
    *leakage_rows += assert_no_leakage(split.train, t - s);
    *leakage_rows += assert_no_leakage(split.calibration, t - s);
    *leakage_rows += assert_no_leakage(split.test, t - s);
  }

  // Pre-estimation on the pre-training range, hurdle calibration on the
  // held-out month, re-estimation on the full training range.
  RunOptions opt = options;
  opt.de.seed = pair_seed(options.de.seed, t, s);

  const HurdleModel premodel = fit_hurdle(split.pre_train, spec, s, opt.fit);
  const StagePredictions calib_preds = predict_stages(premodel, split.calibration);
  Eigen::VectorXd y_calib(static_cast<Eigen::Index>(split.calibration.rows.size()));
  for (size_t i = 0; i < split.calibration.rows.size(); ++i)
    y_calib[static_cast<Eigen::Index>(i)] =
        static_cast<double>(split.calibration.rows[i].sb_fatalities);
  rec.hurdles = calibrate(calib_preds, y_calib, opt.de);

  HurdleModel model = fit_hurdle(split.train, spec, s, opt.fit);
  model.tau1 = rec.hurdles.tau1;
  model.tau2 = rec.hurdles.tau2;

  rec.preds = predict_stages(model, split.test);
  rec.yhat = apply_thresholds(rec.preds, rec.hurdles.tau1, rec.hurdles.tau2);
  rec.y_base = counts_at_month(raw, t - s, rec.preds.cell_id);
  if (rec.has_truth) {
    rec.y_true = rec.preds.y_true;
    rec.delta_true = delta_transform(rec.y_true, rec.y_base);
  } else {
    rec.y_true = Eigen::VectorXd::Zero(rec.yhat.size());
    rec.delta_true = Eigen::VectorXd::Zero(rec.yhat.size());
  }
  rec.delta_hat = delta_transform(rec.yhat, rec.y_base);
  return rec;
}

PairRecord guarded_pair(const Panel& raw, const CovariateSpec& spec, int t, int s,
                        const RunOptions& options, bool synthetic_test, long* leakage_rows) {
  try {
    return run_pair_pipeline(raw, spec, t, s, options, synthetic_test, leakage_rows);
  } catch (const std::runtime_error& e) {
    PairRecord rec;
    rec.t = t;
    rec.s = s;
    rec.skipped = true;
    rec.skip_reason = e.what();
    return rec;
  }
}

}  // namespace

PairRecord evaluate_pair(const Panel& raw, const CovariateSpec& spec, int t, int s,
                         const RunOptions& options) {
  long leakage = 0;
  return guarded_pair(raw, spec, t, s, options, /*synthetic_test=*/false, &leakage);
}

EvaluationRun run_evaluation(const Panel& raw, const CovariateSpec& spec,
                             const std::vector<int>& eval_months, const std::vector<int>& steps,
                             const RunOptions& options) {
  if (eval_months.empty() || steps.empty())
    throw std::invalid_argument("run_evaluation: need evaluation months and steps");
  EvaluationRun run;
  run.eval_months = eval_months;
  run.steps = steps;
  run.tadda = options.tadda;

  std::vector<std::pair<int, int>> pairs;
  for (int t : eval_months)
    for (int s : steps) pairs.emplace_back(t, s);

  std::vector<long> leakage(pairs.size(), 0);
  run.records.resize(pairs.size());

  const int workers = std::max(1, options.parallel);
  if (workers == 1) {
    for (size_t i = 0; i < pairs.size(); ++i) {
      run.records[i] = guarded_pair(raw, spec, pairs[i].first, pairs[i].second, options,
                                    false, &leakage[i]);
      if (options.log)
        (*options.log) << "pair t=" << pairs[i].first << " s=" << pairs[i].second
                       << (run.records[i].skipped ? " skipped: " + run.records[i].skip_reason
                                                  : " done")
                       << "\n";
    }
  } else {
    // (t, s) pairs are independent; batches keep at most `workers` futures
    // in flight and results land at fixed indices, so aggregation order
    // does not depend on scheduling.
    size_t next = 0;
    while (next < pairs.size()) {
      const size_t batch_end = std::min(pairs.size(), next + static_cast<size_t>(workers));
      std::vector<std::future<PairRecord>> futures;
      for (size_t i = next; i < batch_end; ++i)
        futures.push_back(std::async(std::launch::async, [&, i] {
          return guarded_pair(raw, spec, pairs[i].first, pairs[i].second, options, false,
                              &leakage[i]);
        }));
      for (size_t i = next; i < batch_end; ++i) run.records[i] = futures[i - next].get();
      next = batch_end;
    }
  }

  for (long l : leakage) run.leakage_rows_checked += l;
  run.scores_by_step = aggregate_scores(run.records, options.tadda);
  return run;
}

EvaluationRun run_forecast(const Panel& raw, const CovariateSpec& spec,
                           const std::vector<int>& steps, const RunOptions& options) {
  for (int s : steps)
    if (s < 2 || s > 7)
      throw std::invalid_argument("run_forecast: supported steps are 2..7, got " +
                                  std::to_string(s));
  if (raw.rows.empty()) throw std::runtime_error("run_forecast: empty panel");
  const int t0 = raw.month_range().second;

  EvaluationRun run;
  run.steps = steps;
  run.tadda = options.tadda;

  for (int s : steps) {
    // Future rows for month t0 + s: identifiers only; their covariates are
    // pulled from month t0 by the lag machinery and their targets are
    // unknown.
    Panel extended = raw;
    std::unordered_map<int32_t, bool> seen;
    std::vector<PanelObservation> future;
    for (const auto& r : raw.rows) {
      if (r.month != t0 || seen[r.cell_id]) continue;
      seen[r.cell_id] = true;
      PanelObservation f = r;
      f.month = t0 + s;
      f.sb_fatalities = f.os_fatalities = f.ns_fatalities = 0;
      std::fill(f.covariates.begin(), f.covariates.end(),
                std::numeric_limits<double>::quiet_NaN());
      future.push_back(std::move(f));
    }
    extended.rows.insert(extended.rows.end(), future.begin(), future.end());
    extended.sort_and_validate();

    long leakage = 0;
    PairRecord rec =
        guarded_pair(extended, spec, t0 + s, s, options, /*synthetic_test=*/true, &leakage);
    run.leakage_rows_checked += leakage;
    if (options.log)
      (*options.log) << "forecast s=" << s
                     << (rec.skipped ? " skipped: " + rec.skip_reason : " done") << "\n";
    run.records.push_back(std::move(rec));
  }
  return run;
}

void write_predictions_csv(const PairRecord& record, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "cell_id,country_id,month,pi1,pi2,lambda3,yhat,delta_hat,delta_true\n";
  for (Eigen::Index i = 0; i < record.yhat.size(); ++i) {
    out << record.preds.cell_id[static_cast<size_t>(i)] << ','
        << record.preds.country_id[static_cast<size_t>(i)] << ','
        << record.preds.month[static_cast<size_t>(i)] << ',' << fmt(record.preds.pi1[i]) << ','
        << fmt(record.preds.pi2[i]) << ',' << fmt(record.preds.lambda3[i]) << ','
        << fmt(record.yhat[i]) << ',' << fmt(record.delta_hat[i]) << ','
        << (record.has_truth ? fmt(record.delta_true[i]) : "NA") << '\n';
  }
}

void write_scores_csv(const EvaluationRun& run, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << "s,mse,tadda\n";
  for (const auto& [s, sp] : run.scores_by_step)
    out << s << ',' << fmt(sp.mse) << ',' << fmt(sp.tadda) << '\n';
}

std::string render_score_report(const EvaluationRun& run) {
  std::ostringstream out;
  out << "scores (mse on the log1p scale; tadda epsilon = " << run.tadda.epsilon << ")\n";
  out << "  s        MSE      TADDA   months\n";
  for (const auto& [s, sp] : run.scores_by_step) {
    char line[96];
    std::snprintf(line, sizeof(line), "%3d %10.4f %10.4f %8d\n", s, sp.mse, sp.tadda, sp.months);
    out << line;
  }
  int skipped = 0;
  for (const auto& rec : run.records) skipped += rec.skipped ? 1 : 0;
  if (skipped > 0) out << "  (" << skipped << " skipped pair(s) excluded)\n";
  return out.str();
}

}  // namespace hhr
