#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "hhr/calibrate.hpp"
#include "hhr/covariate_spec.hpp"
#include "hhr/evaluate.hpp"
#include "hhr/hurdle.hpp"
#include "hhr/panel.hpp"
#include "hhr/simulate.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";

std::string fnv1a_hex(const std::string& data) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

struct SpecChoice {
  hhr::CovariateSpec spec;
  std::string text;  // canonical form used for hashing
  std::string hash;
};

SpecChoice resolve_spec(const std::string& spec_path) {
  SpecChoice out;
  if (spec_path.empty()) {
    out.spec = hhr::default_covariate_spec();
    out.text = hhr::format_spec(out.spec);
  } else {
    out.text = read_file(spec_path);
    out.spec = hhr::parse_spec_text(out.text, spec_path);
  }
  out.hash = fnv1a_hex(out.text);
  return out;
}

fs::path default_out_dir() {
  if (const char* env = std::getenv("HHR_OUT_DIR")) return env;
  return ".";
}

void write_manifest(const fs::path& dir, const std::string& command, std::uint64_t seed,
                    const std::string& config_hash, double seconds) {
  // Timings make the manifest non-reproducible by design; every other
  // artifact is byte-stable under a fixed seed.
  json j{{"command", command},
         {"seed", seed},
         {"config_hash", config_hash},
         {"seconds", seconds},
         {"version", kVersion}};
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  out << j.dump(1) << "\n";
}

std::vector<int> parse_steps(const std::string& arg) {
  std::vector<int> steps;
  std::stringstream ss(arg);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    const auto dots = tok.find("..");
    if (dots != std::string::npos) {
      const int lo = std::stoi(tok.substr(0, dots));
      const int hi = std::stoi(tok.substr(dots + 2));
      for (int s = lo; s <= hi; ++s) steps.push_back(s);
    } else if (!tok.empty()) {
      steps.push_back(std::stoi(tok));
    }
  }
  return steps;
}

int cmd_simulate(int countries, int cells, int months, std::uint64_t seed, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  hhr::SimConfig cfg = hhr::default_sim_config();
  cfg.n_countries = countries;
  cfg.cells_per_country = cells;
  cfg.n_months = months;
  cfg.seed = seed;
  const hhr::Panel panel = hhr::simulate_panel(cfg);
  fs::create_directories(out);
  hhr::write_panel_csv(panel, out / "panel.csv");

  json truth;
  truth["dimensions"] = {{"countries", countries}, {"cells_per_country", cells}, {"months", months}};
  truth["seed"] = seed;
  truth["dgp_lag"] = cfg.dgp_lag;
  truth["unrest_rho"] = cfg.unrest_rho;
  for (int k = 0; k < 3; ++k) {
    const hhr::StageTruth& st = k == 0 ? cfg.stage1 : (k == 1 ? cfg.stage2 : cfg.stage3);
    json stage{{"intercept", st.intercept}, {"coef", st.coef}};
    truth["stage" + std::to_string(k + 1)] = stage;
  }
  std::ofstream tf(out / "truth.json", std::ios::binary);
  tf << truth.dump(1) << "\n";

  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "simulate", seed, fnv1a_hex(std::to_string(countries) + "," +
                                                  std::to_string(cells) + "," +
                                                  std::to_string(months)),
                 secs);
  std::cout << "wrote " << (out / "panel.csv").string() << " (" << panel.rows.size()
            << " rows)\n";
  return 0;
}

int cmd_fit(const std::string& input, const std::string& spec_path, int lag,
            std::uint64_t seed, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const SpecChoice spec = resolve_spec(spec_path);
  const hhr::Panel raw = hhr::load_panel(input, spec.spec);
  std::vector<std::string> warnings;
  const hhr::Panel lagged = hhr::lag_covariates(hhr::impute_missing(raw), lag, spec.spec, &warnings);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  hhr::HurdleModel model = hhr::fit_hurdle(lagged, spec.spec, lag);
  model.spec_hash = spec.hash;
  model.seed = seed;
  fs::create_directories(out);
  hhr::save_model(model, out / "model.json");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "fit", seed, spec.hash, secs);
  std::cout << "wrote " << (out / "model.json").string() << "\n";
  for (const auto* st : {&model.stage1, &model.stage2, &model.stage3})
    if (st->report.separation_warning)
      std::cerr << "warning: possible separation in a binary stage (|eta| > 30 on > 1% of rows)\n";
  return 0;
}

int cmd_calibrate(const std::string& input, const std::string& model_path,
                  const std::string& spec_path, int month, std::uint64_t seed, int de_pop,
                  int de_gens, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  if (!fs::exists(model_path))
    throw std::runtime_error("calibrate requires a fitted model; '" + model_path +
                             "' not found (run fit first)");
  hhr::HurdleModel model = hhr::load_model(model_path);
  if (!spec_path.empty()) {
    const SpecChoice spec = resolve_spec(spec_path);
    if (spec.hash != model.spec_hash)
      throw std::runtime_error("spec hash mismatch: model was fit from a different spec (" +
                               model.spec_hash + " vs " + spec.hash + "); refusing stale inputs");
  }

  const hhr::Panel raw = hhr::load_panel(input, model.spec);
  const hhr::Panel lagged =
      hhr::lag_covariates(hhr::impute_missing(raw), model.lag_s, model.spec, nullptr);
  const int calib_month = month >= 0 ? month : lagged.month_range().second;
  const hhr::Panel slice = lagged.filter_months(calib_month, calib_month);
  if (slice.rows.empty())
    throw std::runtime_error("no rows at calibration month " + std::to_string(calib_month));

  const hhr::StagePredictions preds = hhr::predict_stages(model, slice);
  Eigen::VectorXd y(static_cast<Eigen::Index>(slice.rows.size()));
  for (size_t i = 0; i < slice.rows.size(); ++i)
    y[static_cast<Eigen::Index>(i)] = static_cast<double>(slice.rows[i].sb_fatalities);

  hhr::DEConfig de;
  de.seed = seed;
  de.population = de_pop;
  de.generations = de_gens;
  const hhr::Hurdles hurdles = hhr::calibrate(preds, y, de);
  model.tau1 = hurdles.tau1;
  model.tau2 = hurdles.tau2;

  fs::create_directories(out);
  hhr::save_model(model, out / "model_calibrated.json");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "calibrate", seed, model.spec_hash, secs);
  std::cout << "calibrated hurdles tau1=" << hurdles.tau1 << " tau2=" << hurdles.tau2
            << " loss=" << hurdles.achieved_loss << " at month " << calib_month << "\n"
            << "wrote " << (out / "model_calibrated.json").string() << "\n";
  return 0;
}

int cmd_forecast(const std::string& input, const std::string& spec_path,
                 const std::string& model_path, const std::string& steps_arg, std::uint64_t seed,
                 int de_pop, int de_gens, double epsilon, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(out);

  if (!model_path.empty()) {
    // Single-step forecast from a previously fitted and calibrated model.
    const hhr::HurdleModel model = hhr::load_model(model_path);
    if (!model.tau1 || !model.tau2)
      throw std::runtime_error(
          "model has no calibrated hurdles; run calibrate before forecast");
    if (!spec_path.empty()) {
      const SpecChoice spec = resolve_spec(spec_path);
      if (spec.hash != model.spec_hash)
        throw std::runtime_error("spec hash mismatch with the fitted model; refusing stale inputs");
    }
    const hhr::Panel raw = hhr::load_panel(input, model.spec);
    const int t0 = raw.month_range().second;
    const int s = model.lag_s;

    hhr::Panel extended = raw;
    for (const auto& r : raw.rows)
      if (r.month == t0) {
        hhr::PanelObservation f = r;
        f.month = t0 + s;
        f.sb_fatalities = f.os_fatalities = f.ns_fatalities = 0;
        std::fill(f.covariates.begin(), f.covariates.end(),
                  std::numeric_limits<double>::quiet_NaN());
        extended.rows.push_back(std::move(f));
      }
    extended.sort_and_validate();
    const hhr::Panel lagged = hhr::lag_covariates(hhr::impute_missing(extended), s, model.spec);
    const hhr::Panel test = lagged.filter_months(t0 + s, t0 + s);
    const hhr::StagePredictions preds = hhr::predict_stages(model, test);
    hhr::PairRecord rec;
    rec.t = t0 + s;
    rec.s = s;
    rec.has_truth = false;
    rec.preds = preds;
    rec.yhat = hhr::apply_thresholds(preds, *model.tau1, *model.tau2);
    Eigen::VectorXd y_base(rec.yhat.size());
    {
      std::map<int32_t, double> at_t0;
      for (const auto& r : raw.rows)
        if (r.month == t0) at_t0[r.cell_id] = static_cast<double>(r.sb_fatalities);
      for (Eigen::Index i = 0; i < y_base.size(); ++i)
        y_base[i] = at_t0.at(preds.cell_id[static_cast<size_t>(i)]);
    }
    rec.y_base = y_base;
    rec.delta_hat = hhr::delta_transform(rec.yhat, y_base);
    rec.delta_true = Eigen::VectorXd::Zero(rec.yhat.size());
    hhr::write_predictions_csv(rec, out / ("forecast_s" + std::to_string(s) + ".csv"));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_manifest(out, "forecast", seed, model.spec_hash, secs);
    std::cout << "wrote " << (out / ("forecast_s" + std::to_string(s) + ".csv")).string() << "\n";
    return 0;
  }

  const SpecChoice spec = resolve_spec(spec_path);
  const hhr::Panel raw0 = hhr::load_panel(input, spec.spec);
  const hhr::Panel raw = hhr::impute_missing(raw0);
  const std::vector<int> steps = parse_steps(steps_arg);

  hhr::RunOptions opt;
  opt.de.seed = seed;
  opt.de.population = de_pop;
  opt.de.generations = de_gens;
  opt.tadda.epsilon = epsilon;
  const hhr::EvaluationRun run = hhr::run_forecast(raw, spec.spec, steps, opt);
  for (const auto& rec : run.records) {
    if (rec.skipped) {
      std::cerr << "warning: forecast s=" << rec.s << " skipped: " << rec.skip_reason << "\n";
      continue;
    }
    hhr::write_predictions_csv(rec, out / ("forecast_s" + std::to_string(rec.s) + ".csv"));
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "forecast", seed, spec.hash, secs);
  std::cout << "wrote forecasts for " << run.records.size() << " step(s) under " << out.string()
            << "\n";
  return 0;
}

int cmd_evaluate(const std::string& input, const std::string& spec_path,
                 const std::string& steps_arg, const std::string& eval_months_arg, int eval_last,
                 std::uint64_t seed, int de_pop, int de_gens, double epsilon, int parallel,
                 bool report, const fs::path& out) {
  const auto start = std::chrono::steady_clock::now();
  const SpecChoice spec = resolve_spec(spec_path);
  const hhr::Panel raw = hhr::impute_missing(hhr::load_panel(input, spec.spec));
  const std::vector<int> steps = parse_steps(steps_arg);

  std::vector<int> eval_months;
  if (!eval_months_arg.empty()) {
    std::stringstream ss(eval_months_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) eval_months.push_back(std::stoi(tok));
  } else if (eval_last > 0) {
    const int last = raw.month_range().second;
    for (int m = last - eval_last + 1; m <= last; ++m) eval_months.push_back(m);
  } else {
    throw std::runtime_error("evaluate needs --eval-months or --eval-last");
  }

  hhr::RunOptions opt;
  opt.de.seed = seed;
  opt.de.population = de_pop;
  opt.de.generations = de_gens;
  opt.tadda.epsilon = epsilon;
  opt.parallel = parallel;
  opt.log = &std::cerr;

  const hhr::EvaluationRun run = hhr::run_evaluation(raw, spec.spec, eval_months, steps, opt);
  fs::create_directories(out);
  for (const auto& rec : run.records) {
    if (rec.skipped) continue;
    hhr::write_predictions_csv(
        rec, out / ("predictions_t" + std::to_string(rec.t) + "_s" + std::to_string(rec.s) +
                    ".csv"));
  }
  hhr::write_scores_csv(run, out / "scores.csv");
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(out, "evaluate", seed, spec.hash, secs);
  if (report) std::cout << hhr::render_score_report(run);
  std::cout << "wrote " << (out / "scores.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semiparametric hierarchical hurdle regression for sparse spatio-temporal counts"};
  app.require_subcommand(1);
  app.set_version_flag("--app-version", kVersion);

  std::string input, spec_path, model_path, steps_arg = "2..7", eval_months_arg;
  std::string out_dir = default_out_dir().string();
  int countries = 5, cells = 20, months = 60, lag = 2, month = -1, eval_last = 0;
  int de_pop = 40, de_gens = 200, parallel = 1;
  double epsilon = 0.048;
  std::uint64_t seed = 0;
  bool report = false;

  auto* sim = app.add_subcommand("simulate", "sample a synthetic panel from the model");
  sim->add_option("--countries", countries, "number of countries")->check(CLI::PositiveNumber);
  sim->add_option("--cells", cells, "cells per country")->check(CLI::PositiveNumber);
  sim->add_option("--months", months, "number of months")->check(CLI::PositiveNumber);
  sim->add_option("--seed", seed, "RNG seed")->required();
  sim->add_option("--out", out_dir, "output directory");

  auto* fit = app.add_subcommand("fit", "fit the three stages on a panel CSV");
  fit->add_option("--input", input, "panel CSV")->required();
  fit->add_option("--spec", spec_path, "covariate spec file (default: built-in)");
  fit->add_option("--lag", lag, "covariate lag s in months")->check(CLI::PositiveNumber);
  fit->add_option("--seed", seed, "seed recorded in the model file");
  fit->add_option("--out", out_dir, "output directory");

  auto* cal = app.add_subcommand("calibrate", "tune the prediction hurdles on one month");
  cal->add_option("--input", input, "panel CSV")->required();
  cal->add_option("--model", model_path, "fitted model file")->required();
  cal->add_option("--spec", spec_path, "spec file for staleness checking");
  cal->add_option("--month", month, "calibration month (default: last lagged month)");
  cal->add_option("--seed", seed, "RNG seed")->required();
  cal->add_option("--de-pop", de_pop, "DE population size");
  cal->add_option("--de-gens", de_gens, "DE generations");
  cal->add_option("--out", out_dir, "output directory");

  auto* fc = app.add_subcommand("forecast", "one-step-ahead forecasts for each step");
  fc->add_option("--input", input, "panel CSV")->required();
  fc->add_option("--spec", spec_path, "covariate spec file (default: built-in)");
  fc->add_option("--model", model_path, "calibrated model (single-step mode)");
  fc->add_option("--steps", steps_arg, "steps, e.g. 2..7 or 2,4");
  fc->add_option("--seed", seed, "RNG seed")->required();
  fc->add_option("--de-pop", de_pop, "DE population size");
  fc->add_option("--de-gens", de_gens, "DE generations");
  fc->add_option("--epsilon", epsilon, "TADDA tolerance");
  fc->add_option("--out", out_dir, "output directory");

  auto* ev = app.add_subcommand("evaluate", "expanding-window backtest with scores");
  ev->add_option("--input", input, "panel CSV")->required();
  ev->add_option("--spec", spec_path, "covariate spec file (default: built-in)");
  ev->add_option("--steps", steps_arg, "steps, e.g. 2..7");
  ev->add_option("--eval-months", eval_months_arg, "explicit evaluation months, comma separated");
  ev->add_option("--eval-last", eval_last, "evaluate the last N months");
  ev->add_option("--seed", seed, "RNG seed")->required();
  ev->add_option("--de-pop", de_pop, "DE population size");
  ev->add_option("--de-gens", de_gens, "DE generations");
  ev->add_option("--epsilon", epsilon, "TADDA tolerance");
  ev->add_option("--parallel", parallel, "(t, s) pairs fitted concurrently");
  ev->add_flag("--report", report, "print a per-step score table");
  ev->add_option("--out", out_dir, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    const fs::path out(out_dir);
    if (sim->parsed()) return cmd_simulate(countries, cells, months, seed, out);
    if (fit->parsed()) return cmd_fit(input, spec_path, lag, seed, out);
    if (cal->parsed())
      return cmd_calibrate(input, model_path, spec_path, month, seed, de_pop, de_gens, out);
    if (fc->parsed())
      return cmd_forecast(input, spec_path, model_path, steps_arg, seed, de_pop, de_gens, epsilon,
                          out);
    if (ev->parsed())
      return cmd_evaluate(input, spec_path, steps_arg, eval_months_arg, eval_last, seed, de_pop,
                          de_gens, epsilon, parallel, report, out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
