#include "hhr/hurdle.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace hhr {

using json = nlohmann::json;

namespace {

constexpr int kModelFormatVersion = 1;

std::vector<size_t> rows_where(const Panel& panel, const std::function<bool(const PanelObservation&)>& pred) {
  std::vector<size_t> rows;
  for (size_t i = 0; i < panel.rows.size(); ++i)
    if (pred(panel.rows[i])) rows.push_back(i);
  return rows;
}

}  // namespace

HurdleModel fit_hurdle(const Panel& train, const CovariateSpec& spec, int lag_s,
                       const FitOptions& options) {
  if (train.covariate_lag != lag_s)
    throw std::invalid_argument("fit_hurdle: panel lag " + std::to_string(train.covariate_lag) +
                                " does not match requested lag " + std::to_string(lag_s));
  if (train.rows.empty()) throw std::runtime_error("fit_hurdle: empty training panel");
  validate_spec(spec);

  HurdleModel model;
  model.lag_s = lag_s;
  model.spec = spec;
  model.train_months = train.month_range();

  // Stage 1: deduplicated country-month rows, unit weights.
  const Level1Rows level1 = stage_weights_level1(train, spec);
  if (level1.rows.empty()) throw std::runtime_error("fit_hurdle: stage 1 has no country-months");
  {
    auto [design, dm] = StageDesign::build(train, level1.rows, spec, 1);
    model.design1 = std::move(design);
    model.stage1 = fit_stage(dm, level1.any_fatality, level1.weights, Family::bernoulli(), options);
  }

  // Stage 2: cells inside country-months with at least one fatality.
  std::map<std::pair<int32_t, int32_t>, int64_t> cm_totals;
  for (const auto& r : train.rows) cm_totals[{r.country_id, r.month}] += r.sb_fatalities;
  const std::vector<size_t> rows2 = rows_where(train, [&](const PanelObservation& r) {
    return cm_totals.at({r.country_id, r.month}) > 0;
  });
  if (rows2.empty())
    throw std::runtime_error(
        "fit_hurdle: stage 2 subsample is empty (no country-month with fatalities)");
  {
    auto [design, dm] = StageDesign::build(train, rows2, spec, 2);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows2.size()));
    for (size_t i = 0; i < rows2.size(); ++i)
      y[static_cast<Eigen::Index>(i)] = train.rows[rows2[i]].sb_fatalities > 0 ? 1.0 : 0.0;
    model.design2 = std::move(design);
    model.stage2 =
        fit_stage(dm, y, Eigen::VectorXd::Ones(y.size()), Family::bernoulli(), options);
  }

  // Stage 3: positive cells only, zero-truncated Poisson.
  const std::vector<size_t> rows3 =
      rows_where(train, [](const PanelObservation& r) { return r.sb_fatalities > 0; });
  if (rows3.empty())
    throw std::runtime_error("fit_hurdle: stage 3 subsample is empty (no positive cells)");
  {
    auto [design, dm] = StageDesign::build(train, rows3, spec, 3);
    Eigen::VectorXd y(static_cast<Eigen::Index>(rows3.size()));
    for (size_t i = 0; i < rows3.size(); ++i)
      y[static_cast<Eigen::Index>(i)] = static_cast<double>(train.rows[rows3[i]].sb_fatalities);
    model.design3 = std::move(design);
    model.stage3 =
        fit_stage(dm, y, Eigen::VectorXd::Ones(y.size()), Family::ztpoisson(), options);
  }
  return model;
}

double joint_probability(double pi1, double pi2, double lambda, double y, int y_tilde) {
  if (y < 0.0) throw std::domain_error("joint_probability: y must be nonnegative");
  if (y_tilde == 0) return y == 0.0 ? 1.0 - pi1 : 0.0;
  if (y == 0.0) return pi1 * (1.0 - pi2);
  return pi1 * pi2 * std::exp(ztpoisson_logpdf(y, lambda));
}

double joint_probability(const HurdleModel& model, const Panel& panel, size_t row, double y,
                         int y_tilde) {
  Panel one;
  one.covariate_names = panel.covariate_names;
  one.covariate_lag = panel.covariate_lag;
  one.rows.push_back(panel.rows.at(row));
  const StagePredictions preds = predict_stages(model, one);
  return joint_probability(preds.pi1[0], preds.pi2[0], preds.lambda3[0], y, y_tilde);
}

double marginal_mean(double pi1, double pi2, double lambda) {
  return pi1 * pi2 * ztpoisson_mean(lambda);
}

Eigen::VectorXd marginal_mean(const HurdleModel& model, const StagePredictions& preds) {
  (void)model;
  Eigen::VectorXd out(preds.pi1.size());
  for (Eigen::Index i = 0; i < out.size(); ++i)
    out[i] = marginal_mean(preds.pi1[i], preds.pi2[i], preds.lambda3[i]);
  return out;
}

StagePredictions predict_stages(const HurdleModel& model, const Panel& test) {
  if (test.covariate_lag != model.lag_s)
    throw std::invalid_argument("predict_stages: panel lag " +
                                std::to_string(test.covariate_lag) + " does not match model lag " +
                                std::to_string(model.lag_s));
  if (test.rows.empty()) throw std::runtime_error("predict_stages: empty panel");

  StagePredictions preds;
  const size_t n = test.rows.size();
  preds.cell_id.reserve(n);
  preds.country_id.reserve(n);
  preds.month.reserve(n);
  for (const auto& r : test.rows) {
    preds.cell_id.push_back(r.cell_id);
    preds.country_id.push_back(r.country_id);
    preds.month.push_back(r.month);
  }

  // pi1 once per country-month, broadcast to its cells.
  const std::vector<size_t> heads = test.country_month_heads();
  const Eigen::MatrixXd X1 = model.design1.evaluate(test, heads);
  const Eigen::VectorXd eta1 = predict_eta(model.stage1, X1);
  std::map<std::pair<int32_t, int32_t>, double> pi1_by_cm;
  for (size_t i = 0; i < heads.size(); ++i) {
    const auto& r = test.rows[heads[i]];
    pi1_by_cm[{r.country_id, r.month}] = inverse_logit(eta1[static_cast<Eigen::Index>(i)]);
  }

  std::vector<size_t> all(n);
  for (size_t i = 0; i < n; ++i) all[i] = i;
  const Eigen::MatrixXd X2 = model.design2.evaluate(test, all);
  const Eigen::MatrixXd X3 = model.design3.evaluate(test, all);
  const Eigen::VectorXd eta2 = predict_eta(model.stage2, X2);
  const Eigen::VectorXd eta3 = predict_eta(model.stage3, X3);

  preds.pi1.resize(static_cast<Eigen::Index>(n));
  preds.pi2.resize(static_cast<Eigen::Index>(n));
  preds.lambda3.resize(static_cast<Eigen::Index>(n));
  preds.y_true.resize(static_cast<Eigen::Index>(n));
  for (size_t i = 0; i < n; ++i) {
    const auto& r = test.rows[i];
    const auto idx = static_cast<Eigen::Index>(i);
    preds.pi1[idx] = pi1_by_cm.at({r.country_id, r.month});
    preds.pi2[idx] = inverse_logit(eta2[idx]);
    preds.lambda3[idx] = std::exp(eta3[idx]);
    preds.y_true[idx] = static_cast<double>(r.sb_fatalities);
  }
  return preds;
}

// ---------------------------------------------------------------------------
// Model file (versioned JSON)

namespace {

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j) {
  if (j.empty()) return {};
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = static_cast<Eigen::Index>(j.at(0).size());
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index k = 0; k < cols; ++k) m(i, k) = j.at(i).at(k).get<double>();
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Eigen::VectorXd vector_from_json(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j.at(i).get<double>();
  return v;
}

json grid_to_json(const KnotGrid& g) {
  return json{{"lo", g.lo},
              {"hi", g.hi},
              {"interior", g.interior},
              {"degree", g.degree},
              {"penalty_order", g.penalty_order}};
}

KnotGrid grid_from_json(const json& j) {
  KnotGrid g;
  g.lo = j.at("lo").get<double>();
  g.hi = j.at("hi").get<double>();
  g.interior = j.at("interior").get<std::vector<double>>();
  g.degree = j.at("degree").get<int>();
  g.penalty_order = j.at("penalty_order").get<int>();
  return g;
}

json entry_to_json(const CovariateSpecEntry& e) {
  return json{{"name", e.name},
              {"stages", e.stages},
              {"effect", to_string(e.effect)},
              {"transform", to_string(e.transform)},
              {"lag", e.lag_months},
              {"sources", e.sources},
              {"k", e.basis_size},
              {"degree", e.degree},
              {"order", e.penalty_order}};
}

CovariateSpecEntry entry_from_json(const json& j) {
  CovariateSpecEntry e;
  e.name = j.at("name").get<std::string>();
  e.stages = j.at("stages").get<std::vector<int>>();
  e.effect = effect_from_string(j.at("effect").get<std::string>());
  e.transform = transform_from_string(j.at("transform").get<std::string>());
  e.lag_months = j.at("lag").get<int>();
  e.sources = j.at("sources").get<std::vector<std::string>>();
  e.basis_size = j.at("k").get<int>();
  e.degree = j.at("degree").get<int>();
  e.penalty_order = j.at("order").get<int>();
  return e;
}

json design_to_json(const StageDesign& d) {
  json terms = json::array();
  for (const auto& t : d.terms()) {
    terms.push_back(json{{"spec", entry_to_json(t.spec)},
                         {"grid", grid_to_json(t.grid)},
                         {"grid2", grid_to_json(t.grid2)},
                         {"null_basis", matrix_to_json(t.null_basis)},
                         {"levels", t.levels},
                         {"factor_transform1", to_string(t.factor_transform1)},
                         {"factor_transform2", to_string(t.factor_transform2)}});
  }
  json layout = json::array();
  for (const auto& l : d.layout()) {
    layout.push_back(json{{"name", l.name},
                          {"effect", to_string(l.effect)},
                          {"start", l.start},
                          {"size", l.size},
                          {"penalized", l.penalized},
                          {"penalty", matrix_to_json(l.penalty)}});
  }
  return json{{"stage", d.stage()}, {"terms", terms}, {"layout", layout}};
}

StageDesign design_from_json(const json& j) {
  std::vector<FittedTerm> terms;
  for (const auto& tj : j.at("terms")) {
    FittedTerm t;
    t.spec = entry_from_json(tj.at("spec"));
    t.grid = grid_from_json(tj.at("grid"));
    t.grid2 = grid_from_json(tj.at("grid2"));
    t.null_basis = matrix_from_json(tj.at("null_basis"));
    t.levels = tj.at("levels").get<std::vector<int>>();
    t.factor_transform1 = transform_from_string(tj.at("factor_transform1").get<std::string>());
    t.factor_transform2 = transform_from_string(tj.at("factor_transform2").get<std::string>());
    terms.push_back(std::move(t));
  }
  std::vector<TermLayout> layout;
  for (const auto& lj : j.at("layout")) {
    TermLayout l;
    l.name = lj.at("name").get<std::string>();
    l.effect = effect_from_string(lj.at("effect").get<std::string>());
    l.start = lj.at("start").get<int>();
    l.size = lj.at("size").get<int>();
    l.penalized = lj.at("penalized").get<bool>();
    l.penalty = matrix_from_json(lj.at("penalty"));
    layout.push_back(std::move(l));
  }
  return StageDesign(j.at("stage").get<int>(), std::move(terms), std::move(layout));
}

json stage_to_json(const FittedStage& s) {
  json layout = json::array();
  for (const auto& l : s.layout) {
    layout.push_back(json{{"name", l.name},
                          {"effect", to_string(l.effect)},
                          {"start", l.start},
                          {"size", l.size},
                          {"penalized", l.penalized},
                          {"penalty", matrix_to_json(l.penalty)}});
  }
  return json{{"family", s.family.kind() == Family::Kind::BernoulliLogit ? "bernoulli-logit"
                                                                         : "ztpoisson-log"},
              {"coefficients", vector_to_json(s.coefficients)},
              {"std_errors", vector_to_json(s.std_errors)},
              {"smoothing", s.smoothing},
              {"edf", s.edf},
              {"gcv", s.gcv},
              {"layout", layout},
              {"converged", s.report.converged},
              {"iterations", s.report.iterations},
              {"deviance", s.report.deviance}};
}

FittedStage stage_from_json(const json& j) {
  FittedStage s;
  s.family = j.at("family").get<std::string>() == "bernoulli-logit" ? Family::bernoulli()
                                                                    : Family::ztpoisson();
  s.coefficients = vector_from_json(j.at("coefficients"));
  s.std_errors = vector_from_json(j.at("std_errors"));
  s.smoothing = j.at("smoothing").get<std::vector<double>>();
  s.edf = j.at("edf").get<double>();
  s.gcv = j.at("gcv").get<double>();
  for (const auto& lj : j.at("layout")) {
    TermLayout l;
    l.name = lj.at("name").get<std::string>();
    l.effect = effect_from_string(lj.at("effect").get<std::string>());
    l.start = lj.at("start").get<int>();
    l.size = lj.at("size").get<int>();
    l.penalized = lj.at("penalized").get<bool>();
    l.penalty = matrix_from_json(lj.at("penalty"));
    s.layout.push_back(std::move(l));
  }
  s.report.converged = j.at("converged").get<bool>();
  s.report.iterations = j.at("iterations").get<int>();
  s.report.deviance = j.at("deviance").get<double>();
  return s;
}

}  // namespace

void save_model(const HurdleModel& model, const std::filesystem::path& path) {
  json j;
  j["format"] = "hhr-model";
  j["version"] = kModelFormatVersion;
  j["lag_s"] = model.lag_s;
  j["train_months"] = {model.train_months.first, model.train_months.second};
  j["spec_hash"] = model.spec_hash;
  j["seed"] = model.seed;
  j["spec"] = json::array();
  for (const auto& e : model.spec) j["spec"].push_back(entry_to_json(e));
  if (model.tau1) j["tau1"] = *model.tau1;
  if (model.tau2) j["tau2"] = *model.tau2;
  j["stage1"] = stage_to_json(model.stage1);
  j["stage2"] = stage_to_json(model.stage2);
  j["stage3"] = stage_to_json(model.stage3);
  j["design1"] = design_to_json(model.design1);
  j["design2"] = design_to_json(model.design2);
  j["design3"] = design_to_json(model.design3);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_model: cannot write '" + path.string() + "'");
  out << j.dump(1) << "\n";
}

HurdleModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_model: cannot open '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("load_model: '" + path.string() + "' is not a valid model file: " +
                             e.what());
  }
  if (!j.contains("format") || j.at("format") != "hhr-model")
    throw std::runtime_error("load_model: '" + path.string() + "' is not a hhr model file");
  const int version = j.at("version").get<int>();
  if (version != kModelFormatVersion)
    throw std::runtime_error("load_model: model file version " + std::to_string(version) +
                             " is not supported by this reader (version " +
                             std::to_string(kModelFormatVersion) + ")");
  HurdleModel model;
  model.lag_s = j.at("lag_s").get<int>();
  model.train_months = {j.at("train_months").at(0).get<int>(),
                        j.at("train_months").at(1).get<int>()};
  model.spec_hash = j.at("spec_hash").get<std::string>();
  model.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& ej : j.at("spec")) model.spec.push_back(entry_from_json(ej));
  if (j.contains("tau1")) model.tau1 = j.at("tau1").get<double>();
  if (j.contains("tau2")) model.tau2 = j.at("tau2").get<double>();
  model.stage1 = stage_from_json(j.at("stage1"));
  model.stage2 = stage_from_json(j.at("stage2"));
  model.stage3 = stage_from_json(j.at("stage3"));
  model.design1 = design_from_json(j.at("design1"));
  model.design2 = design_from_json(j.at("design2"));
  model.design3 = design_from_json(j.at("design3"));
  return model;
}

}  // namespace hhr
