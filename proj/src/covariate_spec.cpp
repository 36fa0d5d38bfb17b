#include "hhr/covariate_spec.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hhr {

std::string to_string(EffectKind kind) {
  switch (kind) {
    case EffectKind::Linear: return "linear";
    case EffectKind::DummySet: return "dummy-set";
    case EffectKind::PSpline: return "p-spline";
    case EffectKind::TemporalTrend: return "temporal-trend";
    case EffectKind::TensorSpatial: return "tensor-spatial";
    case EffectKind::RandomEffect: return "random-effect";
    case EffectKind::Interaction: return "interaction";
  }
  return "?";
}

std::string to_string(TransformKind kind) {
  switch (kind) {
    case TransformKind::Identity: return "identity";
    case TransformKind::Log: return "log";
    case TransformKind::Log1p: return "log1p";
    case TransformKind::LogitLinkTarget: return "logit-link-target";
  }
  return "?";
}

EffectKind effect_from_string(const std::string& s) {
  if (s == "linear") return EffectKind::Linear;
  if (s == "dummy-set") return EffectKind::DummySet;
  if (s == "p-spline") return EffectKind::PSpline;
  if (s == "temporal-trend") return EffectKind::TemporalTrend;
  if (s == "tensor-spatial") return EffectKind::TensorSpatial;
  if (s == "random-effect") return EffectKind::RandomEffect;
  if (s == "interaction") return EffectKind::Interaction;
  throw std::invalid_argument("unknown effect kind '" + s + "'");
}

TransformKind transform_from_string(const std::string& s) {
  if (s == "identity") return TransformKind::Identity;
  if (s == "log") return TransformKind::Log;
  if (s == "log1p") return TransformKind::Log1p;
  if (s == "logit-link-target") return TransformKind::LogitLinkTarget;
  throw std::invalid_argument("unknown transform '" + s + "'");
}

std::vector<std::string> CovariateSpecEntry::resolved_sources() const {
  if (!sources.empty()) return sources;
  return {name};
}

bool CovariateSpecEntry::applies_to_stage(int stage) const {
  return std::find(stages.begin(), stages.end(), stage) != stages.end();
}

void validate_spec(const CovariateSpec& spec) {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& e : spec) {
    if (e.name.empty()) throw std::invalid_argument("covariate spec: empty name");
    if (e.stages.empty())
      throw std::invalid_argument("covariate spec: '" + e.name + "' lists no stages");
    for (int s : e.stages) {
      if (s < 1 || s > 3)
        throw std::invalid_argument("covariate spec: '" + e.name + "' has stage outside 1..3");
      if (!seen.insert({e.name, s}).second)
        throw std::invalid_argument("covariate spec: duplicate entry for ('" + e.name +
                                    "', stage " + std::to_string(s) + ")");
    }
    if (e.effect == EffectKind::Interaction) {
      const auto srcs = e.resolved_sources();
      if (srcs.size() != 2)
        throw std::invalid_argument("covariate spec: interaction '" + e.name +
                                    "' needs exactly two sources");
      for (int s : e.stages)
        for (const auto& src : srcs) {
          const bool covered = std::any_of(spec.begin(), spec.end(), [&](const auto& o) {
            return o.name == src && o.applies_to_stage(s) && o.effect != EffectKind::Interaction;
          });
          if (!covered)
            throw std::invalid_argument("covariate spec: interaction '" + e.name +
                                        "' references '" + src +
                                        "' which has no entry in stage " + std::to_string(s));
        }
    }
    if (e.effect == EffectKind::TensorSpatial && e.resolved_sources().size() != 2)
      throw std::invalid_argument("covariate spec: tensor term '" + e.name +
                                  "' needs two coordinate sources");
    if (e.lag_months < 0)
      throw std::invalid_argument("covariate spec: '" + e.name + "' has negative lag");
  }
}

namespace {

std::vector<int> parse_stage_list(const std::string& tok, const std::string& where) {
  std::vector<int> stages;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, ',')) {
    try {
      stages.push_back(std::stoi(part));
    } catch (const std::exception&) {
      throw std::invalid_argument(where + ": bad stage list '" + tok + "'");
    }
  }
  return stages;
}

std::vector<std::string> split_commas(const std::string& tok) {
  std::vector<std::string> out;
  std::stringstream ss(tok);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(part);
  return out;
}

}  // namespace

CovariateSpec parse_spec_text(const std::string& text, const std::string& origin) {
  CovariateSpec spec;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string name, stages_tok, effect_tok, transform_tok;
    if (!(ls >> name)) continue;  // blank line
    const std::string where = origin + ":" + std::to_string(lineno);
    if (!(ls >> stages_tok >> effect_tok >> transform_tok))
      throw std::invalid_argument(where + ": expected 'name stages effect transform'");
    CovariateSpecEntry e;
    e.name = name;
    e.stages = parse_stage_list(stages_tok, where);
    try {
      e.effect = effect_from_string(effect_tok);
      e.transform = transform_from_string(transform_tok);
    } catch (const std::invalid_argument& err) {
      throw std::invalid_argument(where + ": " + err.what());
    }
    std::string kv;
    while (ls >> kv) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument(where + ": expected key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, eq);
      const std::string val = kv.substr(eq + 1);
      if (key == "sources") e.sources = split_commas(val);
      else if (key == "k") e.basis_size = std::stoi(val);
      else if (key == "degree") e.degree = std::stoi(val);
      else if (key == "order") e.penalty_order = std::stoi(val);
      else if (key == "lag") e.lag_months = std::stoi(val);
      else throw std::invalid_argument(where + ": unknown key '" + key + "'");
    }
    spec.push_back(std::move(e));
  }
  validate_spec(spec);
  return spec;
}

CovariateSpec parse_spec_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open covariate spec '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_spec_text(buf.str(), path.string());
}

std::string format_spec(const CovariateSpec& spec) {
  std::ostringstream out;
  out << "# name  stages  effect  transform  [sources=a,b k=N degree=N order=N lag=N]\n";
  for (const auto& e : spec) {
    out << e.name << "  ";
    for (size_t i = 0; i < e.stages.size(); ++i) out << (i ? "," : "") << e.stages[i];
    out << "  " << to_string(e.effect) << "  " << to_string(e.transform);
    if (!e.sources.empty()) {
      out << "  sources=";
      for (size_t i = 0; i < e.sources.size(); ++i) out << (i ? "," : "") << e.sources[i];
    }
    if (e.basis_size != 0) out << "  k=" << e.basis_size;
    if (e.degree != 3) out << "  degree=" << e.degree;
    if (e.penalty_order != 2) out << "  order=" << e.penalty_order;
    if (e.lag_months != 0) out << "  lag=" << e.lag_months;
    out << "\n";
  }
  return out.str();
}

CovariateSpec default_covariate_spec() {
  // Stage wiring: CM-level aggregates drive stage 1, cell-level features
  // drive stages 2 and 3. Arms imports (st_mcw, lt_mcw) arrive already on
  // the log1p scale from the yearly aggregation, hence identity here.
  const char* text = R"(# default hurdle covariate specification
# stage 1: country-month incidence
cm_sb_last        1      linear          identity
cm_os_last        1      linear          identity
cm_ns_last        1      linear          identity
cm_sb_count_last  1      linear          log1p
population        1,2,3  linear          log
gdp               1,2,3  linear          log
polity            1,2,3  linear          identity
mil_exp           1,2,3  linear          log
st_mcw            1,2,3  linear          identity
lt_mcw            1,2,3  linear          identity
month             1,2,3  dummy-set       identity
trend             1,2,3  temporal-trend  identity   sources=month
cm_since_sb       1      p-spline        identity
cm_since_os       1      p-spline        identity
cm_since_ns       1      p-spline        identity
cm_spatial        1      tensor-spatial  identity   sources=cm_lon,cm_lat  k=5
country_re        1      random-effect   identity   sources=country
# stages 2 and 3: cell-level incidence and intensity
sb_last           2,3    linear          identity
os_last           2,3    linear          identity
ns_last           2,3    linear          identity
sb_count_last     2      linear          log1p
sb_count_last     3      p-spline        log1p
nightlights       2,3    linear          identity
infant_mortality  2,3    linear          identity
dist_capital      2,3    linear          identity
st_x_cd           2,3    interaction     identity   sources=st_mcw,dist_capital
lt_x_cd           2,3    interaction     identity   sources=lt_mcw,dist_capital
since_sb          2,3    p-spline        identity
since_os          2,3    p-spline        identity
since_ns          2,3    p-spline        identity
spatial           2,3    tensor-spatial  identity   sources=lon,lat  k=5
)";
  return parse_spec_text(text, "<builtin>");
}

TransformKind transform_for(const CovariateSpec& spec, const std::string& name, int stage) {
  for (const auto& e : spec)
    if (e.name == name && e.applies_to_stage(stage) && e.effect != EffectKind::Interaction)
      return e.transform;
  for (const auto& e : spec)
    if (e.name == name && e.effect != EffectKind::Interaction) return e.transform;
  return TransformKind::Identity;
}

}  // namespace hhr
