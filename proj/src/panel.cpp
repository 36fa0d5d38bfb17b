#include "hhr/panel.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace hhr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

double parse_double_field(const std::string& s, int lineno, const std::string& col) {
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN") return kNaN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("line " + std::to_string(lineno) + ": malformed value '" + s +
                             "' in column " + col);
  return v;
}

int64_t parse_int_field(const std::string& s, int lineno, const std::string& col) {
  int64_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw std::runtime_error("line " + std::to_string(lineno) + ": malformed integer '" + s +
                             "' in column " + col);
  return v;
}

std::string format_double(double v) {
  if (std::isnan(v)) return "NA";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

int Panel::covariate_index(const std::string& name) const {
  const auto it = std::find(covariate_names.begin(), covariate_names.end(), name);
  return it == covariate_names.end() ? -1
                                     : static_cast<int>(it - covariate_names.begin());
}

std::pair<int, int> Panel::month_range() const {
  if (rows.empty()) throw std::runtime_error("month_range on empty panel");
  int lo = rows.front().month, hi = rows.front().month;
  for (const auto& r : rows) {
    lo = std::min(lo, r.month);
    hi = std::max(hi, r.month);
  }
  return {lo, hi};
}

void Panel::sort_and_validate() {
  std::sort(rows.begin(), rows.end(), [](const PanelObservation& a, const PanelObservation& b) {
    if (a.country_id != b.country_id) return a.country_id < b.country_id;
    if (a.cell_id != b.cell_id) return a.cell_id < b.cell_id;
    return a.month < b.month;
  });
  std::unordered_map<int32_t, int32_t> owner;
  for (const auto& r : rows) {
    if (r.sb_fatalities < 0 || r.os_fatalities < 0 || r.ns_fatalities < 0)
      throw std::runtime_error("negative fatality count for cell " + std::to_string(r.cell_id));
    const auto [it, inserted] = owner.emplace(r.cell_id, r.country_id);
    if (!inserted && it->second != r.country_id)
      throw std::runtime_error("cell " + std::to_string(r.cell_id) +
                               " mapped to countries " + std::to_string(it->second) + " and " +
                               std::to_string(r.country_id));
  }
}

std::vector<size_t> Panel::country_month_heads() const {
  std::map<std::pair<int32_t, int32_t>, size_t> first;
  for (size_t i = 0; i < rows.size(); ++i)
    first.emplace(std::make_pair(rows[i].country_id, rows[i].month), i);
  std::vector<size_t> heads;
  heads.reserve(first.size());
  for (const auto& [key, idx] : first) heads.push_back(idx);
  return heads;
}

Panel Panel::filter_months(int lo, int hi) const {
  Panel out;
  out.covariate_names = covariate_names;
  out.covariate_lag = covariate_lag;
  for (const auto& r : rows)
    if (r.month >= lo && r.month <= hi) out.rows.push_back(r);
  return out;
}

std::vector<CountryMonth> aggregate_country_months(const Panel& panel) {
  std::map<std::pair<int32_t, int32_t>, int64_t> totals;
  for (const auto& r : panel.rows) totals[{r.country_id, r.month}] += r.sb_fatalities;
  std::vector<CountryMonth> out;
  out.reserve(totals.size());
  for (const auto& [key, total] : totals)
    out.push_back({key.first, key.second, total, total > 0});
  return out;
}

Panel load_panel(const std::filesystem::path& path, const CovariateSpec& schema) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open panel CSV '" + path.string() + "'");

  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty panel CSV");
  const std::vector<std::string> header = split_csv_line(line);

  static const std::vector<std::string> reserved = {
      "cell_id", "country_id", "month",      "sb_fatalities",
      "lon",     "lat",        "os_fatalities", "ns_fatalities"};
  std::unordered_map<std::string, int> col;
  for (size_t i = 0; i < header.size(); ++i) {
    if (!col.emplace(header[i], static_cast<int>(i)).second)
      throw std::runtime_error("duplicate column '" + header[i] + "'");
  }
  for (const auto& required :
       {"cell_id", "country_id", "month", "sb_fatalities", "lon", "lat"})
    if (!col.count(required))
      throw std::runtime_error(std::string("panel CSV lacks required column '") + required + "'");

  Panel panel;
  for (const auto& name : header)
    if (std::find(reserved.begin(), reserved.end(), name) == reserved.end())
      panel.covariate_names.push_back(name);

  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != header.size())
      throw std::runtime_error("line " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields, got " +
                               std::to_string(fields.size()));
    PanelObservation row;
    row.cell_id = static_cast<int32_t>(parse_int_field(fields[col["cell_id"]], lineno, "cell_id"));
    row.country_id =
        static_cast<int32_t>(parse_int_field(fields[col["country_id"]], lineno, "country_id"));
    row.month = static_cast<int32_t>(parse_int_field(fields[col["month"]], lineno, "month"));
    row.sb_fatalities = parse_int_field(fields[col["sb_fatalities"]], lineno, "sb_fatalities");
    if (col.count("os_fatalities"))
      row.os_fatalities = parse_int_field(fields[col["os_fatalities"]], lineno, "os_fatalities");
    if (col.count("ns_fatalities"))
      row.ns_fatalities = parse_int_field(fields[col["ns_fatalities"]], lineno, "ns_fatalities");
    row.lon = parse_double_field(fields[col["lon"]], lineno, "lon");
    row.lat = parse_double_field(fields[col["lat"]], lineno, "lat");
    row.covariates.reserve(panel.covariate_names.size());
    for (const auto& name : panel.covariate_names)
      row.covariates.push_back(parse_double_field(fields[col[name]], lineno, name));
    panel.rows.push_back(std::move(row));
  }
  panel.sort_and_validate();

  // Raw source columns referenced by the schema must exist up front;
  // derived feature columns appear later, when the panel is lagged.
  if (!schema.empty()) {
    const auto& derived = derived_feature_names();
    for (const auto& entry : schema) {
      if (entry.effect == EffectKind::DummySet || entry.effect == EffectKind::TemporalTrend ||
          entry.effect == EffectKind::RandomEffect)
        continue;  // sourced from month / country identifiers
      for (const auto& src : entry.resolved_sources()) {
        if (src == "lon" || src == "lat" || src == "month" || src == "country") continue;
        if (std::find(derived.begin(), derived.end(), src) != derived.end()) continue;
        if (!panel.has_covariate(src))
          throw std::runtime_error("panel CSV lacks covariate '" + src +
                                   "' referenced by the spec entry '" + entry.name + "'");
      }
    }
  }
  return panel;
}

std::string panel_to_csv(const Panel& panel) {
  std::ostringstream out;
  out << "cell_id,country_id,month,sb_fatalities,os_fatalities,ns_fatalities,lon,lat";
  for (const auto& name : panel.covariate_names) out << ',' << name;
  out << '\n';
  for (const auto& r : panel.rows) {
    out << r.cell_id << ',' << r.country_id << ',' << r.month << ',' << r.sb_fatalities << ','
        << r.os_fatalities << ',' << r.ns_fatalities << ',' << format_double(r.lon) << ','
        << format_double(r.lat);
    for (double v : r.covariates) out << ',' << format_double(v);
    out << '\n';
  }
  return out.str();
}

void write_panel_csv(const Panel& panel, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << panel_to_csv(panel);
}

Panel impute_missing(const Panel& panel) {
  Panel out = panel;
  const size_t ncov = out.covariate_names.size();
  if (ncov == 0 || out.rows.empty()) return out;

  // Global and per-country means over observed values.
  std::vector<double> global_sum(ncov, 0.0);
  std::vector<int64_t> global_n(ncov, 0);
  std::map<int32_t, std::vector<double>> ctry_sum;
  std::map<int32_t, std::vector<int64_t>> ctry_n;
  for (const auto& r : out.rows) {
    auto& cs = ctry_sum.try_emplace(r.country_id, ncov, 0.0).first->second;
    auto& cn = ctry_n.try_emplace(r.country_id, ncov, 0).first->second;
    for (size_t c = 0; c < ncov; ++c) {
      const double v = r.covariates[c];
      if (!std::isnan(v)) {
        global_sum[c] += v;
        ++global_n[c];
        cs[c] += v;
        ++cn[c];
      }
    }
  }
  for (size_t c = 0; c < ncov; ++c)
    if (global_n[c] == 0)
      throw std::runtime_error("covariate '" + out.covariate_names[c] +
                               "' is missing everywhere; cannot impute");

  // Rows are sorted by (country, cell, month), so LOCF is a single pass.
  int32_t cur_cell = -1, cur_country = -1;
  std::vector<double> last(ncov, kNaN);
  for (auto& r : out.rows) {
    if (r.cell_id != cur_cell || r.country_id != cur_country) {
      cur_cell = r.cell_id;
      cur_country = r.country_id;
      std::fill(last.begin(), last.end(), kNaN);
    }
    for (size_t c = 0; c < ncov; ++c) {
      double& v = r.covariates[c];
      if (std::isnan(v)) {
        if (!std::isnan(last[c])) {
          v = last[c];
        } else if (ctry_n[r.country_id][c] > 0) {
          v = ctry_sum[r.country_id][c] / static_cast<double>(ctry_n[r.country_id][c]);
        } else {
          v = global_sum[c] / static_cast<double>(global_n[c]);
        }
      }
      last[c] = v;
    }
  }
  return out;
}

double transform_covariate(double x, TransformKind transform, const std::string& name) {
  switch (transform) {
    case TransformKind::Identity:
      return x;
    case TransformKind::Log:
      if (!(x > 0.0))
        throw std::domain_error("covariate '" + name + "': log requires a positive value, got " +
                                format_double(x));
      return std::log(x);
    case TransformKind::Log1p:
      if (x < 0.0)
        throw std::domain_error("covariate '" + name +
                                "': log1p requires a nonnegative value, got " + format_double(x));
      return std::log1p(x);
    case TransformKind::LogitLinkTarget:
      throw std::invalid_argument("covariate '" + name +
                                  "': logit-link-target marks a model target, not a design column");
  }
  return x;
}

ArmsImports aggregate_arms_imports(const std::map<int, double>& yearly_tiv, int year) {
  ArmsImports out;
  double st_sum = 0.0, lt_sum = 0.0;
  for (int y = year - 10; y <= year; ++y) {
    const auto it = yearly_tiv.find(y);
    if (it == yearly_tiv.end()) {
      out.complete = false;
      continue;
    }
    if (it->second < 0.0)
      throw std::domain_error("negative arms import TIV in year " + std::to_string(y));
    if (y >= year - 1) st_sum += it->second;
    else if (y <= year - 2) lt_sum += it->second;
  }
  out.short_term = std::log1p(st_sum);
  out.long_term = std::log1p(lt_sum);
  return out;
}

double months_since_feature(int month, int last_event_month, int epoch, bool has_event) {
  const int d = has_event ? month - last_event_month : month - epoch + 1;
  return std::log1p(static_cast<double>(d));
}

const std::vector<std::string>& derived_feature_names() {
  static const std::vector<std::string> names = {
      "sb_last",      "os_last",      "ns_last",      "sb_count_last",
      "since_sb",     "since_os",     "since_ns",     "cm_sb_last",
      "cm_os_last",   "cm_ns_last",   "cm_sb_count_last", "cm_since_sb",
      "cm_since_os",  "cm_since_ns",  "cm_lon",       "cm_lat"};
  return names;
}

namespace {

struct EventHistory {
  // Sorted months with at least one fatality, per conflict type.
  std::vector<int> sb, os, ns;

  static int last_at_or_before(const std::vector<int>& months, int m) {
    const auto it = std::upper_bound(months.begin(), months.end(), m);
    if (it == months.begin()) return std::numeric_limits<int>::min();
    return *(it - 1);
  }
};

}  // namespace

Panel lag_covariates(const Panel& panel, int s, const CovariateSpec& spec,
                     std::vector<std::string>* warnings) {
  if (s < 1) throw std::invalid_argument("lag_covariates: s must be >= 1");
  if (panel.covariate_lag != 0)
    throw std::invalid_argument("lag_covariates: panel is already lagged");

  Panel out;
  out.covariate_names = panel.covariate_names;
  for (const auto& name : derived_feature_names()) {
    if (std::find(out.covariate_names.begin(), out.covariate_names.end(), name) !=
        out.covariate_names.end())
      throw std::invalid_argument("lag_covariates: panel already has a column named '" + name +
                                  "'");
    out.covariate_names.push_back(name);
  }
  out.covariate_lag = s;
  if (panel.rows.empty()) return out;

  const auto [epoch, last_month] = panel.month_range();
  if (epoch + s > last_month) {
    if (warnings)
      warnings->push_back("lag " + std::to_string(s) + " months exceeds the panel span " +
                          std::to_string(epoch) + ".." + std::to_string(last_month) +
                          "; result is empty");
    return out;
  }

  // Per-covariate extra lags from the spec (0 for everything else).
  std::vector<int> extra_lag(panel.covariate_names.size(), 0);
  for (const auto& entry : spec) {
    if (entry.lag_months == 0) continue;
    for (const auto& src : entry.resolved_sources()) {
      const int idx = panel.covariate_index(src);
      if (idx >= 0) extra_lag[static_cast<size_t>(idx)] = entry.lag_months;
    }
  }

  // Cell-level row lookup and event histories.
  std::unordered_map<int64_t, size_t> row_at;  // (cell, month) -> row index
  std::unordered_map<int32_t, EventHistory> cell_events;
  auto cell_key = [](int32_t cell, int32_t month) {
    return (static_cast<int64_t>(cell) << 32) | static_cast<uint32_t>(month);
  };
  for (size_t i = 0; i < panel.rows.size(); ++i) {
    const auto& r = panel.rows[i];
    row_at[cell_key(r.cell_id, r.month)] = i;
    auto& ev = cell_events[r.cell_id];
    if (r.sb_fatalities > 0) ev.sb.push_back(r.month);
    if (r.os_fatalities > 0) ev.os.push_back(r.month);
    if (r.ns_fatalities > 0) ev.ns.push_back(r.month);
  }
  for (auto& [cell, ev] : cell_events) {
    std::sort(ev.sb.begin(), ev.sb.end());
    std::sort(ev.os.begin(), ev.os.end());
    std::sort(ev.ns.begin(), ev.ns.end());
  }

  // Country-level monthly aggregates, event histories, and centroids.
  struct CountryAgg {
    std::map<int, std::array<int64_t, 3>> totals;  // month -> (sb, os, ns)
    EventHistory events;
    double lon_sum = 0.0, lat_sum = 0.0;
    std::set<int32_t> cells;
  };
  std::map<int32_t, CountryAgg> countries;
  for (const auto& r : panel.rows) {
    auto& agg = countries[r.country_id];
    auto& t = agg.totals[r.month];
    t[0] += r.sb_fatalities;
    t[1] += r.os_fatalities;
    t[2] += r.ns_fatalities;
    if (agg.cells.insert(r.cell_id).second) {
      agg.lon_sum += r.lon;
      agg.lat_sum += r.lat;
    }
  }
  for (auto& [cid, agg] : countries) {
    for (const auto& [m, t] : agg.totals) {
      if (t[0] > 0) agg.events.sb.push_back(m);
      if (t[1] > 0) agg.events.os.push_back(m);
      if (t[2] > 0) agg.events.ns.push_back(m);
    }
  }

  const int int_min = std::numeric_limits<int>::min();
  out.rows.reserve(panel.rows.size());
  for (const auto& r : panel.rows) {
    const int mm = r.month - s;  // measurement month for every covariate
    if (mm < epoch) continue;
    const auto src_it = row_at.find(cell_key(r.cell_id, mm));
    if (src_it == row_at.end()) continue;
    const PanelObservation& src = panel.rows[src_it->second];

    PanelObservation lagged = r;  // identifiers and targets stay at month m
    lagged.covariates.assign(out.covariate_names.size(), kNaN);
    bool skip = false;
    for (size_t c = 0; c < panel.covariate_names.size(); ++c) {
      if (extra_lag[c] == 0) {
        lagged.covariates[c] = src.covariates[c];
      } else {
        const auto it2 = row_at.find(cell_key(r.cell_id, mm - extra_lag[c]));
        if (it2 == row_at.end()) {
          skip = true;
          break;
        }
        lagged.covariates[c] = panel.rows[it2->second].covariates[c];
      }
    }
    if (skip) continue;

    const auto& ev = cell_events[r.cell_id];
    const int last_sb = EventHistory::last_at_or_before(ev.sb, mm);
    const int last_os = EventHistory::last_at_or_before(ev.os, mm);
    const int last_ns = EventHistory::last_at_or_before(ev.ns, mm);
    const auto& agg = countries.at(r.country_id);
    const auto tot_it = agg.totals.find(mm);
    if (tot_it == agg.totals.end()) continue;
    const auto& cm_tot = tot_it->second;
    const int cm_last_sb = EventHistory::last_at_or_before(agg.events.sb, mm);
    const int cm_last_os = EventHistory::last_at_or_before(agg.events.os, mm);
    const int cm_last_ns = EventHistory::last_at_or_before(agg.events.ns, mm);
    const double n_cells = static_cast<double>(agg.cells.size());

    size_t d = panel.covariate_names.size();
    lagged.covariates[d++] = src.sb_fatalities > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = src.os_fatalities > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = src.ns_fatalities > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = static_cast<double>(src.sb_fatalities);
    lagged.covariates[d++] = months_since_feature(mm, last_sb, epoch, last_sb != int_min);
    lagged.covariates[d++] = months_since_feature(mm, last_os, epoch, last_os != int_min);
    lagged.covariates[d++] = months_since_feature(mm, last_ns, epoch, last_ns != int_min);
    lagged.covariates[d++] = cm_tot[0] > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = cm_tot[1] > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = cm_tot[2] > 0 ? 1.0 : 0.0;
    lagged.covariates[d++] = static_cast<double>(cm_tot[0]);
    lagged.covariates[d++] = months_since_feature(mm, cm_last_sb, epoch, cm_last_sb != int_min);
    lagged.covariates[d++] = months_since_feature(mm, cm_last_os, epoch, cm_last_os != int_min);
    lagged.covariates[d++] = months_since_feature(mm, cm_last_ns, epoch, cm_last_ns != int_min);
    lagged.covariates[d++] = agg.lon_sum / n_cells;
    lagged.covariates[d++] = agg.lat_sum / n_cells;
    out.rows.push_back(std::move(lagged));
  }
  return out;
}

PanelSplit split_periodisation(const Panel& panel, int t, int s) {
  if (panel.rows.empty()) throw std::runtime_error("split_periodisation: empty panel");
  if (s < 1) throw std::invalid_argument("split_periodisation: s must be >= 1");
  const auto [epoch, last_month] = panel.month_range();
  if (t - s - 1 < epoch)
    throw std::runtime_error("split_periodisation: insufficient history (t - s - 1 = " +
                             std::to_string(t - s - 1) + " precedes epoch " +
                             std::to_string(epoch) + ")");
  if (t > last_month)
    throw std::runtime_error("split_periodisation: test month " + std::to_string(t) +
                             " beyond panel end " + std::to_string(last_month));
  PanelSplit split;
  split.periods.pre_train = {epoch, t - s - 1};
  split.periods.calibration = t - s;
  split.periods.train = {epoch, t - s};
  split.periods.test = t;
  split.pre_train = panel.filter_months(epoch, t - s - 1);
  split.calibration = panel.filter_months(t - s, t - s);
  split.train = panel.filter_months(epoch, t - s);
  split.test = panel.filter_months(t, t);
  return split;
}

}  // namespace hhr
