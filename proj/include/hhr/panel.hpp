#ifndef HHR_PANEL_HPP
#define HHR_PANEL_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "hhr/covariate_spec.hpp"

namespace hhr {

/// One (cell, country, month) row. Covariate values are indexed through
/// the owning Panel's covariate_names; NaN marks a missing value.
struct PanelObservation {
  int32_t cell_id = 0;
  int32_t country_id = 0;
  int32_t month = 0;  // months since the panel epoch (Jan 1990 = 0)
  int64_t sb_fatalities = 0;
  int64_t os_fatalities = 0;
  int64_t ns_fatalities = 0;
  double lon = 0.0;
  double lat = 0.0;
  std::vector<double> covariates;
};

struct CountryMonth {
  int32_t country_id = 0;
  int32_t month = 0;
  int64_t total_fatalities = 0;
  bool any_fatality = false;
};

struct Periodisation {
  std::pair<int, int> pre_train;  // inclusive month range
  int calibration = 0;            // single month, t - s
  std::pair<int, int> train;      // pre_train plus the calibration month
  int test = 0;                   // single month t
};

class Panel {
 public:
  std::vector<std::string> covariate_names;
  std::vector<PanelObservation> rows;

  /// Months between a row's covariate values and its month field: 0 for a
  /// raw panel, s after lag_covariates. Rows of a lagged panel carry
  /// covariates measured at month - covariate_lag.
  int covariate_lag = 0;

  int covariate_index(const std::string& name) const;  // -1 if absent
  bool has_covariate(const std::string& name) const { return covariate_index(name) >= 0; }
  double covariate(const PanelObservation& row, int index) const {
    return row.covariates[static_cast<size_t>(index)];
  }

  std::pair<int, int> month_range() const;  // {min, max} month, requires rows
  bool empty() const { return rows.empty(); }
  size_t size() const { return rows.size(); }

  /// Sort by (country, cell, month) and check the cell -> country map is
  /// a function; throws on a cell claimed by two countries.
  void sort_and_validate();

  /// Row indices of the first cell of every (country, month), in
  /// (country, month) order. Used for CM-level stage-1 work.
  std::vector<size_t> country_month_heads() const;

  Panel filter_months(int lo, int hi) const;
};

/// sum-to-CM aggregation of sb_fatalities, sorted by (country, month).
std::vector<CountryMonth> aggregate_country_months(const Panel& panel);

/// CSV schema: header row with cell_id, country_id, month, sb_fatalities,
/// lon, lat (required), os_fatalities, ns_fatalities (optional), and one
/// column per covariate; NA or an empty field marks a missing covariate.
Panel load_panel(const std::filesystem::path& path, const CovariateSpec& schema = {});
void write_panel_csv(const Panel& panel, const std::filesystem::path& path);
std::string panel_to_csv(const Panel& panel);

/// Deterministic fill: per (cell, covariate) last observation carried
/// forward, then the per-country mean, then the global mean. Throws if a
/// covariate is missing everywhere.
Panel impute_missing(const Panel& panel);

/// Applies one covariate transform; throws std::domain_error with the
/// covariate name on log(x <= 0) or log1p(x < 0).
double transform_covariate(double x, TransformKind transform, const std::string& name);

struct ArmsImports {
  double short_term = 0.0;  // log1p of this plus previous year's TIV
  double long_term = 0.0;   // log1p of the TIV sum over years y-10..y-2
  bool complete = true;     // false when a window year is missing
};

/// Short/long-term aggregation of yearly major-conventional-weapons
/// imports for year y; missing window years set complete = false so the
/// caller can route the value through imputation.
ArmsImports aggregate_arms_imports(const std::map<int, double>& yearly_tiv, int year);

/// Months-since-event feature at `month`: log1p(month - last_event_month),
/// or log1p(month - epoch + 1) when no event has happened yet.
double months_since_feature(int month, int last_event_month, int epoch, bool has_event);

/// Names of the feature columns lag_covariates appends.
const std::vector<std::string>& derived_feature_names();

/// Shift covariates back by s months: the row at month m keeps its
/// identifiers and targets but carries the cell's covariates from m - s
/// (plus any per-covariate extra lag from `spec`), and gains the derived
/// event features evaluated at m - s. Rows whose m - s record is absent
/// are dropped; an s exceeding the panel span yields an empty panel and a
/// warning.
Panel lag_covariates(const Panel& panel, int s, const CovariateSpec& spec = {},
                     std::vector<std::string>* warnings = nullptr);

struct PanelSplit {
  Periodisation periods;
  Panel pre_train;
  Panel calibration;
  Panel train;
  Panel test;
};

/// Expanding-window periodisation at evaluation month t with step s:
/// pre-train epoch..t-s-1, calibration {t-s}, train epoch..t-s, test {t}.
/// Throws when t-s-1 precedes the panel epoch.
PanelSplit split_periodisation(const Panel& panel, int t, int s);

}  // namespace hhr

#endif
