#include "hhr/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace hhr {

namespace {

int floor_div(int a, int b) { return (a >= 0) ? a / b : -((-a + b - 1) / b); }

const std::set<std::string>& country_level_names() {
  static const std::set<std::string> names = {
      "population",   "gdp",          "polity",       "mil_exp",     "st_mcw",
      "lt_mcw",       "seasonal_sin", "seasonal_cos", "cm_sb_last",  "cm_os_last",
      "cm_ns_last",   "cm_sb_count_last", "cm_since_sb", "cm_since_os", "cm_since_ns",
      "cm_lon",       "cm_lat"};
  return names;
}

// Last event month at or before m, or INT_MIN if none.
int last_event_at_or_before(const std::vector<int>& events, int m) {
  const auto it = std::upper_bound(events.begin(), events.end(), m);
  if (it == events.begin()) return std::numeric_limits<int>::min();
  return *(it - 1);
}

// Months-since feature on the simulator side; the no-event ramp is
// clamped at zero for measurement months before the panel epoch.
double sim_since(const std::vector<int>& events, int mm) {
  const int last = last_event_at_or_before(events, mm);
  if (last == std::numeric_limits<int>::min())
    return std::log1p(static_cast<double>(std::max(mm + 1, 0)));
  return std::log1p(static_cast<double>(mm - last));
}

struct CellState {
  double lon = 0.0, lat = 0.0;
  double dist_capital = 0.0, nightlights = 0.0, infant_mortality = 0.0;
  std::vector<double> unrest;                  // indexed by month + dgp_lag
  std::vector<int64_t> sb, os, ns;             // realized counts for months >= 0
  std::vector<int> sb_events, os_events, ns_events;  // sorted event months
};

struct CountryState {
  double population = 0.0, gdp = 0.0, polity = 0.0, mil_exp = 0.0;
  std::vector<double> st_mcw, lt_mcw;  // indexed by month + dgp_lag
  double lon = 0.0, lat = 0.0;         // centroid
  std::vector<int64_t> sb_tot, os_tot, ns_tot;
  std::vector<int> sb_events, os_events, ns_events;
};

}  // namespace

SimConfig default_sim_config() {
  SimConfig cfg;
  cfg.stage1.intercept = -0.6;
  cfg.stage1.coef = {{"population", 0.35}, {"gdp", -0.30},    {"st_mcw", 0.35},
                     {"lt_mcw", -0.15},    {"cm_sb_last", 1.1}};
  cfg.stage2.intercept = -1.4;
  cfg.stage2.coef = {{"unrest", 0.7},  {"nightlights", 0.6}, {"dist_capital", -0.35},
                     {"sb_last", 1.0}, {"st_mcw", -0.1}};
  cfg.stage3.intercept = 1.1;
  cfg.stage3.coef = {{"lt_mcw", 0.22}, {"dist_capital", 0.12}, {"unrest", 0.30},
                     {"since_sb", -0.25}};
  return cfg;
}

Panel simulate_panel(const SimConfig& cfg) {
  if (cfg.n_countries < 1 || cfg.cells_per_country < 1 || cfg.n_months < 1)
    throw std::invalid_argument("simulate_panel: dimensions must be positive");
  if (cfg.dgp_lag < 1) throw std::invalid_argument("simulate_panel: dgp_lag must be >= 1");
  for (const auto& [name, coef] : cfg.stage1.coef)
    if (!country_level_names().count(name))
      throw std::invalid_argument("simulate_panel: stage-1 truth uses cell-level covariate '" +
                                  name + "'");

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> stdnorm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  const int lag = cfg.dgp_lag;
  const int T = cfg.n_months;
  const int nc = cfg.n_countries;
  const int ncell = cfg.cells_per_country;
  const int grid_side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(ncell))));

  std::vector<CountryState> countries(nc);
  std::vector<std::vector<CellState>> cells(nc, std::vector<CellState>(ncell));

  // Static structure: country blocks on a coarse lattice, cells on a 0.5
  // degree grid inside the block, capital at the block origin.
  for (int j = 0; j < nc; ++j) {
    auto& c = countries[j];
    c.population = std::exp(stdnorm(rng) * 0.6 + 16.0);
    c.gdp = std::exp(stdnorm(rng) * 0.8 + 9.0);
    c.polity = std::floor(unif(rng) * 21.0) - 10.0;
    c.mil_exp = std::exp(stdnorm(rng) * 0.7 + 6.0);
    c.sb_tot.assign(T, 0);
    c.os_tot.assign(T, 0);
    c.ns_tot.assign(T, 0);
    const double base_lon = 10.0 * (j % 8);
    const double base_lat = 10.0 * (j / 8);
    double lon_sum = 0.0, lat_sum = 0.0;
    for (int i = 0; i < ncell; ++i) {
      auto& cell = cells[j][i];
      cell.lon = base_lon + 0.5 * (i % grid_side);
      cell.lat = base_lat + 0.5 * (i / grid_side);
      cell.dist_capital = std::hypot(cell.lon - base_lon, cell.lat - base_lat);
      cell.nightlights = unif(rng);
      cell.infant_mortality = 20.0 + 100.0 * unif(rng);
      cell.sb.assign(T, 0);
      cell.os.assign(T, 0);
      cell.ns.assign(T, 0);
      lon_sum += cell.lon;
      lat_sum += cell.lat;
    }
    c.lon = lon_sum / ncell;
    c.lat = lat_sum / ncell;
  }

  // Yearly arms-import series, aggregated to monthly short/long-term
  // covariates on the log1p scale.
  const int year_lo = 1990 + floor_div(-lag, 12) - 10;
  const int year_hi = 1990 + floor_div(T - 1, 12);
  for (int j = 0; j < nc; ++j) {
    std::map<int, double> tiv;
    for (int y = year_lo; y <= year_hi; ++y)
      tiv[y] = (unif(rng) < 0.25) ? 0.0 : std::exp(stdnorm(rng) * 1.0 + std::log(50.0));
    auto& c = countries[j];
    c.st_mcw.assign(T + lag, 0.0);
    c.lt_mcw.assign(T + lag, 0.0);
    for (int m = -lag; m < T; ++m) {
      const ArmsImports a = aggregate_arms_imports(tiv, 1990 + floor_div(m, 12));
      c.st_mcw[m + lag] = a.short_term;
      c.lt_mcw[m + lag] = a.long_term;
    }
  }

  // AR(1) unrest per cell, from a stationary start.
  const double innov_sd =
      cfg.unrest_sd * std::sqrt(std::max(0.0, 1.0 - cfg.unrest_rho * cfg.unrest_rho));
  for (int j = 0; j < nc; ++j)
    for (int i = 0; i < ncell; ++i) {
      auto& u = cells[j][i].unrest;
      u.assign(T + lag, 0.0);
      u[0] = stdnorm(rng) * cfg.unrest_sd;
      for (int m = 1; m < T + lag; ++m) u[m] = cfg.unrest_rho * u[m - 1] + innov_sd * stdnorm(rng);
    }

  auto raw_value = [&](int j, int i, int mm, const std::string& name) -> double {
    const auto& c = countries[j];
    const auto& cell = cells[j][i];
    if (name == "population") return c.population;
    if (name == "gdp") return c.gdp;
    if (name == "polity") return c.polity;
    if (name == "mil_exp") return c.mil_exp;
    if (name == "st_mcw") return c.st_mcw[mm + lag];
    if (name == "lt_mcw") return c.lt_mcw[mm + lag];
    if (name == "nightlights") return cell.nightlights;
    if (name == "infant_mortality") return cell.infant_mortality;
    if (name == "dist_capital") return cell.dist_capital;
    if (name == "unrest") return cell.unrest[mm + lag];
    if (name == "seasonal_sin") return std::sin(2.0 * M_PI * (((mm % 12) + 12) % 12) / 12.0);
    if (name == "seasonal_cos") return std::cos(2.0 * M_PI * (((mm % 12) + 12) % 12) / 12.0);
    const bool mm_valid = mm >= 0;
    if (name == "sb_last") return (mm_valid && cell.sb[mm] > 0) ? 1.0 : 0.0;
    if (name == "os_last") return (mm_valid && cell.os[mm] > 0) ? 1.0 : 0.0;
    if (name == "ns_last") return (mm_valid && cell.ns[mm] > 0) ? 1.0 : 0.0;
    if (name == "sb_count_last") return mm_valid ? static_cast<double>(cell.sb[mm]) : 0.0;
    if (name == "since_sb") return sim_since(cell.sb_events, mm);
    if (name == "since_os") return sim_since(cell.os_events, mm);
    if (name == "since_ns") return sim_since(cell.ns_events, mm);
    if (name == "cm_sb_last") return (mm_valid && c.sb_tot[mm] > 0) ? 1.0 : 0.0;
    if (name == "cm_os_last") return (mm_valid && c.os_tot[mm] > 0) ? 1.0 : 0.0;
    if (name == "cm_ns_last") return (mm_valid && c.ns_tot[mm] > 0) ? 1.0 : 0.0;
    if (name == "cm_sb_count_last") return mm_valid ? static_cast<double>(c.sb_tot[mm]) : 0.0;
    if (name == "cm_since_sb") return sim_since(c.sb_events, mm);
    if (name == "cm_since_os") return sim_since(c.os_events, mm);
    if (name == "cm_since_ns") return sim_since(c.ns_events, mm);
    if (name == "cm_lon") return c.lon;
    if (name == "cm_lat") return c.lat;
    throw std::invalid_argument("simulate_panel: unknown covariate '" + name + "' in the truth");
  };

  auto eta_at = [&](const StageTruth& truth, int j, int i, int t) -> double {
    const int mm = t - lag;
    double eta = truth.intercept;
    for (const auto& [name, coef] : truth.coef) {
      const double raw = raw_value(j, i, mm, name);
      const double v = transform_covariate(raw, transform_for(cfg.transform_spec, name, 0), name);
      eta += coef * v;
    }
    if (!std::isfinite(eta)) {
      std::ostringstream msg;
      msg << "simulate_panel: non-finite linear predictor for country " << (j + 1) << ", cell "
          << i << ", month " << t;
      throw std::runtime_error(msg.str());
    }
    return eta;
  };

  auto draw_ztpoisson = [&](double lambda) -> int64_t {
    std::poisson_distribution<int64_t> pois(lambda);
    for (int attempt = 0; attempt < 1000000; ++attempt) {
      const int64_t y = pois(rng);
      if (y > 0) return y;
    }
    throw std::runtime_error("simulate_panel: zero-truncated rejection stalled at lambda = " +
                             std::to_string(lambda));
  };

  // Forward sweep over months; everything drawn at month t depends on
  // covariates and history at t - lag only.
  for (int t = 0; t < T; ++t) {
    for (int j = 0; j < nc; ++j) {
      auto& c = countries[j];
      // Background one-sided and non-state events (covariate machinery
      // only, independent of the hurdle process).
      for (int i = 0; i < ncell; ++i) {
        auto& cell = cells[j][i];
        if (unif(rng) < 0.03) {
          cell.os[t] = 1 + std::poisson_distribution<int64_t>(1.0)(rng);
          c.os_tot[t] += cell.os[t];
        }
        if (unif(rng) < 0.03) {
          cell.ns[t] = 1 + std::poisson_distribution<int64_t>(1.0)(rng);
          c.ns_tot[t] += cell.ns[t];
        }
      }

      const double pi1 = 1.0 / (1.0 + std::exp(-eta_at(cfg.stage1, j, 0, t)));
      const bool incidence = unif(rng) < pi1;
      if (incidence) {
        std::vector<double> pi2(ncell), lambda(ncell);
        for (int i = 0; i < ncell; ++i) {
          pi2[i] = 1.0 / (1.0 + std::exp(-eta_at(cfg.stage2, j, i, t)));
          lambda[i] = std::exp(eta_at(cfg.stage3, j, i, t));
        }
        // Gates conditioned on at least one positive cell, by rejection.
        std::vector<bool> gate(ncell, false);
        bool any = false;
        for (int attempt = 0; attempt < 100000 && !any; ++attempt) {
          for (int i = 0; i < ncell; ++i) {
            gate[i] = unif(rng) < pi2[i];
            any = any || gate[i];
          }
        }
        if (!any)
          throw std::runtime_error(
              "simulate_panel: could not draw a consistent positive country-month (stage-2 "
              "probabilities too small)");
        for (int i = 0; i < ncell; ++i)
          if (gate[i]) {
            const int64_t y = draw_ztpoisson(lambda[i]);
            cells[j][i].sb[t] = y;
            c.sb_tot[t] += y;
          }
      }
      for (int i = 0; i < ncell; ++i) {
        auto& cell = cells[j][i];
        if (cell.sb[t] > 0) cell.sb_events.push_back(t);
        if (cell.os[t] > 0) cell.os_events.push_back(t);
        if (cell.ns[t] > 0) cell.ns_events.push_back(t);
      }
      if (c.sb_tot[t] > 0) c.sb_events.push_back(t);
      if (c.os_tot[t] > 0) c.os_events.push_back(t);
      if (c.ns_tot[t] > 0) c.ns_events.push_back(t);
    }
  }

  Panel panel;
  panel.covariate_names = {"population", "gdp",          "polity",       "mil_exp",
                           "st_mcw",     "lt_mcw",       "nightlights",  "infant_mortality",
                           "dist_capital", "unrest",     "seasonal_sin", "seasonal_cos"};
  panel.rows.reserve(static_cast<size_t>(nc) * ncell * T);
  for (int j = 0; j < nc; ++j)
    for (int i = 0; i < ncell; ++i)
      for (int t = 0; t < T; ++t) {
        const auto& c = countries[j];
        const auto& cell = cells[j][i];
        PanelObservation row;
        row.cell_id = j * ncell + i + 1;
        row.country_id = j + 1;
        row.month = t;
        row.sb_fatalities = cell.sb[t];
        row.os_fatalities = cell.os[t];
        row.ns_fatalities = cell.ns[t];
        row.lon = cell.lon;
        row.lat = cell.lat;
        row.covariates = {c.population,        c.gdp,
                          c.polity,            c.mil_exp,
                          c.st_mcw[t + lag],   c.lt_mcw[t + lag],
                          cell.nightlights,    cell.infant_mortality,
                          cell.dist_capital,   cell.unrest[t + lag],
                          std::sin(2.0 * M_PI * (t % 12) / 12.0),
                          std::cos(2.0 * M_PI * (t % 12) / 12.0)};
        panel.rows.push_back(std::move(row));
      }
  panel.sort_and_validate();
  return panel;
}

double truth_eta(const SimConfig& cfg, const StageTruth& truth, const Panel& lagged,
                 const PanelObservation& row) {
  double eta = truth.intercept;
  for (const auto& [name, coef] : truth.coef) {
    const int idx = lagged.covariate_index(name);
    if (idx < 0) throw std::invalid_argument("truth_eta: lagged panel lacks column '" + name + "'");
    const double raw = lagged.covariate(row, idx);
    eta += coef * transform_covariate(raw, transform_for(cfg.transform_spec, name, 0), name);
  }
  return eta;
}

}  // namespace hhr
