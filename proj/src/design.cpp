#include "hhr/design.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hhr {

namespace {

// Fraction of the observed range added on each side of a spline domain;
// absolute month extension of the temporal-trend domain. Forecast inputs
// sit at most one step past the training window, so a modest margin
// keeps them inside the basis while genuine pipeline bugs still throw.
constexpr double kRangePad = 0.15;
constexpr double kTrendHorizon = 24.0;

constexpr int kDefaultSplineBasis = 10;
constexpr int kDefaultTensorBasis = 5;

// Value of a source column for one row, on the transformed scale.
// "lon"/"lat"/"month"/"country" address the row itself.
double source_value(const Panel& panel, const PanelObservation& row, const std::string& src,
                    TransformKind transform, int cov_idx) {
  double raw;
  if (src == "lon") raw = row.lon;
  else if (src == "lat") raw = row.lat;
  else if (src == "month") raw = static_cast<double>(row.month);
  else if (src == "country") raw = static_cast<double>(row.country_id);
  else {
    raw = panel.covariate(row, cov_idx);
    if (std::isnan(raw))
      throw std::runtime_error("covariate '" + src + "' is missing (NaN) for cell " +
                               std::to_string(row.cell_id) + ", month " +
                               std::to_string(row.month) + "; run imputation first");
  }
  return transform_covariate(raw, transform, src);
}

int source_index(const Panel& panel, const std::string& src, const std::string& term) {
  if (src == "lon" || src == "lat" || src == "month" || src == "country") return -1;
  const int idx = panel.covariate_index(src);
  if (idx < 0)
    throw std::runtime_error("term '" + term + "': panel has no covariate column '" + src + "'");
  return idx;
}

Eigen::VectorXd gather_column(const Panel& panel, const std::vector<size_t>& rows,
                              const std::string& src, TransformKind transform,
                              const std::string& term) {
  const int idx = source_index(panel, src, term);
  Eigen::VectorXd v(static_cast<Eigen::Index>(rows.size()));
  for (size_t i = 0; i < rows.size(); ++i)
    v[static_cast<Eigen::Index>(i)] = source_value(panel, panel.rows[rows[i]], src, transform, idx);
  return v;
}

std::vector<size_t> all_rows(const Panel& panel) {
  std::vector<size_t> rows(panel.rows.size());
  for (size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return rows;
}

KnotGrid padded_grid(const Eigen::VectorXd& values, const CovariateSpecEntry& e, int basis_size,
                     double pad_lo, double pad_hi) {
  const double lo = values.minCoeff(), hi = values.maxCoeff();
  if (!(hi > lo))
    throw std::invalid_argument("term '" + e.name +
                                "': source is constant over the panel; cannot place knots");
  return KnotGrid::equispaced(lo - pad_lo, hi + pad_hi, basis_size, e.degree, e.penalty_order);
}

}  // namespace

std::pair<StageDesign, DesignMatrix> StageDesign::build(const Panel& panel,
                                                        const std::vector<size_t>& rows,
                                                        const CovariateSpec& spec, int stage) {
  validate_spec(spec);
  if (rows.empty()) throw std::runtime_error("StageDesign::build: no rows for stage " +
                                             std::to_string(stage));
  const std::vector<size_t> range_rows = all_rows(panel);
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());

  StageDesign design;
  design.stage_ = stage;
  DesignMatrix dm;

  struct Block {
    FittedTerm term;
    TermLayout layout;
    Eigen::MatrixXd cols;
  };
  std::vector<Block> blocks;

  for (const auto& e : spec) {
    if (!e.applies_to_stage(stage)) continue;
    if (e.transform == TransformKind::LogitLinkTarget)
      throw std::invalid_argument("spec entry '" + e.name +
                                  "' carries the target transform and cannot enter the design");
    Block b;
    b.term.spec = e;
    b.layout.name = e.name;
    b.layout.effect = e.effect;
    const auto sources = e.resolved_sources();

    switch (e.effect) {
      case EffectKind::Linear: {
        b.cols = gather_column(panel, rows, sources[0], e.transform, e.name);
        b.layout.size = 1;
        break;
      }
      case EffectKind::Interaction: {
        b.term.factor_transform1 = transform_for(spec, sources[0], stage);
        b.term.factor_transform2 = transform_for(spec, sources[1], stage);
        const Eigen::VectorXd a =
            gather_column(panel, rows, sources[0], b.term.factor_transform1, e.name);
        const Eigen::VectorXd c =
            gather_column(panel, rows, sources[1], b.term.factor_transform2, e.name);
        b.cols = a.cwiseProduct(c);
        b.layout.size = 1;
        break;
      }
      case EffectKind::DummySet: {
        Eigen::VectorXi moy(n);
        for (Eigen::Index i = 0; i < n; ++i)
          moy[i] = ((panel.rows[rows[static_cast<size_t>(i)]].month % 12) + 12) % 12;
        b.cols = month_dummies(moy);
        b.layout.size = 11;
        break;
      }
      case EffectKind::PSpline: {
        const int K = e.basis_size > 0 ? e.basis_size : kDefaultSplineBasis;
        const Eigen::VectorXd full = gather_column(panel, range_rows, sources[0], e.transform, e.name);
        const double pad = kRangePad * (full.maxCoeff() - full.minCoeff());
        b.term.grid = padded_grid(full, e, K, pad, pad);
        const Eigen::VectorXd x = gather_column(panel, rows, sources[0], e.transform, e.name);
        SmoothTerm st;
        st.name = e.name;
        st.kind = SmoothKind::PSpline;
        st.basis = bspline_basis(x, b.term.grid);
        st.penalty = difference_penalty(K, e.penalty_order);
        st.constraint = st.basis.colwise().sum();
        st = absorb_constraint(st);
        b.cols = st.basis;
        b.layout.size = static_cast<int>(st.basis.cols());
        b.layout.penalized = true;
        b.layout.penalty = st.penalty;
        b.term.null_basis = st.null_basis;
        break;
      }
      case EffectKind::TemporalTrend: {
        const int K = e.basis_size > 0 ? e.basis_size : kDefaultSplineBasis;
        const Eigen::VectorXd t_all = gather_column(panel, range_rows, sources[0], e.transform, e.name);
        const Eigen::VectorXd t_rows = gather_column(panel, rows, sources[0], e.transform, e.name);
        std::set<double> uniq(t_rows.data(), t_rows.data() + t_rows.size());
        if (static_cast<int>(uniq.size()) < K)
          throw std::invalid_argument("term '" + e.name + "': only " +
                                      std::to_string(uniq.size()) + " distinct time points for " +
                                      std::to_string(K) + " basis functions; reduce k");
        b.term.grid = KnotGrid::equispaced(t_all.minCoeff(), t_all.maxCoeff() + kTrendHorizon, K,
                                           e.degree, e.penalty_order);
        SmoothTerm st;
        st.name = e.name;
        st.kind = SmoothKind::Temporal;
        st.basis = bspline_basis(t_rows, b.term.grid);
        st.penalty = difference_penalty(K, e.penalty_order);
        st.constraint = st.basis.colwise().sum();
        st = absorb_constraint(st);
        b.cols = st.basis;
        b.layout.size = static_cast<int>(st.basis.cols());
        b.layout.penalized = true;
        b.layout.penalty = st.penalty;
        b.term.null_basis = st.null_basis;
        break;
      }
      case EffectKind::TensorSpatial: {
        const int K = e.basis_size > 0 ? e.basis_size : kDefaultTensorBasis;
        const Eigen::VectorXd lon_all = gather_column(panel, range_rows, sources[0], e.transform, e.name);
        const Eigen::VectorXd lat_all = gather_column(panel, range_rows, sources[1], e.transform, e.name);
        const double pad1 = std::max(kRangePad * (lon_all.maxCoeff() - lon_all.minCoeff()), 0.25);
        const double pad2 = std::max(kRangePad * (lat_all.maxCoeff() - lat_all.minCoeff()), 0.25);
        b.term.grid = KnotGrid::equispaced(lon_all.minCoeff() - pad1, lon_all.maxCoeff() + pad1, K,
                                           e.degree, e.penalty_order);
        b.term.grid2 = KnotGrid::equispaced(lat_all.minCoeff() - pad2, lat_all.maxCoeff() + pad2, K,
                                            e.degree, e.penalty_order);
        const Eigen::VectorXd lon = gather_column(panel, rows, sources[0], e.transform, e.name);
        const Eigen::VectorXd lat = gather_column(panel, rows, sources[1], e.transform, e.name);
        SmoothTerm st = tensor_spatial(lon, lat, b.term.grid, b.term.grid2);
        st.name = e.name;
        st = absorb_constraint(st);
        b.cols = st.basis;
        b.layout.size = static_cast<int>(st.basis.cols());
        b.layout.penalized = true;
        b.layout.penalty = st.penalty;
        b.term.null_basis = st.null_basis;
        break;
      }
      case EffectKind::RandomEffect: {
        std::set<int> level_set;
        for (size_t r : rows) level_set.insert(panel.rows[r].country_id);
        b.term.levels.assign(level_set.begin(), level_set.end());
        std::vector<int> ids;
        ids.reserve(rows.size());
        for (size_t r : rows) ids.push_back(panel.rows[r].country_id);
        SmoothTerm st = random_effect_block(ids, b.term.levels);
        b.cols = st.basis;
        b.layout.size = static_cast<int>(st.basis.cols());
        b.layout.penalized = true;
        b.layout.penalty = st.penalty;
        break;
      }
    }
    blocks.push_back(std::move(b));
  }

  int ncols = 1;  // intercept
  for (const auto& b : blocks) ncols += b.layout.size;
  dm.X.resize(n, ncols);
  dm.X.col(0).setOnes();

  TermLayout intercept;
  intercept.name = "(intercept)";
  intercept.effect = EffectKind::Linear;
  intercept.start = 0;
  intercept.size = 1;
  dm.layout.push_back(intercept);

  int at = 1;
  for (auto& b : blocks) {
    b.layout.start = at;
    dm.X.block(0, at, n, b.layout.size) = b.cols;
    at += b.layout.size;
    dm.layout.push_back(b.layout);
    design.terms_.push_back(std::move(b.term));
  }
  design.layout_ = dm.layout;
  return {std::move(design), std::move(dm)};
}

Eigen::MatrixXd StageDesign::evaluate(const Panel& panel, const std::vector<size_t>& rows) const {
  if (layout_.empty()) throw std::logic_error("StageDesign::evaluate before build");
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  int ncols = 0;
  for (const auto& l : layout_) ncols += l.size;
  Eigen::MatrixXd X(n, ncols);
  X.col(0).setOnes();

  for (size_t k = 0; k < terms_.size(); ++k) {
    const FittedTerm& term = terms_[k];
    const TermLayout& lay = layout_[k + 1];
    const auto& e = term.spec;
    const auto sources = e.resolved_sources();
    auto block = X.block(0, lay.start, n, lay.size);

    switch (e.effect) {
      case EffectKind::Linear:
        block = gather_column(panel, rows, sources[0], e.transform, e.name);
        break;
      case EffectKind::Interaction: {
        const Eigen::VectorXd a =
            gather_column(panel, rows, sources[0], term.factor_transform1, e.name);
        const Eigen::VectorXd c =
            gather_column(panel, rows, sources[1], term.factor_transform2, e.name);
        block = a.cwiseProduct(c);
        break;
      }
      case EffectKind::DummySet: {
        Eigen::VectorXi moy(n);
        for (Eigen::Index i = 0; i < n; ++i)
          moy[i] = ((panel.rows[rows[static_cast<size_t>(i)]].month % 12) + 12) % 12;
        block = month_dummies(moy);
        break;
      }
      case EffectKind::PSpline:
      case EffectKind::TemporalTrend: {
        const Eigen::VectorXd x = gather_column(panel, rows, sources[0], e.transform, e.name);
        block = bspline_basis(x, term.grid) * term.null_basis;
        break;
      }
      case EffectKind::TensorSpatial: {
        const Eigen::VectorXd lon = gather_column(panel, rows, sources[0], e.transform, e.name);
        const Eigen::VectorXd lat = gather_column(panel, rows, sources[1], e.transform, e.name);
        SmoothTerm st = tensor_spatial(lon, lat, term.grid, term.grid2);
        block = st.basis * term.null_basis;
        break;
      }
      case EffectKind::RandomEffect: {
        std::vector<int> ids;
        ids.reserve(rows.size());
        for (size_t r : rows) ids.push_back(panel.rows[r].country_id);
        block = random_effect_block(ids, term.levels).basis;
        break;
      }
    }
  }
  return X;
}

Level1Rows stage_weights_level1(const Panel& panel, const CovariateSpec& spec) {
  // Country-month totals for targets and the constancy check.
  std::map<std::pair<int32_t, int32_t>, int64_t> totals;
  for (const auto& r : panel.rows) totals[{r.country_id, r.month}] += r.sb_fatalities;

  // Every stage-1 source column must be constant within each CM; a
  // cell-varying one means the spec wired a cell-level covariate into the
  // country stage.
  std::vector<std::pair<std::string, int>> checked;  // (source, covariate index)
  for (const auto& e : spec) {
    if (!e.applies_to_stage(1)) continue;
    for (const auto& src : e.resolved_sources()) {
      if (src == "month" || src == "country") continue;
      if (src == "lon" || src == "lat")
        throw std::runtime_error("stage 1 uses cell coordinates '" + src +
                                 "'; use the country centroid columns cm_lon/cm_lat");
      checked.emplace_back(src, panel.covariate_index(src));
      if (checked.back().second < 0)
        throw std::runtime_error("stage 1 source '" + src + "' not present in the panel");
    }
  }
  std::map<std::pair<int32_t, int32_t>, size_t> head;
  for (size_t i = 0; i < panel.rows.size(); ++i) {
    const auto& r = panel.rows[i];
    const auto key = std::make_pair(r.country_id, r.month);
    const auto [it, inserted] = head.emplace(key, i);
    if (!inserted) {
      const auto& first = panel.rows[it->second];
      for (const auto& [src, idx] : checked) {
        const double a = panel.covariate(first, idx);
        const double b = panel.covariate(r, idx);
        if (!(a == b) && !(std::isnan(a) && std::isnan(b)))
          throw std::runtime_error("stage-1 covariate '" + src +
                                   "' varies within country " + std::to_string(r.country_id) +
                                   ", month " + std::to_string(r.month));
      }
    }
  }

  Level1Rows out;
  out.rows.reserve(head.size());
  for (const auto& [key, idx] : head) out.rows.push_back(idx);
  out.weights = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(out.rows.size()));
  out.any_fatality.resize(static_cast<Eigen::Index>(out.rows.size()));
  for (size_t i = 0; i < out.rows.size(); ++i) {
    const auto& r = panel.rows[out.rows[i]];
    out.any_fatality[static_cast<Eigen::Index>(i)] =
        totals.at({r.country_id, r.month}) > 0 ? 1.0 : 0.0;
  }
  return out;
}

Eigen::VectorXd level1_cell_weights(const Panel& panel) {
  std::map<int32_t, std::set<int32_t>> cells;
  for (const auto& r : panel.rows) cells[r.country_id].insert(r.cell_id);
  Eigen::VectorXd w(static_cast<Eigen::Index>(panel.rows.size()));
  for (size_t i = 0; i < panel.rows.size(); ++i)
    w[static_cast<Eigen::Index>(i)] =
        1.0 / static_cast<double>(cells.at(panel.rows[i].country_id).size());
  return w;
}

}  // namespace hhr
