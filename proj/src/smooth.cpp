#include "hhr/smooth.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace hhr {

KnotGrid KnotGrid::equispaced(double lo, double hi, int basis_size, int degree,
                              int penalty_order) {
  if (!(hi > lo)) throw std::invalid_argument("KnotGrid: hi must exceed lo");
  if (degree < 1) throw std::invalid_argument("KnotGrid: degree must be >= 1");
  if (basis_size < degree + 1)
    throw std::invalid_argument("KnotGrid: basis_size must be >= degree + 1");
  KnotGrid g;
  g.lo = lo;
  g.hi = hi;
  g.degree = degree;
  g.penalty_order = penalty_order;
  const int n_interior = basis_size - degree - 1;
  const double step = (hi - lo) / (n_interior + 1);
  g.interior.resize(n_interior);
  for (int i = 0; i < n_interior; ++i) g.interior[i] = lo + step * (i + 1);
  return g;
}

std::vector<double> KnotGrid::extended_knots() const {
  for (size_t i = 1; i < interior.size(); ++i)
    if (!(interior[i] > interior[i - 1]))
      throw std::invalid_argument("KnotGrid: interior knots must be strictly increasing");
  if (!interior.empty() && (interior.front() <= lo || interior.back() >= hi))
    throw std::invalid_argument("KnotGrid: interior knots must lie strictly inside (lo, hi)");

  std::vector<double> breaks;
  breaks.reserve(interior.size() + 2);
  breaks.push_back(lo);
  breaks.insert(breaks.end(), interior.begin(), interior.end());
  breaks.push_back(hi);

  const double lstep = breaks.size() > 1 ? breaks[1] - breaks[0] : 1.0;
  const double rstep =
      breaks.size() > 1 ? breaks[breaks.size() - 1] - breaks[breaks.size() - 2] : 1.0;

  std::vector<double> knots;
  knots.reserve(breaks.size() + 2 * degree);
  for (int i = degree; i >= 1; --i) knots.push_back(lo - i * lstep);
  knots.insert(knots.end(), breaks.begin(), breaks.end());
  for (int i = 1; i <= degree; ++i) knots.push_back(hi + i * rstep);
  return knots;
}

Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, const KnotGrid& grid) {
  const std::vector<double> knots = grid.extended_knots();
  const int degree = grid.degree;
  const int K = grid.basis_size();
  const int n = static_cast<int>(x.size());

  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(n, K);
  std::vector<double> left(degree + 1), right(degree + 1), vals(degree + 1);

  for (int r = 0; r < n; ++r) {
    const double xv = x[r];
    if (xv < grid.lo || xv > grid.hi) {
      std::ostringstream msg;
      msg << "bspline_basis: x = " << xv << " outside [" << grid.lo << ", " << grid.hi
          << "]; extrapolation is refused";
      throw std::domain_error(msg.str());
    }
    // Knot span: largest i with knots[i] <= xv < knots[i+1], clamped so
    // that xv == hi falls in the last data interval.
    int span = degree;
    const int last = K - 1;  // last valid span index
    while (span < last && xv >= knots[span + 1]) ++span;

    // Cox-de Boor triangle for the degree+1 basis functions alive on the span.
    vals[0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
      left[j] = xv - knots[span + 1 - j];
      right[j] = knots[span + j] - xv;
      double saved = 0.0;
      for (int k = 0; k < j; ++k) {
        const double tmp = vals[k] / (right[k + 1] + left[j - k]);
        vals[k] = saved + right[k + 1] * tmp;
        saved = left[j - k] * tmp;
      }
      vals[j] = saved;
    }
    for (int j = 0; j <= degree; ++j) B(r, span - degree + j) = vals[j];
  }
  return B;
}

Eigen::MatrixXd difference_matrix(int basis_size, int order) {
  if (order < 1) throw std::invalid_argument("difference_matrix: order must be >= 1");
  if (basis_size <= order)
    throw std::invalid_argument("difference_matrix: need basis_size > order");
  Eigen::MatrixXd D = Eigen::MatrixXd::Identity(basis_size, basis_size);
  for (int d = 0; d < order; ++d) {
    const int rows = basis_size - d;
    Eigen::MatrixXd D1 = Eigen::MatrixXd::Zero(rows - 1, rows);
    for (int i = 0; i + 1 < rows; ++i) {
      D1(i, i) = -1.0;
      D1(i, i + 1) = 1.0;
    }
    D = D1 * D;
  }
  // Flip sign pattern so second differences read (1, -2, 1); S = D^T D is
  // unaffected but tests compare D directly.
  if (order % 2 == 1) D = -D;
  return D;
}

Eigen::MatrixXd difference_penalty(int basis_size, int order) {
  const Eigen::MatrixXd D = difference_matrix(basis_size, order);
  return D.transpose() * D;
}

namespace {

SmoothTerm make_pspline_term(std::string name, SmoothKind kind, const Eigen::VectorXd& x,
                             const KnotGrid& grid) {
  SmoothTerm term;
  term.name = std::move(name);
  term.kind = kind;
  term.basis = bspline_basis(x, grid);
  term.penalty = difference_penalty(grid.basis_size(), grid.penalty_order);
  term.constraint = term.basis.colwise().sum();
  return term;
}

}  // namespace

SmoothTerm tensor_spatial(const Eigen::VectorXd& lon, const Eigen::VectorXd& lat,
                          const KnotGrid& grid_lon, const KnotGrid& grid_lat) {
  if (lon.size() != lat.size())
    throw std::invalid_argument("tensor_spatial: coordinate vectors differ in length");
  if (lon.size() == 0) throw std::invalid_argument("tensor_spatial: empty coordinates");
  const bool lon_degenerate = (lon.maxCoeff() - lon.minCoeff()) <= 0.0;
  const bool lat_degenerate = (lat.maxCoeff() - lat.minCoeff()) <= 0.0;
  if (lon_degenerate && lat_degenerate)
    throw std::invalid_argument("tensor_spatial: all coordinates identical");

  const Eigen::MatrixXd B1 = bspline_basis(lon, grid_lon);
  const Eigen::MatrixXd B2 = bspline_basis(lat, grid_lat);
  const int K1 = static_cast<int>(B1.cols());
  const int K2 = static_cast<int>(B2.cols());
  const int n = static_cast<int>(B1.rows());

  SmoothTerm term;
  term.name = "tensor";
  term.kind = SmoothKind::Tensor;
  term.basis.resize(n, K1 * K2);
  for (int r = 0; r < n; ++r)
    for (int i = 0; i < K1; ++i)
      for (int j = 0; j < K2; ++j) term.basis(r, i * K2 + j) = B1(r, i) * B2(r, j);

  // Kronecker-sum penalty S_lon (x) I + I (x) S_lat in the same
  // column ordering as the basis (lon-major).
  const Eigen::MatrixXd S1 = difference_penalty(K1, grid_lon.penalty_order);
  const Eigen::MatrixXd S2 = difference_penalty(K2, grid_lat.penalty_order);
  term.penalty = Eigen::MatrixXd::Zero(K1 * K2, K1 * K2);
  for (int i = 0; i < K1; ++i)
    for (int k = 0; k < K1; ++k)
      for (int j = 0; j < K2; ++j) term.penalty(i * K2 + j, k * K2 + j) += S1(i, k);
  for (int i = 0; i < K1; ++i)
    for (int j = 0; j < K2; ++j)
      for (int l = 0; l < K2; ++l) term.penalty(i * K2 + j, i * K2 + l) += S2(j, l);
  term.constraint = term.basis.colwise().sum();
  return term;
}

SmoothTerm temporal_trend(const Eigen::VectorXd& t, int basis_size, double horizon) {
  if (basis_size < 5) throw std::invalid_argument("temporal_trend: basis_size must be >= 5");
  if (horizon < 0.0) throw std::invalid_argument("temporal_trend: horizon must be >= 0");
  std::set<double> uniq(t.data(), t.data() + t.size());
  if (static_cast<int>(uniq.size()) < basis_size) {
    std::ostringstream msg;
    msg << "temporal_trend: only " << uniq.size() << " distinct time points for "
        << basis_size << " basis functions; reduce the basis size";
    throw std::invalid_argument(msg.str());
  }
  const KnotGrid grid =
      KnotGrid::equispaced(t.minCoeff(), t.maxCoeff() + horizon, basis_size);
  SmoothTerm term = make_pspline_term("trend", SmoothKind::Temporal, t, grid);
  return term;
}

Eigen::MatrixXd month_dummies(const Eigen::VectorXi& month_of_year) {
  const int n = static_cast<int>(month_of_year.size());
  Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n, 11);
  for (int i = 0; i < n; ++i) {
    const int m = month_of_year[i];
    if (m < 0 || m > 11) throw std::invalid_argument("month_dummies: month of year outside 0..11");
    if (m > 0) M(i, m - 1) = 1.0;
  }
  return M;
}

SmoothTerm random_effect_block(const std::vector<int>& country_id,
                               const std::vector<int>& levels) {
  SmoothTerm term;
  term.name = "country";
  term.kind = SmoothKind::RandomEffect;
  const int n = static_cast<int>(country_id.size());
  const int K = static_cast<int>(levels.size());
  term.basis = Eigen::MatrixXd::Zero(n, K);
  for (int i = 0; i < n; ++i) {
    const auto it = std::lower_bound(levels.begin(), levels.end(), country_id[i]);
    if (it == levels.end() || *it != country_id[i]) {
      std::ostringstream msg;
      msg << "random_effect_block: country " << country_id[i]
          << " was not present at fit time";
      throw std::domain_error(msg.str());
    }
    term.basis(i, static_cast<int>(it - levels.begin())) = 1.0;
  }
  term.penalty = Eigen::MatrixXd::Identity(K, K);
  return term;
}

SmoothTerm absorb_constraint(const SmoothTerm& term) {
  if (term.absorbed)
    throw std::logic_error("absorb_constraint: term '" + term.name + "' already absorbed");
  if (!term.constraint)
    throw std::logic_error("absorb_constraint: term '" + term.name + "' has no constraint");
  const Eigen::RowVectorXd& c = *term.constraint;
  if (c.norm() == 0.0)
    throw std::invalid_argument("absorb_constraint: constraint vector is identically zero");

  // Householder QR of c^T: the last K-1 columns of Q span the null space
  // of c, so basis*Z satisfies the constraint by construction.
  const int K = static_cast<int>(c.size());
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(c.transpose());
  const Eigen::MatrixXd Q = qr.householderQ();
  const Eigen::MatrixXd Z = Q.rightCols(K - 1);

  SmoothTerm out;
  out.name = term.name;
  out.kind = term.kind;
  out.basis = term.basis * Z;
  out.penalty = Z.transpose() * term.penalty * Z;
  out.penalty = 0.5 * (out.penalty + out.penalty.transpose());  // resymmetrize
  out.null_basis = Z;
  out.absorbed = true;
  return out;
}

}  // namespace hhr
