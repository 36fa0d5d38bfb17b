#ifndef HHR_SMOOTH_HPP
#define HHR_SMOOTH_HPP

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

namespace hhr {

/// Breakpoint grid for one B-spline basis. `interior` holds the knots
/// strictly between lo and hi; the boundary knots are extended by
/// `degree` on each side with the adjacent spacing, giving
/// K = interior.size() + degree + 1 basis functions.
struct KnotGrid {
  double lo = 0.0;
  double hi = 1.0;
  std::vector<double> interior;
  int degree = 3;
  int penalty_order = 2;

  int basis_size() const { return static_cast<int>(interior.size()) + degree + 1; }

  /// Equispaced grid over [lo, hi] with the requested number of basis
  /// functions (>= degree + 1).
  static KnotGrid equispaced(double lo, double hi, int basis_size, int degree = 3,
                             int penalty_order = 2);

  /// Full extended knot vector of length basis_size() + degree + 1.
  std::vector<double> extended_knots() const;
};

enum class SmoothKind { PSpline, Temporal, Tensor, RandomEffect, Dummy };

/// One evaluated smooth effect: design columns, quadratic penalty, and an
/// optional sum-to-zero constraint (pre-absorption). After
/// absorb_constraint the columns are reparameterized into the constraint
/// null space and `constraint` is cleared; `null_basis` maps the reduced
/// coefficients back onto the original basis.
struct SmoothTerm {
  std::string name;
  SmoothKind kind = SmoothKind::PSpline;
  Eigen::MatrixXd basis;    // rows x K
  Eigen::MatrixXd penalty;  // K x K, symmetric PSD
  std::optional<Eigen::RowVectorXd> constraint;  // 1 x K, c * beta = 0
  Eigen::MatrixXd null_basis;                    // K_orig x K, set by absorption
  bool absorbed = false;
};

/// Cox-de Boor evaluation of all B-spline basis functions at each x.
/// Rows sum to one (partition of unity). Values outside [grid.lo,
/// grid.hi] are refused with std::domain_error; this library never
/// extrapolates a spline.
Eigen::MatrixXd bspline_basis(const Eigen::VectorXd& x, const KnotGrid& grid);

/// D^T D for the order-th difference operator D of shape (K-order) x K.
/// Rank is K - order; polynomials up to degree order-1 span the null space.
Eigen::MatrixXd difference_penalty(int basis_size, int order);

/// The difference operator itself (exposed for tests and diagnostics).
Eigen::MatrixXd difference_matrix(int basis_size, int order);

/// Bivariate tensor-product P-spline over (lon, lat): row-wise Kronecker
/// of the marginal bases with penalty S_lon (x) I + I (x) S_lat and a
/// sum-to-zero constraint over the supplied rows.
SmoothTerm tensor_spatial(const Eigen::VectorXd& lon, const Eigen::VectorXd& lat,
                          const KnotGrid& grid_lon, const KnotGrid& grid_lat);

/// Cubic P-spline over the month index with a sum-to-zero constraint.
/// `horizon` extends the basis domain past max(t) so that forecasts a few
/// months ahead stay inside the knot range (the difference penalty
/// continues the fit linearly where there is no data).
SmoothTerm temporal_trend(const Eigen::VectorXd& t, int basis_size, double horizon = 0.0);

/// Eleven indicator columns for February..December; January is the
/// reference class. `month_of_year` carries values in 0..11.
Eigen::MatrixXd month_dummies(const Eigen::VectorXi& month_of_year);

/// Indicator block with one column per country and an identity (ridge)
/// penalty; the ridge smoothing parameter plays the role of the inverse
/// random-effect variance. `levels` lists the known country ids; an id
/// outside `levels` throws.
SmoothTerm random_effect_block(const std::vector<int>& country_id,
                               const std::vector<int>& levels);

/// Reparameterize a constrained term into the (K-1)-dimensional null
/// space of its constraint via QR. Fitted values are unchanged; throws if
/// there is no constraint, the constraint is zero, or the term was
/// already absorbed.
SmoothTerm absorb_constraint(const SmoothTerm& term);

}  // namespace hhr

#endif
