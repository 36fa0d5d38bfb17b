#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>
#include <random>

#include "hhr/smooth.hpp"

using namespace hhr;

namespace {

// Independent textbook Cox-de Boor recursion, deliberately naive.
double bspline_naive(const std::vector<double>& knots, int i, int degree, double x) {
  if (degree == 0) {
    // Half-open intervals, closed at the very end of the domain.
    if (knots[i] <= x && x < knots[i + 1]) return 1.0;
    return 0.0;
  }
  double left = 0.0, right = 0.0;
  const double dl = knots[i + degree] - knots[i];
  const double dr = knots[i + degree + 1] - knots[i + 1];
  if (dl > 0.0) left = (x - knots[i]) / dl * bspline_naive(knots, i, degree - 1, x);
  if (dr > 0.0) right = (knots[i + degree + 1] - x) / dr * bspline_naive(knots, i + 1, degree - 1, x);
  return left + right;
}

int numerical_rank(const Eigen::MatrixXd& m) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  const double tol = 1e-9 * sv[0];
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > tol) ++rank;
  return rank;
}

}  // namespace

TEST_CASE("b-spline basis is a partition of unity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int degree : {1, 2, 3}) {
    const KnotGrid grid = KnotGrid::equispaced(-2.0, 5.0, 8 + degree, degree);
    Eigen::VectorXd x(40);
    for (int i = 0; i < 40; ++i) x[i] = -2.0 + 7.0 * unif(rng);
    const Eigen::MatrixXd B = bspline_basis(x, grid);
    CHECK(B.cols() == 8 + degree);
    for (Eigen::Index r = 0; r < B.rows(); ++r) {
      CHECK(B.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(B.row(r).minCoeff() >= 0.0);
    }
  }
}

TEST_CASE("b-spline matches the independent recursion oracle") {
  // Ten equispaced knots on [0, 1]: eight interior, cubic, K = 12.
  KnotGrid grid;
  grid.lo = 0.0;
  grid.hi = 1.0;
  grid.degree = 3;
  for (int i = 1; i <= 8; ++i) grid.interior.push_back(i / 9.0);
  REQUIRE(grid.basis_size() == 12);

  const std::vector<double> knots = grid.extended_knots();
  for (double xv : {0.5, 0.01, 0.37, 0.93}) {
    Eigen::VectorXd x(1);
    x[0] = xv;
    const Eigen::MatrixXd B = bspline_basis(x, grid);
    for (int k = 0; k < 12; ++k)
      CHECK(B(0, k) == doctest::Approx(bspline_naive(knots, k, 3, xv)).epsilon(1e-12));
  }
}

TEST_CASE("degree-1 basis is one at its own interior knot") {
  KnotGrid grid;
  grid.lo = 0.0;
  grid.hi = 4.0;
  grid.degree = 1;
  grid.interior = {1.0, 2.0, 3.0};
  Eigen::VectorXd x(1);
  x[0] = 2.0;
  const Eigen::MatrixXd B = bspline_basis(x, grid);
  int ones = 0;
  for (Eigen::Index k = 0; k < B.cols(); ++k) {
    if (B(0, k) == doctest::Approx(1.0)) ++ones;
    else CHECK(B(0, k) == doctest::Approx(0.0));
  }
  CHECK(ones == 1);
}

TEST_CASE("extrapolation is refused") {
  const KnotGrid grid = KnotGrid::equispaced(0.0, 1.0, 8);
  Eigen::VectorXd x(1);
  x[0] = 1.2;
  CHECK_THROWS_AS(bspline_basis(x, grid), std::domain_error);
  x[0] = -0.001;
  CHECK_THROWS_AS(bspline_basis(x, grid), std::domain_error);
}

TEST_CASE("difference penalty") {
  SUBCASE("second differences, K = 4") {
    const Eigen::MatrixXd D = difference_matrix(4, 2);
    Eigen::MatrixXd expected(2, 4);
    expected << 1, -2, 1, 0, 0, 1, -2, 1;
    CHECK((D - expected).norm() == doctest::Approx(0.0));
    const Eigen::MatrixXd S = difference_penalty(4, 2);
    CHECK((S - D.transpose() * D).norm() == doctest::Approx(0.0));
  }
  SUBCASE("constants are in the null space") {
    for (int order : {1, 2, 3}) {
      const Eigen::MatrixXd S = difference_penalty(9, order);
      CHECK((S * Eigen::VectorXd::Ones(9)).norm() == doctest::Approx(0.0).epsilon(1e-12));
    }
  }
  SUBCASE("rank is K minus the order") {
    CHECK(numerical_rank(difference_penalty(12, 2)) == 10);
    CHECK(numerical_rank(difference_penalty(12, 1)) == 11);
  }
  SUBCASE("contract violations") {
    CHECK_THROWS_AS(difference_penalty(3, 3), std::invalid_argument);
    CHECK_THROWS_AS(difference_penalty(5, 0), std::invalid_argument);
  }
}

TEST_CASE("tensor product spatial smooth") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd lon(30), lat(30);
  for (int i = 0; i < 30; ++i) {
    lon[i] = 10.0 + 3.0 * unif(rng);
    lat[i] = -5.0 + 2.0 * unif(rng);
  }
  const KnotGrid glon = KnotGrid::equispaced(10.0, 13.0, 5);
  const KnotGrid glat = KnotGrid::equispaced(-5.0, -3.0, 6);
  const SmoothTerm term = tensor_spatial(lon, lat, glon, glat);

  CHECK(term.basis.cols() == 30);  // 5 x 6 marginal widths
  for (Eigen::Index r = 0; r < term.basis.rows(); ++r)
    CHECK(term.basis.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));

  SUBCASE("penalty is PSD with the constant in its null space") {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(term.penalty);
    CHECK(eig.eigenvalues().minCoeff() >= -1e-10);
    CHECK((term.penalty * Eigen::VectorXd::Ones(30)).norm() ==
          doctest::Approx(0.0).epsilon(1e-10));
  }
  SUBCASE("degenerate coordinates are refused") {
    const Eigen::VectorXd flat = Eigen::VectorXd::Constant(30, 1.0);
    CHECK_THROWS_AS(tensor_spatial(flat, flat, glon, glat), std::invalid_argument);
  }
}

TEST_CASE("temporal trend term") {
  Eigen::VectorXd t(60);
  for (int i = 0; i < 60; ++i) t[i] = i;
  const SmoothTerm term = temporal_trend(t, 10);
  CHECK(term.basis.rows() == 60);
  CHECK(term.basis.cols() == 10);
  CHECK(numerical_rank(term.penalty) == 8);
  CHECK(term.kind == SmoothKind::Temporal);

  SUBCASE("delegates to the basis evaluation") {
    const KnotGrid grid = KnotGrid::equispaced(0.0, 59.0, 10);
    CHECK((term.basis - bspline_basis(t, grid)).norm() == doctest::Approx(0.0));
  }
  SUBCASE("degenerate and undersized inputs") {
    CHECK_THROWS_AS(temporal_trend(Eigen::VectorXd::Constant(20, 3.0), 10),
                    std::invalid_argument);
    Eigen::VectorXd few(6);
    few << 0, 1, 2, 3, 4, 5;
    CHECK_THROWS_AS(temporal_trend(few, 10), std::invalid_argument);
  }
}

TEST_CASE("month dummies") {
  SUBCASE("january is the reference class") {
    const Eigen::MatrixXd M = month_dummies(Eigen::VectorXi::Zero(5));
    CHECK(M.rows() == 5);
    CHECK(M.cols() == 11);
    CHECK(M.norm() == 0.0);
  }
  SUBCASE("march hits the second column") {
    Eigen::VectorXi moy(1);
    moy[0] = 2;
    const Eigen::MatrixXd M = month_dummies(moy);
    CHECK(M(0, 1) == 1.0);
    CHECK(M.sum() == 1.0);
  }
  SUBCASE("24 consecutive months give column sums of two") {
    Eigen::VectorXi moy(24);
    for (int i = 0; i < 24; ++i) moy[i] = i % 12;
    const Eigen::MatrixXd M = month_dummies(moy);
    for (Eigen::Index c = 0; c < 11; ++c) CHECK(M.col(c).sum() == doctest::Approx(2.0));
  }
}

TEST_CASE("random effect block") {
  const std::vector<int> levels = {1, 2, 3};
  const SmoothTerm term = random_effect_block({1, 2, 2, 3}, levels);
  CHECK(term.basis.rows() == 4);
  CHECK(term.basis.cols() == 3);
  for (Eigen::Index r = 0; r < 4; ++r) CHECK(term.basis.row(r).sum() == doctest::Approx(1.0));
  CHECK((term.penalty - Eigen::MatrixXd::Identity(3, 3)).norm() == 0.0);
  CHECK_THROWS_AS(random_effect_block({1, 4}, levels), std::domain_error);
}

TEST_CASE("constraint absorption") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd x(50), y(50);
  for (int i = 0; i < 50; ++i) {
    x[i] = unif(rng) * 10.0;
    y[i] = std::sin(x[i]) + 0.1 * unif(rng);
  }
  const KnotGrid grid = KnotGrid::equispaced(0.0, 10.0, 10);
  SmoothTerm term;
  term.basis = bspline_basis(x, grid);
  term.penalty = difference_penalty(10, 2);
  term.constraint = term.basis.colwise().sum();

  const SmoothTerm absorbed = absorb_constraint(term);
  CHECK(absorbed.basis.cols() == 9);

  SUBCASE("columns sum to zero over the rows") {
    for (Eigen::Index c = 0; c < absorbed.basis.cols(); ++c)
      CHECK(absorbed.basis.col(c).sum() == doctest::Approx(0.0).epsilon(1e-9));
  }

  SUBCASE("fitted values agree with the Lagrange-multiplier oracle") {
    const double lambda = 2.0;
    const Eigen::MatrixXd& B = term.basis;
    const Eigen::MatrixXd S = term.penalty;
    const Eigen::RowVectorXd c = *term.constraint;

    // KKT system for min ||y - B b||^2 + lambda b'Sb subject to c b = 0.
    Eigen::MatrixXd kkt(11, 11);
    kkt.setZero();
    kkt.topLeftCorner(10, 10) = B.transpose() * B + lambda * S;
    kkt.topRightCorner(10, 1) = c.transpose();
    kkt.bottomLeftCorner(1, 10) = c;
    Eigen::VectorXd rhs(11);
    rhs.head(10) = B.transpose() * y;
    rhs[10] = 0.0;
    const Eigen::VectorXd sol = kkt.fullPivLu().solve(rhs);
    const Eigen::VectorXd fit_oracle = B * sol.head(10);

    const Eigen::MatrixXd& Bz = absorbed.basis;
    const Eigen::VectorXd bz =
        (Bz.transpose() * Bz + lambda * absorbed.penalty).ldlt().solve(Bz.transpose() * y);
    const Eigen::VectorXd fit_constrained = Bz * bz;

    CHECK((fit_oracle - fit_constrained).lpNorm<Eigen::Infinity>() < 1e-8);
  }

  SUBCASE("double absorption and zero constraints are refused") {
    CHECK_THROWS_AS(absorb_constraint(absorbed), std::logic_error);
    SmoothTerm zero = term;
    zero.constraint = Eigen::RowVectorXd::Zero(10);
    CHECK_THROWS_AS(absorb_constraint(zero), std::invalid_argument);
    SmoothTerm none = term;
    none.constraint.reset();
    CHECK_THROWS_AS(absorb_constraint(none), std::logic_error);
  }

  SUBCASE("projector has full reduced rank") {
    CHECK(numerical_rank(absorbed.null_basis) == 9);
  }
}
