#ifndef HHR_DESIGN_HPP
#define HHR_DESIGN_HPP

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "hhr/covariate_spec.hpp"
#include "hhr/panel.hpp"
#include "hhr/smooth.hpp"

namespace hhr {

/// Column span of one model term inside the assembled design matrix.
struct TermLayout {
  std::string name;
  EffectKind effect = EffectKind::Linear;
  int start = 0;
  int size = 0;
  bool penalized = false;
  Eigen::MatrixXd penalty;  // size x size when penalized
};

struct DesignMatrix {
  Eigen::MatrixXd X;
  std::vector<TermLayout> layout;
  int cols() const { return static_cast<int>(X.cols()); }
};

/// Frozen reconstruction state of one term: enough to rebuild its design
/// columns for new rows exactly as at fit time.
struct FittedTerm {
  CovariateSpecEntry spec;
  KnotGrid grid;                  // smooths; first margin for tensors
  KnotGrid grid2;                 // second tensor margin
  Eigen::MatrixXd null_basis;     // constraint absorption map, empty if none
  std::vector<int> levels;        // random-effect country ids, sorted
  TransformKind factor_transform1 = TransformKind::Identity;  // interaction factors
  TransformKind factor_transform2 = TransformKind::Identity;
};

/// The design recipe of one stage, frozen at fit time. Grids span the
/// source ranges over the full training panel (padded), so conditioned
/// subsets and slightly drifted forecast inputs stay inside the basis
/// domain; genuinely out-of-range values still throw.
class StageDesign {
 public:
  /// Assemble the training design from `rows` of `panel`; spline ranges
  /// are taken over the whole panel. Freezes the recipe and returns the
  /// matrix plus per-term layout.
  static std::pair<StageDesign, DesignMatrix> build(const Panel& panel,
                                                    const std::vector<size_t>& rows,
                                                    const CovariateSpec& spec, int stage);

  /// Rebuild design columns for arbitrary rows of a compatible panel.
  Eigen::MatrixXd evaluate(const Panel& panel, const std::vector<size_t>& rows) const;

  int stage() const { return stage_; }
  const std::vector<FittedTerm>& terms() const { return terms_; }
  const std::vector<TermLayout>& layout() const { return layout_; }

  // Serialization state access (hurdle model files).
  StageDesign() = default;
  StageDesign(int stage, std::vector<FittedTerm> terms, std::vector<TermLayout> layout)
      : stage_(stage), terms_(std::move(terms)), layout_(std::move(layout)) {}

 private:
  int stage_ = 0;
  std::vector<FittedTerm> terms_;   // parallel to layout_, minus the intercept
  std::vector<TermLayout> layout_;  // layout_[0] is the intercept
};

/// Stage-1 rows: one head row per (country, month) with unit weight,
/// algebraically equal to weighting all cell rows by 1/n_j. Validates
/// that every stage-1 source column is constant within its country-month
/// and throws otherwise.
struct Level1Rows {
  std::vector<size_t> rows;        // indices into panel.rows
  Eigen::VectorXd weights;         // all ones
  Eigen::VectorXd any_fatality;    // CM target, aligned with rows
};
Level1Rows stage_weights_level1(const Panel& panel, const CovariateSpec& spec);

/// 1/n_j weights for the duplicated cell-level route (the dual path
/// checked against the deduplicated fit in tests).
Eigen::VectorXd level1_cell_weights(const Panel& panel);

}  // namespace hhr

#endif
