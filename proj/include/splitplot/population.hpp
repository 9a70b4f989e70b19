#pragma once

#include <Eigen/Dense>
#include <optional>

#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"

namespace splitplot {

// Per-unit data in the design's flattened (w, s) row order: design-stage
// covariates x (N x L), analysis-stage covariates v (N x J), the linking
// matrix C with x = C v, and either observed outcomes or a full potential
// outcome table with columns in lexicographic arm order 00, 01, 10, 11.
struct PopulationData {
  Eigen::MatrixXd design_covariates;
  Eigen::MatrixXd analysis_covariates;
  Eigen::MatrixXd linking;  // L x J; empty when unused
  std::optional<Eigen::VectorXd> observed;
  std::optional<Eigen::MatrixXd> potential;

  void validate(const ValidatedDesign& design) const {
    const int n = design.units();
    if (design_covariates.rows() != n)
      throw CountMismatch("design covariate rows do not match the design");
    if (analysis_covariates.size() > 0 && analysis_covariates.rows() != n)
      throw CountMismatch("analysis covariate rows do not match the design");
    if (observed && observed->size() != n)
      throw CountMismatch("outcome rows do not match the design");
    if (potential && (potential->rows() != n || potential->cols() != 4))
      throw CountMismatch("potential outcome table must be N x 4");
    if (linking.size() > 0) {
      if (linking.rows() != design_covariates.cols() ||
          linking.cols() != analysis_covariates.cols())
        throw CountMismatch("linking matrix shape does not match covariates");
      const double gap =
          (design_covariates -
           analysis_covariates * linking.transpose()).cwiseAbs().maxCoeff();
      if (gap > 1e-10)
        throw CountMismatch("x != C v beyond tolerance; linking matrix wrong");
    }
  }
};

// Observed outcomes from a potential table under one assignment.
inline Eigen::VectorXd observe_outcomes(const ValidatedDesign& design,
                                        const Assignment& asg,
                                        const Eigen::MatrixXd& potential) {
  Eigen::VectorXd y(design.units());
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    for (int s = 0; s < design.plot(w).size; ++s)
      y[off + s] = potential(off + s, asg.arm_index(w, off + s));
  }
  return y;
}

}  // namespace splitplot
