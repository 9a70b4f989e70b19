#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>

#include "splitplot/chi2.hpp"
#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/linalg.hpp"
#include "splitplot/moments.hpp"

namespace splitplot {

// Mahalanobis balance criterion: accept an assignment when
// tau_hat_x' inv_cov tau_hat_x <= threshold. inv_cov is the inverse of
// cov(tau_hat_x) = Sigma_xx / W, exact for the HT flavor, asymptotic for
// Hajek. Covariates are centered once at construction.
struct BalanceCriterion {
  Flavor flavor = Flavor::horvitz_thompson;
  double threshold = 0.0;
  int rank = 0;                // effective dimension of the contrast space
  Eigen::MatrixXd inv_cov;     // 3L x 3L (pseudoinverse on the rank subspace)
  Eigen::MatrixXd centered_x;  // N x L
};

// The threshold is the acceptance_rate quantile of chi-squared with as many
// degrees of freedom as the contrast covariance has rank. Whole-plot-constant
// covariates zero the factor-B and interaction contrasts deterministically;
// restricting to the effective rank keeps the asymptotic acceptance rate at
// the nominal level (a full-3L threshold would accept far too often there).
inline BalanceCriterion build_criterion(const ValidatedDesign& design,
                                        const Eigen::MatrixXd& x_raw,
                                        Flavor flavor,
                                        double acceptance_rate) {
  if (!(acceptance_rate > 0.0 && acceptance_rate < 1.0))
    throw ConfigError("acceptance rate must lie in (0, 1)");
  BalanceCriterion out;
  out.flavor = flavor;
  out.centered_x = x_raw.rowwise() - x_raw.colwise().mean().eval();
  const CovariateMoments moments = covariate_moments(design, x_raw);
  require_covariate_rank(moments, flavor, "design");
  const Eigen::MatrixXd xx =
      sigma_xx(design, moments, flavor) / design.whole_plots();
  const PsdPseudo pseudo = psd_pseudo_inverse(xx);
  if (pseudo.rank == 0)
    throw SingularSigmaXX("covariate-contrast covariance is zero");
  out.rank = pseudo.rank;
  out.inv_cov = pseudo.pinv;
  out.threshold = chi2_quantile(out.rank, acceptance_rate);
  return out;
}

inline double mahalanobis(const BalanceCriterion& criterion,
                          const Assignment& asg,
                          const ValidatedDesign& design) {
  const Eigen::VectorXd contrasts = covariate_contrasts(
      arm_estimate(criterion.centered_x, asg, design, criterion.flavor));
  return contrasts.dot(criterion.inv_cov * contrasts);
}

struct RerandomizeResult {
  Assignment assignment;
  std::uint64_t draws_used = 0;
  double distance = 0.0;
};

// Accept/reject loop: redraws assignments until the balance criterion
// accepts. On budget exhaustion the best (lowest-distance) assignment seen
// is attached to the error message context via the returned diagnostic.
struct RerandomizeDiagnostic {
  Assignment best_assignment;
  double best_distance = 0.0;
  std::uint64_t draws_used = 0;
};

inline RerandomizeResult rerandomize(
    const ValidatedDesign& design, const BalanceCriterion& criterion,
    RngStream& rng, std::uint64_t max_draws = 1000000,
    RerandomizeDiagnostic* diagnostic = nullptr) {
  if (max_draws < 1) throw ConfigError("max_draws must be at least 1");
  Assignment asg;
  Assignment best;
  double best_distance = std::numeric_limits<double>::infinity();
  for (std::uint64_t draw = 1; draw <= max_draws; ++draw) {
    randomize_into(design, rng, asg);
    const double distance = mahalanobis(criterion, asg, design);
    if (distance <= criterion.threshold)
      return RerandomizeResult{std::move(asg), draw, distance};
    if (distance < best_distance) {
      best_distance = distance;
      best = asg;
    }
  }
  if (diagnostic) {
    diagnostic->best_assignment = std::move(best);
    diagnostic->best_distance = best_distance;
    diagnostic->draws_used = max_draws;
  }
  throw RejectionBudgetExceeded(
      "no assignment met the balance threshold within the draw budget");
}

}  // namespace splitplot
