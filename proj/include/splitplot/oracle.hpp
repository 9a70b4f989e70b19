#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "splitplot/design.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/moments.hpp"
#include "splitplot/population.hpp"

namespace splitplot {

// Exactness checks of the closed-form covariance blocks against brute-force
// enumeration of the assignment space. Small designs only; every identity
// below holds exactly (to rounding) for the HT flavor.
struct OracleCheck {
  std::string name;
  bool pass = false;
  double error = 0.0;
  double tolerance = 0.0;
};

inline std::vector<OracleCheck> oracle_check(
    const ValidatedDesign& design, const PopulationData& pop,
    std::uint64_t cap = 1000000) {
  if (!pop.potential)
    throw CountMismatch("the enumeration oracle needs a potential table");
  std::vector<OracleCheck> checks;
  const Eigen::MatrixXd& table = *pop.potential;
  const Eigen::MatrixXd xc =
      pop.design_covariates.rowwise() -
      pop.design_covariates.colwise().mean().eval();
  const int l_dim = static_cast<int>(xc.cols());
  const double w = design.whole_plots();
  const auto& g = contrast_matrix();
  const Eigen::Vector3d tau = g * table.colwise().mean().transpose();
  const SigmaBlocks sigma =
      sigma_population(design, pop, Flavor::horvitz_thompson);
  const PopulationMoments moments = population_moments(design, pop);

  // One enumeration pass accumulating everything.
  double prob_sum = 0.0;
  Eigen::Vector3d mean_tau = Eigen::Vector3d::Zero();
  Eigen::VectorXd mean_x = Eigen::VectorXd::Zero(3 * l_dim);
  Eigen::Matrix3d cov_tau = Eigen::Matrix3d::Zero();
  Eigen::MatrixXd cov_x = Eigen::MatrixXd::Zero(3 * l_dim, 3 * l_dim);
  Eigen::MatrixXd mean_cross = Eigen::MatrixXd::Zero(3, 3 * l_dim);
  Eigen::Matrix3d mean_tt = Eigen::Matrix3d::Zero();

  enumerate_assignments(
      design,
      [&](const Assignment& asg, double prob) {
        prob_sum += prob;
        const Eigen::VectorXd y = observe_outcomes(design, asg, table);
        const Eigen::Vector3d t = effect_estimate(
            arm_estimate(y, asg, design, Flavor::horvitz_thompson));
        const Eigen::VectorXd tx = covariate_contrasts(
            arm_estimate(xc, asg, design, Flavor::horvitz_thompson));
        mean_tau += prob * t;
        mean_x += prob * tx;
        cov_tau += prob * (t - tau) * (t - tau).transpose();
        cov_x += prob * tx * tx.transpose();
        mean_cross += prob * sigma_tau_cov_estimated(
                                 design, asg, y, pop.design_covariates,
                                 Flavor::horvitz_thompson);
        mean_tt += prob * sigma_tau_tau_estimated(design, asg, y,
                                                  Flavor::horvitz_thompson);
      },
      cap);

  auto record = [&](const std::string& name, double error,
                    double tolerance) {
    checks.push_back(OracleCheck{name, error <= tolerance, error, tolerance});
  };
  record("probabilities sum to one", std::fabs(prob_sum - 1.0), 1e-12);
  record("HT effect estimator is unbiased",
         (mean_tau - tau).cwiseAbs().maxCoeff(), 1e-12);
  record("HT covariate contrasts are centered",
         mean_x.cwiseAbs().maxCoeff(), 1e-12);
  record("W cov(tau_ht) matches the closed form",
         (w * cov_tau - sigma.tau_tau).cwiseAbs().maxCoeff(), 1e-10);
  record("W cov(tau_ht_x) matches the closed form",
         (w * cov_x - sigma.xx).cwiseAbs().maxCoeff(), 1e-10);
  record("estimated cross block is unbiased",
         (mean_cross - sigma.tau_x).cwiseAbs().maxCoeff(), 1e-10);
  const Eigen::Matrix3d gap =
      g * moments.outcome.between_ht * g.transpose();
  record("estimated tau-tau block has the between-plot gap",
         (mean_tt - sigma.tau_tau - gap).cwiseAbs().maxCoeff(), 1e-10);
  return checks;
}

// Deterministic synthetic population for oracle runs without user data.
inline PopulationData synthetic_oracle_population(
    const ValidatedDesign& design, std::uint64_t seed, int l_dim = 1) {
  RngStream rng(seed, 424242);
  const int n = design.units();
  PopulationData pop;
  pop.design_covariates.resize(n, l_dim);
  for (int i = 0; i < n; ++i)
    for (int l = 0; l < l_dim; ++l)
      pop.design_covariates(i, l) = rng.normal(0.0, 1.0 + l);
  pop.analysis_covariates = pop.design_covariates;
  pop.linking = Eigen::MatrixXd::Identity(l_dim, l_dim);
  Eigen::MatrixXd table(n, 4);
  for (int i = 0; i < n; ++i) {
    const double base = rng.normal(0.0, 1.0);
    const double xs = pop.design_covariates.row(i).sum();
    table(i, 0) = base + 0.4 * xs;
    table(i, 1) = base + 1.0 + 0.9 * xs + rng.uniform(-0.5, 0.5);
    table(i, 2) = base - 1.0 - 0.3 * xs + rng.uniform(-0.5, 0.5);
    table(i, 3) = base + 2.0 + 0.1 * xs + rng.uniform(-0.5, 0.5);
  }
  pop.potential = table;
  pop.validate(design);
  return pop;
}

}  // namespace splitplot
