#pragma once

// Enumeration-based oracles shared by the test suites: exact means and
// covariances of estimators over the full assignment space of a small
// design. These deliberately avoid the closed-form covariance code paths
// they are used to check.

#include <Eigen/Dense>
#include <functional>
#include <vector>

#include "splitplot/design.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/population.hpp"

namespace oracle {

using splitplot::Assignment;
using splitplot::ValidatedDesign;

// Exact E[f(assignment)] over the assignment space; f returns a vector.
inline Eigen::VectorXd enumeration_mean(
    const ValidatedDesign& design,
    const std::function<Eigen::VectorXd(const Assignment&)>& f,
    std::uint64_t cap = 1000000) {
  Eigen::VectorXd mean;
  splitplot::enumerate_assignments(
      design,
      [&](const Assignment& asg, double prob) {
        const Eigen::VectorXd value = f(asg);
        if (mean.size() == 0) mean = Eigen::VectorXd::Zero(value.size());
        mean += prob * value;
      },
      cap);
  return mean;
}

// Exact covariance of a vector statistic over the assignment space.
inline Eigen::MatrixXd enumeration_cov(
    const ValidatedDesign& design,
    const std::function<Eigen::VectorXd(const Assignment&)>& f,
    std::uint64_t cap = 1000000) {
  const Eigen::VectorXd mean = enumeration_mean(design, f, cap);
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(mean.size(), mean.size());
  splitplot::enumerate_assignments(
      design,
      [&](const Assignment& asg, double prob) {
        const Eigen::VectorXd dev = f(asg) - mean;
        cov += prob * dev * dev.transpose();
      },
      cap);
  return cov;
}

// A small non-uniform toy design: W = 4, W1 = 2, plot sizes (3,4,3,4) with
// B-arm-1 sizes (1,2,1,2). 1944 assignments.
inline ValidatedDesign toy_design() {
  splitplot::DesignSpec spec;
  spec.w1 = 2;
  spec.plots = {{3, 1}, {4, 2}, {3, 1}, {4, 2}};
  return splitplot::validate_design(spec);
}

// Deterministic synthetic population on a given design: potential table plus
// L design covariates and J analysis covariates with x = C v (x = first L
// coordinates of v).
inline splitplot::PopulationData toy_population(const ValidatedDesign& design,
                                                int l_dim, int j_dim,
                                                std::uint64_t seed = 12345) {
  splitplot::RngStream rng(seed, 777);
  const int n = design.units();
  splitplot::PopulationData pop;
  pop.analysis_covariates.resize(n, j_dim);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < j_dim; ++j)
      pop.analysis_covariates(i, j) = rng.normal(0.3 * j, 1.0 + 0.5 * j);
  pop.design_covariates = pop.analysis_covariates.leftCols(l_dim);
  pop.linking = Eigen::MatrixXd::Zero(l_dim, j_dim);
  pop.linking.leftCols(l_dim).setIdentity();
  Eigen::MatrixXd table(n, 4);
  for (int i = 0; i < n; ++i) {
    const double base = rng.normal(0.0, 1.0);
    const double vsum = pop.analysis_covariates.row(i).sum();
    table(i, 0) = base + 0.5 * vsum;
    table(i, 1) = base + 1.0 + 0.2 * vsum + rng.normal(0.0, 0.25);
    table(i, 2) = base - 0.5 + 0.8 * vsum + rng.normal(0.0, 0.25);
    table(i, 3) = base + 2.0 - 0.3 * vsum + rng.normal(0.0, 0.25);
  }
  pop.potential = table;
  pop.validate(design);
  return pop;
}

}  // namespace oracle
