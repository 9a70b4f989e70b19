#pragma once

#include <Eigen/Dense>
#include <vector>

#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/linalg.hpp"
#include "splitplot/population.hpp"

namespace splitplot {

enum class Provenance { population, estimated };

// The (3 + 3L)-dimensional covariance structure of (tau_hat, tau_hat_x),
// scaled by W, split into blocks, plus the projection/residual decomposition
// of the tau-tau block. xx always carries the population covariate block.
struct SigmaBlocks {
  Eigen::Matrix3d tau_tau;
  Eigen::MatrixXd tau_x;  // 3 x 3L
  Eigen::MatrixXd xx;     // 3L x 3L
  Eigen::Matrix3d parallel;
  Eigen::Matrix3d perp;
  Flavor flavor = Flavor::horvitz_thompson;
  Provenance provenance = Provenance::population;
};

// H = diag(p0^-1, p1^-1) kron 1_{2x2} - 1_{4x4}.
inline Eigen::Matrix4d h_matrix(const ValidatedDesign& design) {
  Eigen::Matrix4d h = -Eigen::Matrix4d::Ones();
  for (int a = 0; a < 2; ++a) {
    const double inv_p = 1.0 / design.arm_prob(a);
    for (int b = 0; b < 2; ++b)
      for (int b2 = 0; b2 < 2; ++b2) h(2 * a + b, 2 * a + b2) += inv_p;
  }
  return h;
}

// H_w = diag(p0^-1, p1^-1) kron {diag(q_w0^-1, q_w1^-1) - 1_{2x2}}.
inline Eigen::Matrix4d h_w_matrix(const ValidatedDesign& design, int w) {
  Eigen::Matrix4d h = Eigen::Matrix4d::Zero();
  for (int a = 0; a < 2; ++a) {
    const double inv_p = 1.0 / design.arm_prob(a);
    for (int b = 0; b < 2; ++b)
      for (int b2 = 0; b2 < 2; ++b2) {
        double inner = -1.0;
        if (b == b2) inner += 1.0 / design.subplot_prob(w, b);
        h(2 * a + b, 2 * a + b2) = inv_p * inner;
      }
  }
  return h;
}

// Scaled between- and within-whole-plot second moments of a covariate set,
// computed after centering at the grand mean (recorded in `mean`).
struct CovariateMoments {
  Eigen::MatrixXd between_ht;   // L x L
  Eigen::MatrixXd between_haj;  // L x L
  Eigen::MatrixXd psi;          // 4L x 4L
  Eigen::RowVectorXd mean;
};

inline CovariateMoments covariate_moments(const ValidatedDesign& design,
                                          const Eigen::MatrixXd& x_raw) {
  const int w_count = design.whole_plots();
  const int dim = static_cast<int>(x_raw.cols());
  CovariateMoments out;
  out.mean = x_raw.colwise().mean();
  const Eigen::MatrixXd x = x_raw.rowwise() - out.mean;
  out.between_ht = Eigen::MatrixXd::Zero(dim, dim);
  out.between_haj = Eigen::MatrixXd::Zero(dim, dim);
  out.psi = Eigen::MatrixXd::Zero(4 * dim, 4 * dim);
  const Eigen::RowVectorXd grand = x.colwise().mean();  // ~0 after centering
  for (int w = 0; w < w_count; ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const double alpha = design.alpha(w);
    const Eigen::RowVectorXd plot_mean =
        x.middleRows(off, m).colwise().mean();
    const Eigen::RowVectorXd dev_ht = alpha * plot_mean - grand;
    const Eigen::RowVectorXd dev_haj = plot_mean - grand;
    out.between_ht += dev_ht.transpose() * dev_ht;
    out.between_haj +=
        (alpha * alpha) * dev_haj.transpose() * dev_haj;
    // S_w,xx = (M_w - 1)^-1 sum_s alpha_w^2 (x_ws - xbar_w)(x_ws - xbar_w)'
    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dim, dim);
    for (int s = 0; s < m; ++s) {
      const Eigen::RowVectorXd d = x.row(off + s) - plot_mean;
      within += d.transpose() * d;
    }
    within *= alpha * alpha / (m - 1);
    const Eigen::Matrix4d hw = h_w_matrix(design, w);
    const double scale = 1.0 / (static_cast<double>(w_count) * m);
    for (int z = 0; z < 4; ++z)
      for (int z2 = 0; z2 < 4; ++z2)
        if (hw(z, z2) != 0.0)
          out.psi.block(z * dim, z2 * dim, dim, dim) +=
              scale * hw(z, z2) * within;
  }
  out.between_ht /= w_count - 1;
  out.between_haj /= w_count - 1;
  return out;
}

// Scaled between- and within-whole-plot covariances of the potential
// outcomes (no centering; levels matter here).
struct OutcomeMoments {
  Eigen::Matrix4d between_ht;
  Eigen::Matrix4d between_haj;
  Eigen::Matrix4d psi;
};

inline OutcomeMoments outcome_moments(const ValidatedDesign& design,
                                      const Eigen::MatrixXd& table) {
  const int w_count = design.whole_plots();
  OutcomeMoments out;
  out.between_ht.setZero();
  out.between_haj.setZero();
  out.psi.setZero();
  const Eigen::RowVector4d grand = table.colwise().mean();
  for (int w = 0; w < w_count; ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const double alpha = design.alpha(w);
    const Eigen::RowVector4d plot_mean =
        table.middleRows(off, m).colwise().mean();
    const Eigen::RowVector4d dev_ht = alpha * plot_mean - grand;
    const Eigen::RowVector4d dev_haj = plot_mean - grand;
    out.between_ht += dev_ht.transpose() * dev_ht;
    out.between_haj += (alpha * alpha) * dev_haj.transpose() * dev_haj;
    Eigen::Matrix4d within = Eigen::Matrix4d::Zero();
    for (int s = 0; s < m; ++s) {
      const Eigen::RowVector4d d = table.row(off + s) - plot_mean;
      within += d.transpose() * d;
    }
    within *= alpha * alpha / (m - 1);
    out.psi += (1.0 / (static_cast<double>(w_count) * m)) *
               h_w_matrix(design, w).cwiseProduct(within);
  }
  out.between_ht /= w_count - 1;
  out.between_haj /= w_count - 1;
  return out;
}

// Covariate-outcome cross moments; the covariates are centered internally.
// Columns of the L x 4 blocks follow the z order.
struct CrossMoments {
  Eigen::MatrixXd between_ht;   // L x 4
  Eigen::MatrixXd between_haj;  // L x 4
  Eigen::MatrixXd psi;          // 4L x 4, L-row blocks by z
};

inline CrossMoments cross_moments(const ValidatedDesign& design,
                                  const Eigen::MatrixXd& table,
                                  const Eigen::MatrixXd& x_raw) {
  const int w_count = design.whole_plots();
  const int dim = static_cast<int>(x_raw.cols());
  const Eigen::MatrixXd x =
      x_raw.rowwise() - x_raw.colwise().mean().eval();
  CrossMoments out;
  out.between_ht = Eigen::MatrixXd::Zero(dim, 4);
  out.between_haj = Eigen::MatrixXd::Zero(dim, 4);
  out.psi = Eigen::MatrixXd::Zero(4 * dim, 4);
  const Eigen::RowVectorXd x_grand = x.colwise().mean();
  const Eigen::RowVector4d y_grand = table.colwise().mean();
  for (int w = 0; w < w_count; ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const double alpha = design.alpha(w);
    const Eigen::RowVectorXd x_plot = x.middleRows(off, m).colwise().mean();
    const Eigen::RowVector4d y_plot =
        table.middleRows(off, m).colwise().mean();
    out.between_ht += (alpha * x_plot - x_grand).transpose() *
                      (alpha * y_plot - y_grand);
    out.between_haj += (alpha * alpha) *
                       (x_plot - x_grand).transpose() * (y_plot - y_grand);
    // S_w,xY(z) = (M_w-1)^-1 sum_s alpha^2 (x_ws - xbar_w)(Y_ws(z) - Ybar_w(z))
    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dim, 4);
    for (int s = 0; s < m; ++s)
      within += (x.row(off + s) - x_plot).transpose() *
                (table.row(off + s) - y_plot);
    within *= alpha * alpha / (m - 1);
    const Eigen::Matrix4d hw = h_w_matrix(design, w);
    const double scale = 1.0 / (static_cast<double>(w_count) * m);
    for (int z = 0; z < 4; ++z)
      for (int z2 = 0; z2 < 4; ++z2)
        if (hw(z, z2) != 0.0)
          out.psi.block(z * dim, z2, dim, 1) +=
              scale * hw(z, z2) * within.col(z2);
  }
  out.between_ht /= w_count - 1;
  out.between_haj /= w_count - 1;
  return out;
}

// Full population bundle over the design covariates.
struct PopulationMoments {
  OutcomeMoments outcome;
  CovariateMoments covariate;
  CrossMoments cross;
  Eigen::Matrix4d h;
};

inline PopulationMoments population_moments(const ValidatedDesign& design,
                                            const PopulationData& pop) {
  if (!pop.potential)
    throw CountMismatch(
        "population_moments requires a full potential outcome table");
  PopulationMoments out;
  out.outcome = outcome_moments(design, *pop.potential);
  out.covariate = covariate_moments(design, pop.design_covariates);
  out.cross = cross_moments(design, *pop.potential, pop.design_covariates);
  out.h = h_matrix(design);
  return out;
}

namespace detail {

// V_xx = H kron S_xx + Psi_xx  (4L x 4L).
inline Eigen::MatrixXd inner_xx(const Eigen::Matrix4d& h,
                                const Eigen::MatrixXd& between,
                                const Eigen::MatrixXd& psi) {
  const int dim = static_cast<int>(between.rows());
  Eigen::MatrixXd v = psi;
  for (int z = 0; z < 4; ++z)
    for (int z2 = 0; z2 < 4; ++z2)
      v.block(z * dim, z2 * dim, dim, dim) += h(z, z2) * between;
  return v;
}

// V_xY = (H kron 1_L) hadamard (1_4 kron S_xY) + Psi_xY  (4L x 4).
inline Eigen::MatrixXd inner_xy(const Eigen::Matrix4d& h,
                                const Eigen::MatrixXd& between_xy,
                                const Eigen::MatrixXd& psi_xy) {
  const int dim = static_cast<int>(between_xy.rows());
  Eigen::MatrixXd v = psi_xy;
  for (int z = 0; z < 4; ++z)
    for (int z2 = 0; z2 < 4; ++z2)
      v.block(z * dim, z2, dim, 1) += h(z, z2) * between_xy.col(z2);
  return v;
}

}  // namespace detail

// W-scaled covariance of the stacked covariate contrasts,
// (G kron I_L)(H kron S_xx + Psi_xx)(G kron I_L)'.
inline Eigen::MatrixXd sigma_xx(const ValidatedDesign& design,
                                const CovariateMoments& cov, Flavor flavor) {
  const int dim = static_cast<int>(cov.between_ht.rows());
  const Eigen::MatrixXd gl = kron_identity(contrast_matrix(), dim);
  const Eigen::MatrixXd& between = flavor == Flavor::horvitz_thompson
                                       ? cov.between_ht
                                       : cov.between_haj;
  return gl * detail::inner_xx(h_matrix(design), between, cov.psi) *
         gl.transpose();
}

// Collinear covariate columns make the between-plot covariance singular and
// every contrast-covariance downstream unusable; reject them up front.
inline void require_covariate_rank(const CovariateMoments& moments,
                                   Flavor flavor, const char* what) {
  const Eigen::MatrixXd& between = flavor == Flavor::horvitz_thompson
                                       ? moments.between_ht
                                       : moments.between_haj;
  if (between.size() == 0) return;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(between);
  const double max_eig = eig.eigenvalues().maxCoeff();
  if (!(max_eig > 0.0) ||
      eig.eigenvalues().minCoeff() <= 1e-12 * max_eig) {
    if (what[0] == 'a')
      throw SingularSigmaVV(
          "analysis covariates are collinear across whole plots");
    throw SingularSigmaXX(
        "design covariates are collinear across whole plots");
  }
}

// Population Sigma blocks for one flavor; requires a potential outcome table.
// The parallel/perp split uses the rank-aware pseudoinverse of the
// covariate-contrast covariance: with whole-plot-constant covariates the
// factor-B and interaction contrasts of the covariate arm means are
// deterministically zero, so those directions are structural, not noise.
inline SigmaBlocks sigma_population(const ValidatedDesign& design,
                                    const PopulationData& pop,
                                    Flavor flavor) {
  const PopulationMoments m = population_moments(design, pop);
  const bool ht = flavor == Flavor::horvitz_thompson;
  const int dim = static_cast<int>(pop.design_covariates.cols());
  const Eigen::MatrixXd gl = kron_identity(contrast_matrix(), dim);
  const auto& g = contrast_matrix();

  SigmaBlocks out;
  out.flavor = flavor;
  out.provenance = Provenance::population;
  out.tau_tau =
      g *
      (m.h.cwiseProduct(ht ? m.outcome.between_ht : m.outcome.between_haj) +
       m.outcome.psi) *
      g.transpose();
  out.xx = sigma_xx(design, m.covariate, flavor);
  const Eigen::MatrixXd x_tau =
      gl *
      detail::inner_xy(m.h, ht ? m.cross.between_ht : m.cross.between_haj,
                       m.cross.psi) *
      g.transpose();
  out.tau_x = x_tau.transpose();
  require_covariate_rank(m.covariate, flavor, "design");
  const PsdPseudo pseudo = psd_pseudo_inverse(out.xx);
  out.parallel = out.tau_x * pseudo.pinv * out.tau_x.transpose();
  out.perp = out.tau_tau - out.parallel;
  return out;
}

// Effective rank of a covariate-contrast covariance block.
inline int sigma_xx_rank(const Eigen::MatrixXd& xx) {
  return psd_pseudo_inverse(xx).rank;
}

namespace detail {

// Whole-plot sample means under the realized assignment: row w holds
// (yhat_w(z))_z, nonzero only for the two arms with a = A_w.
struct PlotArmMeans {
  Eigen::MatrixXd y_plot;  // W x 4 sample means
};

inline PlotArmMeans plot_arm_means(const ValidatedDesign& design,
                                   const Assignment& asg,
                                   const Eigen::VectorXd& y) {
  PlotArmMeans out;
  out.y_plot = Eigen::MatrixXd::Zero(design.whole_plots(), 4);
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    const int a = asg.a_levels[w];
    double sum0 = 0.0, sum1 = 0.0;
    int n1 = 0;
    for (int s = 0; s < design.plot(w).size; ++s) {
      if (asg.b_levels[off + s]) {
        sum1 += y[off + s];
        ++n1;
      } else {
        sum0 += y[off + s];
      }
    }
    out.y_plot(w, 2 * a) = sum0 / (design.plot(w).size - n1);
    out.y_plot(w, 2 * a + 1) = sum1 / n1;
  }
  return out;
}

}  // namespace detail

// Plug-in estimate of the W-scaled covariance between tau_hat and the
// stacked covariate contrasts (3 x 3K), for an arbitrary covariate set.
// Covariates are centered internally.
inline Eigen::MatrixXd sigma_tau_cov_estimated(const ValidatedDesign& design,
                                               const Assignment& asg,
                                               const Eigen::VectorXd& y,
                                               const Eigen::MatrixXd& x_raw,
                                               Flavor flavor) {
  const int w_count = design.whole_plots();
  const int dim = static_cast<int>(x_raw.cols());
  const Eigen::MatrixXd x =
      x_raw.rowwise() - x_raw.colwise().mean().eval();
  const Eigen::RowVectorXd x_grand = x.colwise().mean();

  const ArmMeans ht_arm =
      arm_estimate(y, asg, design, Flavor::horvitz_thompson);
  const Eigen::RowVector4d y_ht = ht_arm.values.col(0).transpose();
  const detail::PlotArmMeans plot = detail::plot_arm_means(design, asg, y);

  Eigen::MatrixXd between = Eigen::MatrixXd::Zero(dim, 4);
  Eigen::MatrixXd psi_hat = Eigen::MatrixXd::Zero(4 * dim, 4);
  const bool ht = flavor == Flavor::horvitz_thompson;

  for (int w = 0; w < w_count; ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const double alpha = design.alpha(w);
    const int a = asg.a_levels[w];
    const double inv_pa = 1.0 / design.arm_prob(a);
    const Eigen::RowVectorXd x_plot = x.middleRows(off, m).colwise().mean();

    // HT plug-in for the plot-mean outcome: yhat_w(z) / p_a on the realized
    // arm, zero elsewhere.
    Eigen::RowVector4d y_ht_plot = Eigen::RowVector4d::Zero();
    y_ht_plot[2 * a] = plot.y_plot(w, 2 * a) * inv_pa;
    y_ht_plot[2 * a + 1] = plot.y_plot(w, 2 * a + 1) * inv_pa;

    if (ht) {
      between += (alpha * x_plot - x_grand).transpose() *
                 (alpha * y_ht_plot - y_ht);
    } else {
      between += (alpha * alpha) * (x_plot - x_grand).transpose() *
                 (y_ht_plot - y_ht);
    }

    // Within-plot plug-in: unit-level HT estimates against the plot HT mean.
    Eigen::MatrixXd within = Eigen::MatrixXd::Zero(dim, 4);
    const double wt_b0 = inv_pa / design.subplot_prob(w, 0);
    const double wt_b1 = inv_pa / design.subplot_prob(w, 1);
    for (int s = 0; s < m; ++s) {
      const Eigen::RowVectorXd dx = x.row(off + s) - x_plot;
      Eigen::RowVector4d y_unit = Eigen::RowVector4d::Zero();
      const int z = asg.arm_index(w, off + s);
      y_unit[z] = (asg.b_levels[off + s] ? wt_b1 : wt_b0) * y[off + s];
      within += dx.transpose() * (y_unit - y_ht_plot);
    }
    within *= alpha * alpha / (m - 1);
    const Eigen::Matrix4d hw = h_w_matrix(design, w);
    const double scale = 1.0 / (static_cast<double>(w_count) * m);
    for (int z = 0; z < 4; ++z)
      for (int z2 = 0; z2 < 4; ++z2)
        if (hw(z, z2) != 0.0)
          psi_hat.block(z * dim, z2, dim, 1) +=
              scale * hw(z, z2) * within.col(z2);
  }
  between /= w_count - 1;

  const Eigen::MatrixXd gl = kron_identity(contrast_matrix(), dim);
  const Eigen::MatrixXd x_tau =
      gl * detail::inner_xy(h_matrix(design), between, psi_hat) *
      contrast_matrix().transpose();
  return x_tau.transpose();  // 3 x 3K
}

// Sample estimate of the W-scaled covariance of tau_hat: the within-arm
// sample covariances of plot-level means, block diagonal in factor A.
inline Eigen::Matrix3d sigma_tau_tau_estimated(const ValidatedDesign& design,
                                               const Assignment& asg,
                                               const Eigen::VectorXd& y,
                                               Flavor flavor) {
  if (design.arm_count(0) < 2 || design.arm_count(1) < 2)
    throw InsufficientArms(
        "covariance estimation needs at least two whole plots per arm");
  const detail::PlotArmMeans plot = detail::plot_arm_means(design, asg, y);
  const ArmMeans arm = arm_estimate(y, asg, design, flavor);
  const Eigen::RowVector4d center = arm.values.col(0).transpose();
  const bool ht = flavor == Flavor::horvitz_thompson;

  Eigen::Matrix4d inner = Eigen::Matrix4d::Zero();
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int a = asg.a_levels[w];
    const double alpha = design.alpha(w);
    Eigen::Vector2d dev;
    for (int b = 0; b < 2; ++b) {
      const int z = 2 * a + b;
      dev[b] = ht ? alpha * plot.y_plot(w, z) - center[z]
                  : alpha * (plot.y_plot(w, z) - center[z]);
    }
    for (int b = 0; b < 2; ++b)
      for (int b2 = 0; b2 < 2; ++b2)
        inner(2 * a + b, 2 * a + b2) += dev[b] * dev[b2];
  }
  for (int a = 0; a < 2; ++a) {
    const double scale =
        1.0 / (design.arm_prob(a) * (design.arm_count(a) - 1));
    for (int b = 0; b < 2; ++b)
      for (int b2 = 0; b2 < 2; ++b2) inner(2 * a + b, 2 * a + b2) *= scale;
  }
  const auto& g = contrast_matrix();
  return g * inner * g.transpose();
}

// Full estimated Sigma blocks under one assignment. The covariate block is
// the population one (covariates are fully observed); the perp part is
// PSD-clamped for downstream square roots.
inline SigmaBlocks sigma_estimated(const ValidatedDesign& design,
                                   const Assignment& asg,
                                   const Eigen::VectorXd& y,
                                   const Eigen::MatrixXd& x_raw,
                                   const Eigen::MatrixXd& xx_population,
                                   Flavor flavor) {
  SigmaBlocks out;
  out.flavor = flavor;
  out.provenance = Provenance::estimated;
  out.tau_tau = sigma_tau_tau_estimated(design, asg, y, flavor);
  out.tau_x = sigma_tau_cov_estimated(design, asg, y, x_raw, flavor);
  out.xx = xx_population;
  const PsdPseudo pseudo = psd_pseudo_inverse(out.xx);
  if (pseudo.rank == 0)
    throw SingularSigmaXX(
        "population covariate-contrast covariance is zero");
  out.parallel = out.tau_x * pseudo.pinv * out.tau_x.transpose();
  out.perp = psd_project(out.tau_tau - out.parallel);
  return out;
}

}  // namespace splitplot
