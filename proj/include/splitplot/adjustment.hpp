#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/estimators.hpp"
#include "splitplot/linalg.hpp"
#include "splitplot/moments.hpp"

namespace splitplot {

namespace detail {

struct ClusterLsFit {
  Eigen::VectorXd coef;        // full column set; dropped columns get zero
  Eigen::MatrixXd vcov;        // cluster-robust, full column set
  Eigen::VectorXd residuals;   // unweighted residuals
  std::vector<int> dropped;    // column indices removed as collinear
};

// Weighted least squares with a deterministic left-to-right collinearity
// screen (later columns lose) and an HC0-style cluster-robust covariance
// with multiplier n_clusters / (n_clusters - 1).
inline ClusterLsFit cluster_weighted_ls(const Eigen::MatrixXd& x,
                                        const Eigen::VectorXd& y,
                                        const Eigen::VectorXd& weights,
                                        const std::vector<int>& clusters,
                                        int n_clusters) {
  const int n = static_cast<int>(x.rows());
  const int p = static_cast<int>(x.cols());
  const Eigen::VectorXd sqrt_w = weights.cwiseSqrt();
  Eigen::MatrixXd xw = x.array().colwise() * sqrt_w.array();
  const Eigen::VectorXd yw = y.cwiseProduct(sqrt_w);

  // Modified Gram-Schmidt with re-orthogonalization; drops columns whose
  // residual norm collapses relative to the original.
  ClusterLsFit out;
  std::vector<int> kept;
  Eigen::MatrixXd q(n, p);
  Eigen::MatrixXd r = Eigen::MatrixXd::Zero(p, p);
  for (int j = 0; j < p; ++j) {
    Eigen::VectorXd col = xw.col(j);
    const double orig = col.norm();
    Eigen::VectorXd rj = Eigen::VectorXd::Zero(p);
    for (int pass = 0; pass < 2; ++pass)
      for (size_t i = 0; i < kept.size(); ++i) {
        const double proj = q.col(static_cast<int>(i)).dot(col);
        rj[static_cast<int>(i)] += proj;
        col -= proj * q.col(static_cast<int>(i));
      }
    const double nrm = col.norm();
    if (nrm <= 1e-9 * (orig + 1e-300)) {
      out.dropped.push_back(j);
      continue;
    }
    const int k = static_cast<int>(kept.size());
    q.col(k) = col / nrm;
    for (int i = 0; i < k; ++i) r(i, k) = rj[i];
    r(k, k) = nrm;
    kept.push_back(j);
  }
  const int rank = static_cast<int>(kept.size());
  if (rank == 0)
    throw RankDeficientDesignMatrix("all regressor columns are collinear");

  const Eigen::VectorXd qty = q.leftCols(rank).transpose() * yw;
  const Eigen::VectorXd beta_kept =
      r.topLeftCorner(rank, rank)
          .triangularView<Eigen::Upper>()
          .solve(qty);

  out.coef = Eigen::VectorXd::Zero(p);
  for (int i = 0; i < rank; ++i) out.coef[kept[i]] = beta_kept[i];
  out.residuals = y - x * out.coef;

  // bread = (X' W X)^-1 = R^-1 R^-T on the kept columns.
  const Eigen::MatrixXd r_inv =
      r.topLeftCorner(rank, rank)
          .triangularView<Eigen::Upper>()
          .solve(Eigen::MatrixXd::Identity(rank, rank));
  const Eigen::MatrixXd bread = r_inv * r_inv.transpose();

  Eigen::MatrixXd scores = Eigen::MatrixXd::Zero(n_clusters, rank);
  for (int i = 0; i < n; ++i) {
    const double we = weights[i] * out.residuals[i];
    for (int k = 0; k < rank; ++k)
      scores(clusters[i], k) += x(i, kept[k]) * we;
  }
  const Eigen::MatrixXd meat = scores.transpose() * scores;
  const double mult =
      static_cast<double>(n_clusters) / (n_clusters - 1.0);
  const Eigen::MatrixXd vcov_kept = mult * bread * meat * bread;

  out.vcov = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < rank; ++i)
    for (int j = 0; j < rank; ++j) out.vcov(kept[i], kept[j]) = vcov_kept(i, j);
  return out;
}

// Whole-plot sample means of the analysis covariates under the realized
// arms: row w holds vhat_w(z) for z = (A_w, b), b = 0, 1.
inline void plot_cov_means(const ValidatedDesign& design,
                           const Assignment& asg, const Eigen::MatrixXd& v,
                           Eigen::MatrixXd& mean_b0, Eigen::MatrixXd& mean_b1) {
  const int j_dim = static_cast<int>(v.cols());
  mean_b0.setZero(design.whole_plots(), j_dim);
  mean_b1.setZero(design.whole_plots(), j_dim);
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    int n1 = 0;
    for (int s = 0; s < design.plot(w).size; ++s) {
      if (asg.b_levels[off + s]) {
        mean_b1.row(w) += v.row(off + s);
        ++n1;
      } else {
        mean_b0.row(w) += v.row(off + s);
      }
    }
    mean_b0.row(w) /= design.plot(w).size - n1;
    mean_b1.row(w) /= n1;
  }
}

}  // namespace detail

enum class FitKind { aggregate, wls, aggregate_alpha };

// A fully interacted regression fit: per-arm intercepts (beta, z-ordered),
// per-arm slopes on the centered covariates (gamma), and the whole-plot
// cluster-robust covariance of beta.
struct RegressionFit {
  Eigen::Vector4d beta;
  std::array<Eigen::VectorXd, 4> gamma;  // J entries, or J+1 with the
                                         // trailing entry on (alpha_w - 1)
  Eigen::Matrix4d vcov_cluster;
  FitKind kind = FitKind::wls;
  Eigen::RowVectorXd v_mean;
  std::vector<std::string> warnings;
};

// Inverse-probability weighted least squares of the subplot outcomes on arm
// indicators fully interacted with grand-mean-centered covariates. With no
// covariates the intercepts reproduce the Hajek arm means exactly.
inline RegressionFit fit_wls_lin(const ValidatedDesign& design,
                                 const Assignment& asg,
                                 const Eigen::VectorXd& y,
                                 const Eigen::MatrixXd& v) {
  const int n = design.units();
  const int j_dim = static_cast<int>(v.cols());
  const int p = 4 + 4 * j_dim;
  RegressionFit out;
  out.kind = FitKind::wls;
  out.v_mean = j_dim > 0 ? Eigen::RowVectorXd(v.colwise().mean())
                         : Eigen::RowVectorXd(0);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(n, p);
  Eigen::VectorXd weights(n);
  std::vector<int> clusters(n);
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    const int a = asg.a_levels[w];
    for (int s = 0; s < design.plot(w).size; ++s) {
      const int i = off + s;
      const int b = asg.b_levels[i];
      const int z = 2 * a + b;
      x(i, z) = 1.0;
      for (int j = 0; j < j_dim; ++j)
        x(i, 4 + z * j_dim + j) = v(i, j) - out.v_mean[j];
      weights[i] = 1.0 / design.unit_prob(w, a, b);
      clusters[i] = w;
    }
  }
  const detail::ClusterLsFit fit = detail::cluster_weighted_ls(
      x, y, weights, clusters, design.whole_plots());
  for (int z = 0; z < 4; ++z) {
    out.beta[z] = fit.coef[z];
    out.gamma[z] = fit.coef.segment(4 + z * j_dim, j_dim);
  }
  out.vcov_cluster = fit.vcov.topLeftCorner(4, 4);
  for (int j : fit.dropped)
    out.warnings.push_back("dropped collinear column " + std::to_string(j));
  return out;
}

// Aggregate regression over the 2W whole-plot-by-subarm rows: response
// alpha_w yhat_w(A_w b), regressors arm indicators interacted with
// alpha_w (vhat_w - vbar), optionally with the centered size factor
// alpha_w - 1 appended per arm. OLS; clusters are whole plots. With no
// covariates the intercepts reproduce the HT arm means exactly.
inline RegressionFit fit_ag_lin(const ValidatedDesign& design,
                                const Assignment& asg,
                                const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& v,
                                bool include_alpha) {
  const int w_count = design.whole_plots();
  const int j_dim = static_cast<int>(v.cols());
  const int per_arm = j_dim + (include_alpha ? 1 : 0);
  const int p = 4 + 4 * per_arm;
  RegressionFit out;
  out.kind = include_alpha ? FitKind::aggregate_alpha : FitKind::aggregate;
  out.v_mean = j_dim > 0 ? Eigen::RowVectorXd(v.colwise().mean())
                         : Eigen::RowVectorXd(0);

  Eigen::MatrixXd v_b0, v_b1;
  detail::plot_cov_means(design, asg, v, v_b0, v_b1);
  const detail::PlotArmMeans plot = detail::plot_arm_means(design, asg, y);

  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(2 * w_count, p);
  Eigen::VectorXd response(2 * w_count);
  Eigen::VectorXd weights = Eigen::VectorXd::Ones(2 * w_count);
  std::vector<int> clusters(2 * w_count);
  for (int w = 0; w < w_count; ++w) {
    const int a = asg.a_levels[w];
    const double alpha = design.alpha(w);
    for (int b = 0; b < 2; ++b) {
      const int row = 2 * w + b;
      const int z = 2 * a + b;
      clusters[row] = w;
      response[row] = alpha * plot.y_plot(w, z);
      x(row, z) = 1.0;
      const Eigen::RowVectorXd& vhat = b == 1 ? v_b1.row(w) : v_b0.row(w);
      for (int j = 0; j < j_dim; ++j)
        x(row, 4 + z * per_arm + j) = alpha * (vhat[j] - out.v_mean[j]);
      if (include_alpha) x(row, 4 + z * per_arm + j_dim) = alpha - 1.0;
    }
  }
  const detail::ClusterLsFit fit =
      detail::cluster_weighted_ls(x, response, weights, clusters, w_count);
  for (int z = 0; z < 4; ++z) {
    out.beta[z] = fit.coef[z];
    out.gamma[z] = fit.coef.segment(4 + z * per_arm, per_arm);
  }
  out.vcov_cluster = fit.vcov.topLeftCorner(4, 4);
  for (int j : fit.dropped)
    out.warnings.push_back("dropped collinear column " + std::to_string(j));
  return out;
}

enum class AdjustmentKind { regression, regression_alpha, projection };

struct AdjustedEstimate {
  Eigen::Vector3d tau_hat;
  SigmaBlocks blocks;
  AdjustmentKind kind = AdjustmentKind::regression;
};

// Covariate-adjusted outcomes y_i - (v_i - vbar)' gamma_{Z_i}
// (- (alpha_w - 1) gamma_alpha,{Z_i} for the size-adjusted variant).
inline Eigen::VectorXd adjusted_outcomes(const ValidatedDesign& design,
                                         const Assignment& asg,
                                         const Eigen::VectorXd& y,
                                         const Eigen::MatrixXd& v,
                                         const RegressionFit& fit) {
  const int j_dim = static_cast<int>(v.cols());
  Eigen::VectorXd out = y;
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    const double alpha_dev = design.alpha(w) - 1.0;
    for (int s = 0; s < design.plot(w).size; ++s) {
      const int i = off + s;
      const int z = asg.arm_index(w, i);
      const Eigen::VectorXd& g = fit.gamma[z];
      double adj = 0.0;
      for (int j = 0; j < j_dim; ++j)
        adj += (v(i, j) - fit.v_mean[j]) * g[j];
      if (fit.kind == FitKind::aggregate_alpha) adj += alpha_dev * g[j_dim];
      out[i] -= adj;
    }
  }
  return out;
}

// Assembles the regression-adjusted estimate: tau = G beta, the W-scaled
// cluster-robust tau-tau block, and the cross block recomputed on the
// covariate-adjusted outcomes.
inline AdjustedEstimate adjusted_estimate(const ValidatedDesign& design,
                                          const Assignment& asg,
                                          const Eigen::VectorXd& y,
                                          const Eigen::MatrixXd& v,
                                          const Eigen::MatrixXd& x,
                                          const Eigen::MatrixXd& xx_population,
                                          const RegressionFit& fit) {
  AdjustedEstimate out;
  out.kind = fit.kind == FitKind::aggregate_alpha
                 ? AdjustmentKind::regression_alpha
                 : AdjustmentKind::regression;
  const Flavor flavor = fit.kind == FitKind::wls ? Flavor::hajek
                                                 : Flavor::horvitz_thompson;
  const auto& g = contrast_matrix();
  out.tau_hat = g * fit.beta;
  out.blocks.flavor = flavor;
  out.blocks.provenance = Provenance::estimated;
  out.blocks.tau_tau = design.whole_plots() *
                       (g * fit.vcov_cluster * g.transpose());
  const Eigen::VectorXd y_adj = adjusted_outcomes(design, asg, y, v, fit);
  out.blocks.tau_x =
      sigma_tau_cov_estimated(design, asg, y_adj, x, flavor);
  out.blocks.xx = xx_population;
  const PsdPseudo pseudo = psd_pseudo_inverse(xx_population);
  if (pseudo.rank == 0)
    throw SingularSigmaXX(
        "population covariate-contrast covariance is zero");
  out.blocks.parallel =
      out.blocks.tau_x * pseudo.pinv * out.blocks.tau_x.transpose();
  out.blocks.perp = psd_project(out.blocks.tau_tau - out.blocks.parallel);
  return out;
}

// Study-level constants for the projection estimator: the population
// covariance of the analysis-covariate contrasts and its inverse.
struct ProjectionContext {
  Eigen::MatrixXd vv;          // 3J x 3J
  Eigen::MatrixXd vv_inverse;
};

inline ProjectionContext make_projection_context(
    const ValidatedDesign& design, const Eigen::MatrixXd& v, Flavor flavor) {
  ProjectionContext out;
  const CovariateMoments moments = covariate_moments(design, v);
  require_covariate_rank(moments, flavor, "analysis");
  out.vv = sigma_xx(design, moments, flavor);
  const PsdPseudo pseudo = psd_pseudo_inverse(out.vv);
  if (pseudo.rank == 0)
    throw SingularSigmaVV(
        "analysis-covariate contrast covariance is zero");
  out.vv_inverse = pseudo.pinv;
  return out;
}

// Projection estimator: tau_hat minus its estimated asymptotic conditional
// bias given the analysis-covariate contrasts. Asymptotically normal under
// rerandomization with the residual covariance as the variance.
inline AdjustedEstimate projection_estimate(const ValidatedDesign& design,
                                            const Assignment& asg,
                                            const Eigen::VectorXd& y,
                                            const Eigen::MatrixXd& v,
                                            const ProjectionContext& ctx,
                                            Flavor flavor) {
  AdjustedEstimate out;
  out.kind = AdjustmentKind::projection;
  const ArmMeans arm = arm_estimate(y, asg, design, flavor);
  const Eigen::Vector3d tau = effect_estimate(arm);
  const Eigen::MatrixXd vc = v.rowwise() - v.colwise().mean().eval();
  const Eigen::VectorXd tau_v =
      covariate_contrasts(arm_estimate(vc, asg, design, flavor));
  const Eigen::MatrixXd tau_v_cov =
      sigma_tau_cov_estimated(design, asg, y, v, flavor);
  out.tau_hat = tau - tau_v_cov * ctx.vv_inverse * tau_v;
  out.blocks.flavor = flavor;
  out.blocks.provenance = Provenance::estimated;
  out.blocks.tau_tau = sigma_tau_tau_estimated(design, asg, y, flavor);
  out.blocks.tau_x = tau_v_cov;
  out.blocks.xx = ctx.vv;
  out.blocks.parallel =
      tau_v_cov * ctx.vv_inverse * tau_v_cov.transpose();
  out.blocks.perp = psd_project(out.blocks.tau_tau - out.blocks.parallel);
  return out;
}

// Within-whole-plot covariate variability diagnostics guiding the choice
// between size-adjusted regression and projection adjustment.
struct HeterogeneityDiagnostics {
  Eigen::MatrixXd q_in_vv;   // J x J within-plot finite population covariance
  Eigen::MatrixXd psi_vv;    // 4J x 4J
  double q_in_vv_norm = 0.0;
  double psi_vv_norm = 0.0;
};

inline HeterogeneityDiagnostics heterogeneity_diagnostics(
    const ValidatedDesign& design, const Eigen::MatrixXd& v) {
  const int j_dim = static_cast<int>(v.cols());
  HeterogeneityDiagnostics out;
  out.q_in_vv = Eigen::MatrixXd::Zero(j_dim, j_dim);
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int off = design.unit_offset(w);
    const int m = design.plot(w).size;
    const Eigen::RowVectorXd plot_mean = v.middleRows(off, m).colwise().mean();
    for (int s = 0; s < m; ++s) {
      const Eigen::RowVectorXd dev = v.row(off + s) - plot_mean;
      out.q_in_vv += dev.transpose() * dev;
    }
  }
  out.q_in_vv /= design.units() - 1;
  out.psi_vv = covariate_moments(design, v).psi;
  out.q_in_vv_norm =
      j_dim > 0 ? out.q_in_vv.cwiseAbs().maxCoeff() : 0.0;
  out.psi_vv_norm = j_dim > 0 ? out.psi_vv.cwiseAbs().maxCoeff() : 0.0;
  return out;
}

// Finite population covariances of the analysis covariates with themselves
// and with a column, centered at the grand mean.
inline Eigen::MatrixXd finite_population_vv(const Eigen::MatrixXd& v) {
  const Eigen::MatrixXd vc = v.rowwise() - v.colwise().mean().eval();
  return vc.transpose() * vc / (v.rows() - 1.0);
}

inline Eigen::VectorXd finite_population_vy(const Eigen::MatrixXd& v,
                                            const Eigen::VectorXd& y) {
  const Eigen::MatrixXd vc = v.rowwise() - v.colwise().mean().eval();
  return vc.transpose() * y / (v.rows() - 1.0);
}

}  // namespace splitplot
