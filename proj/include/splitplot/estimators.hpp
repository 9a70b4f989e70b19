#pragma once

#include <Eigen/Dense>

#include "splitplot/design.hpp"
#include "splitplot/errors.hpp"

namespace splitplot {

enum class Flavor { horvitz_thompson, hajek };

// Contrast matrix G mapping the four arm means (z-order 00, 01, 10, 11) to
// the two main effects and the interaction. G annihilates constants.
inline const Eigen::Matrix<double, 3, 4>& contrast_matrix() {
  static const Eigen::Matrix<double, 3, 4> g = [] {
    Eigen::Matrix<double, 3, 4> m;
    m << -0.5, -0.5, 0.5, 0.5,  //
        -0.5, 0.5, -0.5, 0.5,   //
        1.0, -1.0, -1.0, 1.0;
    return m;
  }();
  return g;
}

// Arm-level estimates of per-unit values: row z holds the inverse-probability
// weighted mean over S(z). The Hajek flavor divides by the HT estimate of the
// constant one; the normalizers are carried in both flavors.
struct ArmMeans {
  Eigen::MatrixXd values;  // 4 x dim
  Eigen::Vector4d normalizers;
  Flavor flavor = Flavor::horvitz_thompson;
};

// Generic over the value dimension, so outcome, x, and v arm means all come
// from the same pass.
inline ArmMeans arm_estimate(const Eigen::MatrixXd& values,
                             const Assignment& asg,
                             const ValidatedDesign& design, Flavor flavor) {
  const int dim = static_cast<int>(values.cols());
  const double inv_n = 1.0 / design.units();
  ArmMeans out;
  out.values = Eigen::MatrixXd::Zero(4, dim);
  out.normalizers.setZero();
  out.flavor = flavor;
  for (int w = 0; w < design.whole_plots(); ++w) {
    const int a = asg.a_levels[w];
    const int off = design.unit_offset(w);
    const double base = inv_n / design.arm_prob(a);
    const double wt_b0 = base / design.subplot_prob(w, 0);
    const double wt_b1 = base / design.subplot_prob(w, 1);
    Eigen::RowVectorXd acc0 = Eigen::RowVectorXd::Zero(dim);
    Eigen::RowVectorXd acc1 = Eigen::RowVectorXd::Zero(dim);
    int count1 = 0;
    for (int s = 0; s < design.plot(w).size; ++s) {
      if (asg.b_levels[off + s]) {
        acc1 += values.row(off + s);
        ++count1;
      } else {
        acc0 += values.row(off + s);
      }
    }
    out.values.row(2 * a) += wt_b0 * acc0;
    out.values.row(2 * a + 1) += wt_b1 * acc1;
    out.normalizers[2 * a] += wt_b0 * (design.plot(w).size - count1);
    out.normalizers[2 * a + 1] += wt_b1 * count1;
  }
  for (int z = 0; z < 4; ++z) {
    if (!(out.normalizers[z] > 0.0))
      throw EmptyArm("arm_estimate: no units observed under one arm");
  }
  if (flavor == Flavor::hajek)
    out.values.array().colwise() /= out.normalizers.array();
  return out;
}

// tau_hat = G * arm means; scalar outcomes only.
inline Eigen::Vector3d effect_estimate(const ArmMeans& arm) {
  if (arm.values.cols() != 1)
    throw CountMismatch("effect_estimate expects scalar arm means");
  return contrast_matrix() * arm.values.col(0);
}

// Stacked covariate contrasts (A block, B block, AB block), i.e.
// (G kron I_L) applied to the stacked arm means. The block order is fixed
// repo-wide.
inline Eigen::VectorXd covariate_contrasts(const ArmMeans& arm) {
  const int dim = static_cast<int>(arm.values.cols());
  const auto& g = contrast_matrix();
  Eigen::VectorXd out(3 * dim);
  for (int r = 0; r < 3; ++r) {
    Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(dim);
    for (int z = 0; z < 4; ++z) acc += g(r, z) * arm.values.row(z);
    out.segment(r * dim, dim) = acc.transpose();
  }
  return out;
}

}  // namespace splitplot
