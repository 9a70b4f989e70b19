#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "splitplot/chi2.hpp"
#include "splitplot/errors.hpp"
#include "splitplot/linalg.hpp"
#include "splitplot/moments.hpp"
#include "splitplot/samplers.hpp"

namespace splitplot {

// Sampler of the limiting convolution phi = perp_sqrt * eps + coupling *
// zeta, with eps standard normal (3) and zeta ball-truncated normal (3L, d),
// independent.
struct LimitLawSampler {
  Eigen::Matrix3d perp_sqrt;
  Eigen::MatrixXd coupling;  // 3 x rank: Sigma_tau_x mapped through the
                             // inverse square root of Sigma_xx on its
                             // effective-rank subspace
  double d = 0.0;
  int mc_size = 100000;
};

// The truncated component lives on the effective-rank subspace of the
// covariate-contrast covariance; ball truncation is rotation invariant, so
// in the full-rank case this matches the symmetric inverse square root
// exactly in distribution.
inline LimitLawSampler make_limit_sampler(const SigmaBlocks& blocks, double d,
                                          int mc_size = 100000) {
  LimitLawSampler out;
  out.perp_sqrt = psd_sqrt(blocks.perp);
  const PsdPseudo pseudo = psd_pseudo_inverse(blocks.xx);
  if (pseudo.rank == 0)
    throw SingularSigmaXX(
        "covariate-contrast covariance is zero; cannot form coupling");
  out.coupling = blocks.tau_x * pseudo.inv_sqrt_basis;
  out.d = d;
  out.mc_size = mc_size;
  return out;
}

// Shared Monte-Carlo reference draws: eps (n x 3) and zeta (n x 3L). One
// batch can serve many samplers with the same (3L, d); only the linear maps
// differ.
struct PhiBatch {
  Eigen::MatrixXd eps;
  Eigen::MatrixXd zeta;
  double d = 0.0;
};

inline PhiBatch draw_phi_batch(int n, int k, double d, RngStream& rng,
                               std::uint64_t proposal_cap = 10000000) {
  PhiBatch out;
  RngStream eps_stream = rng.substream(0);
  RngStream zeta_stream = rng.substream(1);
  out.eps = sample_standard_normal_matrix(n, 3, eps_stream);
  out.zeta = sample_truncated_normal_ball_matrix(n, k, d, zeta_stream,
                                                 nullptr, proposal_cap);
  out.d = d;
  return out;
}

inline Eigen::MatrixXd phi_from_batch(const LimitLawSampler& sampler,
                                      const PhiBatch& batch) {
  return batch.eps * sampler.perp_sqrt.transpose() +
         batch.zeta * sampler.coupling.transpose();
}

// n independent draws of phi; eps and zeta come from independent substreams.
inline Eigen::MatrixXd sample_phi(const LimitLawSampler& sampler, int n,
                                  RngStream& rng) {
  const PhiBatch batch =
      draw_phi_batch(n, static_cast<int>(sampler.coupling.cols()), sampler.d,
                     rng);
  return phi_from_batch(sampler, batch);
}

// Empirical p-quantile (type 1: smallest order statistic with cdf >= p).
inline double empirical_quantile(std::vector<double>& values, double p) {
  const auto n = static_cast<std::ptrdiff_t>(values.size());
  std::ptrdiff_t k =
      static_cast<std::ptrdiff_t>(std::ceil(p * static_cast<double>(n))) - 1;
  k = std::clamp<std::ptrdiff_t>(k, 0, n - 1);
  std::nth_element(values.begin(), values.begin() + k, values.end());
  return values[k];
}

// Monte-Carlo 1-xi quantile of phi' perp^{-1} phi; deterministic given the
// batch (or the stream used to draw it).
inline double c_quantile(const LimitLawSampler& sampler,
                         const Eigen::Matrix3d& perp, double xi,
                         const PhiBatch& batch) {
  const auto inv = try_inverse_spd(perp);
  if (!inv)
    throw SingularPerp("residual covariance is singular; cannot normalize");
  const Eigen::MatrixXd phi = phi_from_batch(sampler, batch);
  std::vector<double> quad(phi.rows());
  for (Eigen::Index i = 0; i < phi.rows(); ++i) {
    const Eigen::Vector3d row = phi.row(i).transpose();
    quad[static_cast<size_t>(i)] = row.dot(inv->inverse * row);
  }
  return empirical_quantile(quad, 1.0 - xi);
}

inline double c_quantile(const LimitLawSampler& sampler,
                         const Eigen::Matrix3d& perp, double xi,
                         RngStream& rng) {
  const PhiBatch batch =
      draw_phi_batch(sampler.mc_size,
                     static_cast<int>(sampler.coupling.cols()), sampler.d,
                     rng);
  return c_quantile(sampler, perp, xi, batch);
}

enum class Scheme { randomized, rerandomized };
enum class RegionKind { wald_chi2, monte_carlo_quantile };

// Ellipsoidal confidence region {tau : W (tau_hat - tau)' shape^{-1}
// (tau_hat - tau) <= radius}.
struct ConfidenceRegion {
  Eigen::Vector3d center;
  Eigen::Matrix3d shape;
  double radius = 0.0;
  RegionKind kind = RegionKind::wald_chi2;
  double scale_w = 1.0;

  bool contains(const Eigen::Vector3d& tau) const {
    const Eigen::Vector3d dev = center - tau;
    const auto inv = try_inverse_spd(shape);
    if (!inv) throw SingularPerp("region shape matrix is singular");
    return scale_w * dev.dot(inv->inverse * dev) <= radius;
  }

  // Proportional to the ellipsoid volume; used for region comparisons.
  double log_volume() const {
    return 0.5 * std::log(shape.determinant()) + 1.5 * std::log(radius);
  }
};

// Classic scheme: shape Sigma_tau_tau, radius chi2_{3,1-xi}. Rerandomized
// scheme: shape Sigma_perp, radius the Monte-Carlo quantile c_hat.
inline ConfidenceRegion joint_region(const Eigen::Vector3d& tau_hat,
                                     const SigmaBlocks& blocks, Scheme scheme,
                                     double xi, double w_scale,
                                     const LimitLawSampler* sampler = nullptr,
                                     const PhiBatch* batch = nullptr,
                                     RngStream* rng = nullptr) {
  ConfidenceRegion out;
  out.center = tau_hat;
  out.scale_w = w_scale;
  if (scheme == Scheme::randomized) {
    out.shape = blocks.tau_tau;
    out.radius = chi2_quantile(3, 1.0 - xi);
    out.kind = RegionKind::wald_chi2;
    return out;
  }
  if (sampler == nullptr)
    throw ConfigError("rerandomized regions need a limit-law sampler");
  out.shape = blocks.perp;
  out.kind = RegionKind::monte_carlo_quantile;
  if (batch != nullptr)
    out.radius = c_quantile(*sampler, blocks.perp, xi, *batch);
  else if (rng != nullptr)
    out.radius = c_quantile(*sampler, blocks.perp, xi, *rng);
  else
    throw ConfigError("rerandomized regions need draws or a stream");
  return out;
}

struct EffectInterval {
  double estimate = 0.0;
  double half_width = 0.0;
  double se = 0.0;
  double lower() const { return estimate - half_width; }
  double upper() const { return estimate + half_width; }
  double length() const { return 2.0 * half_width; }
  bool covers(double value) const {
    return std::fabs(estimate - value) <= half_width;
  }
};

// Normal-law intervals: tau_j +/- z_{1-xi/2} sqrt(cov_jj / W).
inline std::array<EffectInterval, 3> per_effect_intervals_normal(
    const Eigen::Vector3d& tau_hat, const Eigen::Matrix3d& cov, double w,
    double xi) {
  const double z = normal_quantile(1.0 - 0.5 * xi);
  std::array<EffectInterval, 3> out;
  for (int j = 0; j < 3; ++j) {
    const double se = std::sqrt(std::max(cov(j, j), 0.0) / w);
    out[j] = EffectInterval{tau_hat[j], z * se, se};
  }
  return out;
}

// Convolution-law intervals: the half width is the 1-xi empirical quantile
// of |phi_j| / sqrt(W), a symmetric two-sided construction (for a normal
// phi_j this reproduces z_{1-xi/2} sigma_j). The se is the Monte-Carlo
// standard deviation of phi_j / sqrt(W).
inline std::array<EffectInterval, 3> per_effect_intervals_mc(
    const Eigen::Vector3d& tau_hat, const Eigen::MatrixXd& phi, double w,
    double xi) {
  std::array<EffectInterval, 3> out;
  const double inv_sqrt_w = 1.0 / std::sqrt(w);
  std::vector<double> abs_draws(static_cast<size_t>(phi.rows()));
  for (int j = 0; j < 3; ++j) {
    double mean = 0.0, sq = 0.0;
    for (Eigen::Index i = 0; i < phi.rows(); ++i) {
      const double v = phi(i, j);
      abs_draws[static_cast<size_t>(i)] = std::fabs(v);
      mean += v;
      sq += v * v;
    }
    mean /= static_cast<double>(phi.rows());
    const double var = sq / static_cast<double>(phi.rows()) - mean * mean;
    const double q = empirical_quantile(abs_draws, 1.0 - xi);
    out[j] = EffectInterval{tau_hat[j], q * inv_sqrt_w,
                            std::sqrt(std::max(var, 0.0)) * inv_sqrt_w};
  }
  return out;
}

}  // namespace splitplot
