#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

#include "splitplot/errors.hpp"

namespace splitplot {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

namespace detail {

inline double psd_eig_floor(const Matrix& m) {
  // Eigenvalues above -1e-9 * trace count as zero; Sigma-perp estimates can
  // be indefinite at the noise floor.
  return -1e-9 * std::max(m.trace(), 0.0) - 1e-300;
}

}  // namespace detail

inline bool is_symmetric(const Matrix& m, double rel_tol = 1e-12) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  return (m - m.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

// Symmetric square root of a PSD matrix by eigendecomposition; eigenvalues
// within the tolerance band below zero are clamped to zero.
inline Matrix psd_sqrt(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const double floor = detail::psd_eig_floor(m);
  Vector vals = eig.eigenvalues();
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] < floor)
      throw NotPsd("psd_sqrt: eigenvalue below the PSD tolerance");
    if (vals[i] < 0.0) vals[i] = 0.0;
  }
  return eig.eigenvectors() * vals.cwiseSqrt().asDiagonal() *
         eig.eigenvectors().transpose();
}

// Projects a symmetric matrix onto the PSD cone within the tolerance band;
// eigenvalues below the band raise NotPsd.
inline Matrix psd_clamp(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const double floor = detail::psd_eig_floor(m);
  Vector vals = eig.eigenvalues();
  bool touched = false;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals[i] < floor)
      throw NotPsd("psd_clamp: eigenvalue below the PSD tolerance");
    if (vals[i] < 0.0) {
      vals[i] = 0.0;
      touched = true;
    }
  }
  if (!touched) return m;
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

// Projection onto the PSD cone: every negative eigenvalue is set to zero.
// For estimated residual covariances, whose plug-in parallel parts can
// statistically overshoot in finite samples, this replaces the strict
// tolerance band of psd_clamp.
inline Matrix psd_project(const Matrix& m) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  Vector vals = eig.eigenvalues();
  if (vals.minCoeff() >= 0.0) return m;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (vals[i] < 0.0) vals[i] = 0.0;
  return eig.eigenvectors() * vals.asDiagonal() * eig.eigenvectors().transpose();
}

struct SpdInverse {
  Matrix inverse;
  double rcond = 0.0;
};

// Inverse of a symmetric positive definite matrix with a reciprocal condition
// number guard; empty when rcond falls below the floor.
inline std::optional<SpdInverse> try_inverse_spd(const Matrix& m,
                                                 double rcond_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector& vals = eig.eigenvalues();
  const double max_eig = vals.maxCoeff();
  const double min_eig = vals.minCoeff();
  if (max_eig <= 0.0) return std::nullopt;
  const double rcond = min_eig / max_eig;
  if (!(rcond > rcond_floor)) return std::nullopt;
  Matrix inv = eig.eigenvectors() * vals.cwiseInverse().asDiagonal() *
               eig.eigenvectors().transpose();
  return SpdInverse{std::move(inv), rcond};
}

// Rank-aware pseudo-inversion of a PSD matrix: eigenvalues below
// rcond_floor times the largest are treated as structural zeros (directions
// the statistic cannot move in), not as an error.
struct PsdPseudo {
  Matrix pinv;            // Moore-Penrose pseudoinverse
  Matrix inv_sqrt_basis;  // n x rank, columns u_i / sqrt(lambda_i)
  int rank = 0;
};

inline PsdPseudo psd_pseudo_inverse(const Matrix& m,
                                    double rcond_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector& vals = eig.eigenvalues();
  const double max_eig = std::max(vals.maxCoeff(), 0.0);
  PsdPseudo out;
  out.pinv = Matrix::Zero(m.rows(), m.cols());
  if (max_eig <= 0.0) return out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < vals.size(); ++i)
    if (vals[i] > rcond_floor * max_eig) keep.push_back(i);
  out.rank = static_cast<int>(keep.size());
  out.inv_sqrt_basis = Matrix::Zero(m.rows(), out.rank);
  for (int k = 0; k < out.rank; ++k) {
    const Eigen::Index i = keep[static_cast<size_t>(k)];
    const Vector u = eig.eigenvectors().col(i);
    out.pinv += u * u.transpose() / vals[i];
    out.inv_sqrt_basis.col(k) = u / std::sqrt(vals[i]);
  }
  return out;
}

// Inverse symmetric square root of an SPD matrix (same guard as above).
inline std::optional<Matrix> try_inverse_sqrt_spd(const Matrix& m,
                                                  double rcond_floor = 1e-12) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(m);
  const Vector& vals = eig.eigenvalues();
  const double max_eig = vals.maxCoeff();
  const double min_eig = vals.minCoeff();
  if (max_eig <= 0.0) return std::nullopt;
  if (!(min_eig / max_eig > rcond_floor)) return std::nullopt;
  return eig.eigenvectors() *
         vals.cwiseSqrt().cwiseInverse().asDiagonal() *
         eig.eigenvectors().transpose();
}

// kron(a, identity(dim)) with a row-block-major layout matching the stacked
// covariate-contrast convention used throughout.
inline Matrix kron_identity(const Matrix& a, int dim) {
  Matrix out = Matrix::Zero(a.rows() * dim, a.cols() * dim);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * dim, j * dim, dim, dim) =
          a(i, j) * Matrix::Identity(dim, dim);
  return out;
}

}  // namespace splitplot
