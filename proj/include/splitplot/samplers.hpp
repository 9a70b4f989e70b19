#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "splitplot/errors.hpp"
#include "splitplot/rng.hpp"

namespace splitplot {

// Draw statistics of the ball-truncated normal sampler: proposals made and
// draws accepted, for acceptance-rate checks.
struct RejectionStats {
  std::uint64_t proposals = 0;
  std::uint64_t accepted = 0;
};

// One exact draw of a k-dimensional standard normal conditioned on
// ||.||^2 <= d, by plain rejection. The cap bounds consecutive rejected
// proposals per accepted draw.
// TODO: switch to the radial (chi-ball) sampler if acceptance rates far
// below 1e-3 are ever needed.
inline Eigen::VectorXd sample_truncated_normal_ball(
    int k, double d, RngStream& rng, RejectionStats* stats = nullptr,
    std::uint64_t proposal_cap = 10000000) {
  if (k < 1 || d <= 0.0)
    throw std::domain_error("sample_truncated_normal_ball: bad arguments");
  Eigen::VectorXd draw(k);
  for (std::uint64_t attempt = 1; attempt <= proposal_cap; ++attempt) {
    double norm2 = 0.0;
    for (int i = 0; i < k; ++i) {
      draw[i] = rng.standard_normal();
      norm2 += draw[i] * draw[i];
    }
    if (stats) ++stats->proposals;
    if (norm2 <= d) {
      if (stats) ++stats->accepted;
      return draw;
    }
  }
  throw RejectionBudgetExceeded(
      "truncated-normal proposal budget exhausted; threshold too tight");
}

// n draws stacked as rows.
inline Eigen::MatrixXd sample_truncated_normal_ball_matrix(
    int n, int k, double d, RngStream& rng, RejectionStats* stats = nullptr,
    std::uint64_t proposal_cap = 10000000) {
  Eigen::MatrixXd out(n, k);
  for (int i = 0; i < n; ++i)
    out.row(i) =
        sample_truncated_normal_ball(k, d, rng, stats, proposal_cap)
            .transpose();
  return out;
}

inline Eigen::MatrixXd sample_standard_normal_matrix(int n, int k,
                                                     RngStream& rng) {
  Eigen::MatrixXd out(n, k);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < k; ++j) out(i, j) = rng.standard_normal();
  return out;
}

}  // namespace splitplot
