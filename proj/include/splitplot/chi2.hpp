#pragma once

#include <cmath>
#include <stdexcept>

#include "splitplot/errors.hpp"

namespace splitplot {

namespace detail {

// Regularized lower incomplete gamma P(a, x), series branch (x < a + 1).
inline double gamma_p_series(double a, double x) {
  double ap = a;
  double term = 1.0 / a;
  double sum = term;
  for (int n = 0; n < 1000; ++n) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-17) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Regularized upper incomplete gamma Q(a, x) by modified Lentz continued
// fraction (x >= a + 1).
inline double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 1000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-17) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

inline double gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0 || !std::isfinite(x))
    throw std::domain_error("gamma_p: invalid arguments");
  if (x == 0.0) return 0.0;
  return x < a + 1.0 ? gamma_p_series(a, x) : 1.0 - gamma_q_contfrac(a, x);
}

}  // namespace detail

// Chi-squared CDF with k degrees of freedom: P(k/2, x/2).
inline double chi2_cdf(int k, double x) {
  if (k < 1) throw std::domain_error("chi2_cdf: dof must be positive");
  if (x < 0.0) throw std::domain_error("chi2_cdf: negative argument");
  return detail::gamma_p(0.5 * k, 0.5 * x);
}

// Inverts chi2_cdf by bracketing bisection; accurate to ~1e-12 relative.
inline double chi2_quantile(int k, double p) {
  if (k < 1) throw std::domain_error("chi2_quantile: dof must be positive");
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("chi2_quantile: p must lie in (0, 1)");
  double lo = 0.0;
  double hi = static_cast<double>(k) + 10.0;
  while (chi2_cdf(k, hi) < p) {
    hi *= 2.0;
    if (hi > 1e12) break;
  }
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (chi2_cdf(k, mid) < p)
      lo = mid;
    else
      hi = mid;
    if (hi - lo < 1e-13 * (1.0 + hi)) break;
  }
  return 0.5 * (lo + hi);
}

// Variance-shrinkage factor of a standard normal vector truncated to the
// ball of squared radius d: pr(chi2_{k+2} <= d) / pr(chi2_k <= d).
inline double r_factor(int k, double d) {
  if (d <= 0.0) throw std::domain_error("r_factor: d must be positive");
  const double denom = chi2_cdf(k, d);
  if (denom < 1e-300)
    throw Underflow("r_factor: pr(chi2 <= d) underflows for the given d");
  return chi2_cdf(k + 2, d) / denom;
}

// Standard normal quantile for p in (0, 1), via the chi2(1) relation
// P(|Z| <= z) = P(chi2_1 <= z^2).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0))
    throw std::domain_error("normal_quantile: p must lie in (0, 1)");
  if (p == 0.5) return 0.0;
  const double tail = p > 0.5 ? 2.0 * p - 1.0 : 1.0 - 2.0 * p;
  const double z = std::sqrt(chi2_quantile(1, tail));
  return p > 0.5 ? z : -z;
}

}  // namespace splitplot
