#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "dpcalib/errors.hpp"

namespace dpcalib {

// log of the modified Bessel function of the first kind, log I_nu(x), for
// nu >= 0, x >= 0. Three branches keep the evaluation stable over the whole
// parameter range used here (orders up to a few thousand, arguments up to
// the 1e6 concentration grid):
//
//   * ascending series, summed in log space, for small/moderate arguments;
//   * the large-argument expansion e^x/sqrt(2 pi x) * sum c_k x^-k when
//     x dominates nu^2;
//   * Olver's uniform large-order expansion for nu >= 100, which is valid
//     uniformly in x/nu.
namespace bessel_detail {

inline double log_series(double nu, double x) {
  // I_nu(x) = sum_k (x/2)^(nu+2k) / (k! Gamma(nu+k+1)); all terms positive,
  // so a streaming log-sum-exp over incrementally updated log terms is exact
  // enough and never overflows.
  const double log_half_x = std::log(0.5 * x);
  const double log_x2_over_4 = 2.0 * log_half_x;
  double log_term = nu * log_half_x - std::lgamma(nu + 1.0);
  double max_log = log_term;
  double sum = 1.0;
  // Terms grow until k ~ (sqrt(nu^2 + x^2) - nu)/2, then decay factorially.
  const double k_peak = 0.5 * (std::sqrt(nu * nu + x * x) - nu);
  const long max_terms = static_cast<long>(k_peak) + 200 +
                         static_cast<long>(8.0 * std::sqrt(k_peak + nu + 1.0));
  for (long k = 0; k < max_terms; ++k) {
    log_term += log_x2_over_4 - std::log(static_cast<double>(k + 1)) - std::log(nu + k + 1);
    if (log_term > max_log) {
      sum = sum * std::exp(max_log - log_term) + 1.0;
      max_log = log_term;
    } else {
      const double d = log_term - max_log;
      sum += std::exp(d);
      if (k > static_cast<long>(k_peak) && d < -40.0) break;
    }
  }
  return max_log + std::log(sum);
}

inline double log_large_argument(double nu, double x) {
  // I_nu(x) ~ e^x / sqrt(2 pi x) * sum_k c_k, c_0 = 1,
  // c_{k+1} = -c_k (4nu^2 - (2k+1)^2) / (8x(k+1)). Truncated at the smallest
  // term (the series is asymptotic).
  double c = 1.0;
  double sum = 1.0;
  double prev_abs = 1.0;
  const double mu = 4.0 * nu * nu;
  for (int k = 0; k < 30; ++k) {
    const double odd = 2.0 * k + 1.0;
    c *= -(mu - odd * odd) / (8.0 * x * (k + 1));
    if (std::abs(c) >= prev_abs) break;
    sum += c;
    prev_abs = std::abs(c);
    if (std::abs(c) < 1e-17 * std::abs(sum)) break;
  }
  return x - 0.5 * std::log(2.0 * M_PI * x) + std::log(sum);
}

inline double log_uniform_large_order(double nu, double x) {
  // Olver's expansion of I_nu(nu z):
  //   I_nu(nu z) ~ e^{nu eta} / (sqrt(2 pi nu) (1+z^2)^{1/4}) * sum u_k(t)/nu^k
  // with t = 1/sqrt(1+z^2), eta = sqrt(1+z^2) + log(z/(1+sqrt(1+z^2))).
  const double z = x / nu;
  const double root = std::sqrt(1.0 + z * z);
  const double t = 1.0 / root;
  const double eta = root + std::log(z / (1.0 + root));
  const double t2 = t * t;
  const double u1 = t * (3.0 - 5.0 * t2) / 24.0;
  const double u2 = t2 * (81.0 + t2 * (-462.0 + t2 * 385.0)) / 1152.0;
  const double u3 =
      t * t2 * (30375.0 + t2 * (-369603.0 + t2 * (765765.0 - t2 * 425425.0))) / 414720.0;
  const double u4 = t2 * t2 *
                    (4465125.0 +
                     t2 * (-94121676.0 +
                           t2 * (349922430.0 + t2 * (-446185740.0 + t2 * 185910725.0)))) /
                    39813120.0;
  const double series = 1.0 + u1 / nu + u2 / (nu * nu) + u3 / (nu * nu * nu) +
                        u4 / (nu * nu * nu * nu);
  return nu * eta - 0.5 * std::log(2.0 * M_PI * nu) - 0.25 * std::log(1.0 + z * z) +
         std::log(series);
}

}  // namespace bessel_detail

inline double log_bessel_i(double nu, double x) {
  if (nu < 0.0 || x < 0.0) throw NumericError("log_bessel_i: requires nu >= 0, x >= 0");
  if (x == 0.0) return nu == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
  if (nu >= 100.0) return bessel_detail::log_uniform_large_order(nu, x);
  if (x >= std::max(500.0, 10.0 * nu * nu)) return bessel_detail::log_large_argument(nu, x);
  return bessel_detail::log_series(nu, x);
}

// Ratio I_nu(x) / I_{nu-1}(x) in [0, 1), for nu >= 1/2. Evaluated by the
// backward (Miller-style) recurrence on ratios
//   r_mu = 1 / (2 mu / x + r_{mu+1}),
// started far enough in the tail that the seed error is contracted away;
// each downward step multiplies the error by r_mu^2 < 1/4 once mu > x.
// This avoids cancellation that a difference of log I evaluations would
// incur when the ratio is close to 1 (large x).
inline double bessel_i_ratio(double nu, double x) {
  if (nu < 0.5) throw NumericError("bessel_i_ratio: requires nu >= 1/2");
  if (x < 0.0) throw NumericError("bessel_i_ratio: requires x >= 0");
  if (x == 0.0) return 0.0;
  if (x > 4e6) {
    // Far beyond the experimental grid; two asymptotic terms are ample.
    const double a = (2.0 * nu - 1.0) / (2.0 * x);
    return 1.0 - a + a * (a + 1.0 / (2.0 * x)) / 2.0;
  }
  const long start = static_cast<long>(std::ceil(std::max(nu, 1.05 * x))) + 40;
  double r = 0.0;
  for (long m = start; m >= 0; --m) {
    const double mu = nu + static_cast<double>(m);
    r = 1.0 / (2.0 * mu / x + r);
  }
  return r;
}

// log of the surface area of S^{K-1}: log(2 pi^{K/2} / Gamma(K/2)).
inline double log_sphere_area(int dim) {
  if (dim < 2) throw NumericError("log_sphere_area: dimension must be >= 2");
  const double half = 0.5 * static_cast<double>(dim);
  return std::log(2.0) + half * std::log(M_PI) - std::lgamma(half);
}

}  // namespace dpcalib
