#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dpcalib/errors.hpp"

namespace dpcalib {

// Renyi-DP accounting for the subsampled Gaussian mechanism. The per-order
// Renyi divergence of one mechanism invocation is computed exactly (in log
// space) from the standard binomial-expansion bound; composition over steps
// is additive; conversion to (epsilon, delta)-DP happens at the end.

struct PrivacyBudget {
  double epsilon;      // target epsilon
  double delta;        // in (0, 1)
  double sample_rate;  // q = L / N, in (0, 1]
  long steps;          // T = epochs * ceil(N / L)

  void validate() const {
    if (!(epsilon > 0.0)) throw NumericError("PrivacyBudget: epsilon must be > 0");
    if (!(delta > 0.0 && delta < 1.0)) throw NumericError("PrivacyBudget: delta must be in (0,1)");
    if (!(sample_rate > 0.0 && sample_rate <= 1.0))
      throw NumericError("PrivacyBudget: sample rate must be in (0,1]");
    if (steps < 1) throw NumericError("PrivacyBudget: steps must be >= 1");
  }
};

// Training-shape helper: derives the accountant inputs the way the trainer
// consumes data (fixed-size lots, ceil(N/L) steps per epoch). The RDP bound
// below is stated for Poisson subsampling at rate q; the trainer's shuffled
// fixed-size lots with q = L/N are the usual practical stand-in.
struct DatasetShape {
  long n = 0;
  long batch = 0;
  long epochs = 0;

  double sample_rate() const { return static_cast<double>(batch) / static_cast<double>(n); }
  long steps() const { return epochs * ((n + batch - 1) / batch); }

  void validate() const {
    if (n < 1 || batch < 1 || epochs < 1) throw NumericError("DatasetShape: all fields must be >= 1");
    if (batch > n) throw NumericError("DatasetShape: batch larger than dataset");
  }
};

namespace rdp_detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_add(double a, double b) {
  if (a == -kInf) return b;
  if (b == -kInf) return a;
  const double m = std::max(a, b);
  return m + std::log1p(std::exp(std::min(a, b) - m));
}

inline double log_sub(double a, double b) {
  if (b == -kInf) return a;
  if (a <= b) return -kInf;  // only reached by cancellation at roundoff level
  return a + std::log1p(-std::exp(b - a));
}

inline double log_erfc(double x) {
  if (x <= 24.0) return std::log(std::erfc(x));
  // Asymptotic expansion; erfc underflows not long after this point.
  const double x2 = x * x;
  return -0.5 * std::log(M_PI) - std::log(x) - x2 +
         std::log1p(-0.5 / x2 + 0.75 / (x2 * x2) - 1.875 / (x2 * x2 * x2));
}

// One-step RDP of the sampled Gaussian at integer order alpha:
// (1/(alpha-1)) log sum_i C(alpha,i) (1-q)^(alpha-i) q^i e^{(i^2-i)/(2 sigma^2)}.
inline double log_a_integer(double q, double sigma, long alpha) {
  double log_a = -kInf;
  const double lg_alpha = std::lgamma(static_cast<double>(alpha) + 1.0);
  for (long i = 0; i <= alpha; ++i) {
    const double di = static_cast<double>(i);
    const double log_coef = lg_alpha - std::lgamma(di + 1.0) -
                            std::lgamma(static_cast<double>(alpha - i) + 1.0) +
                            di * std::log(q) + static_cast<double>(alpha - i) * std::log1p(-q);
    log_a = log_add(log_a, log_coef + (di * di - di) / (2.0 * sigma * sigma));
  }
  return log_a;
}

// Fractional orders: the binomial series splits the Gaussian integral at
// z0 = sigma^2 log(1/q - 1) + 1/2 and accumulates both halves in log space.
inline double log_a_fractional(double q, double sigma, double alpha) {
  double log_a0 = -kInf, log_a1 = -kInf;
  const double z0 = sigma * sigma * std::log(1.0 / q - 1.0) + 0.5;
  double log_abs_coef = 0.0;  // |binom(alpha, i)|, updated incrementally
  bool coef_positive = true;
  for (long i = 0; i < 100000; ++i) {
    const double di = static_cast<double>(i);
    const double j = alpha - di;
    const double log_t0 = log_abs_coef + di * std::log(q) + j * std::log1p(-q);
    const double log_t1 = log_abs_coef + j * std::log(q) + di * std::log1p(-q);
    const double log_e0 = std::log(0.5) + log_erfc((di - z0) / (M_SQRT2 * sigma));
    const double log_e1 = std::log(0.5) + log_erfc((z0 - j) / (M_SQRT2 * sigma));
    const double log_s0 = log_t0 + (di * di - di) / (2.0 * sigma * sigma) + log_e0;
    const double log_s1 = log_t1 + (j * j - j) / (2.0 * sigma * sigma) + log_e1;
    if (coef_positive) {
      log_a0 = log_add(log_a0, log_s0);
      log_a1 = log_add(log_a1, log_s1);
    } else {
      log_a0 = log_sub(log_a0, log_s0);
      log_a1 = log_sub(log_a1, log_s1);
    }
    if (std::max(log_s0, log_s1) < -30.0) break;
    // binom(alpha, i+1) = binom(alpha, i) * (alpha - i) / (i + 1)
    const double factor = (alpha - di) / (di + 1.0);
    if (factor < 0.0) coef_positive = !coef_positive;
    log_abs_coef += std::log(std::abs(factor));
  }
  return log_add(log_a0, log_a1);
}

inline double rdp_one_step(double q, double sigma, double alpha) {
  if (q == 0.0) return 0.0;
  if (q == 1.0) return alpha / (2.0 * sigma * sigma);
  const double integral = (std::floor(alpha) == alpha)
                              ? log_a_integer(q, sigma, static_cast<long>(alpha))
                              : log_a_fractional(q, sigma, alpha);
  return integral / (alpha - 1.0);
}

}  // namespace rdp_detail

// Dense default order grid; Table-style sigma values depend mildly on the
// grid, which is why every entry point accepts a custom one.
inline std::vector<double> default_rdp_orders() {
  std::vector<double> orders;
  for (int i = 1; i < 100; ++i) orders.push_back(1.0 + i / 10.0);
  for (int a = 12; a < 64; ++a) orders.push_back(static_cast<double>(a));
  return orders;
}

// Cumulative RDP after `steps` compositions of the subsampled Gaussian, one
// value per order. sigma = 0 yields the infinite-budget signal (+inf per
// order) rather than an exception.
inline std::vector<double> rdp_of_subsampled_gaussian(double sigma, double sample_rate,
                                                      long steps,
                                                      const std::vector<double>& orders) {
  if (sigma < 0.0) throw NumericError("rdp: sigma must be >= 0");
  if (!(sample_rate > 0.0 && sample_rate <= 1.0))
    throw NumericError("rdp: sample rate must be in (0,1]");
  if (steps < 1) throw NumericError("rdp: steps must be >= 1");
  std::vector<double> out;
  out.reserve(orders.size());
  for (const double alpha : orders) {
    if (!(alpha > 1.0)) throw NumericError("rdp: orders must be > 1");
    if (sigma == 0.0) {
      out.push_back(rdp_detail::kInf);
    } else {
      out.push_back(static_cast<double>(steps) *
                    rdp_detail::rdp_one_step(sample_rate, sigma, alpha));
    }
  }
  return out;
}

enum class RdpConversion {
  // epsilon = min_alpha [ rdp(alpha) + log(1/delta)/(alpha-1) ].
  Classic,
  // The tighter conversion used by the common DP-SGD accountants whose
  // reported noise-multiplier tables this module reproduces:
  // epsilon = min_alpha [ rdp - (log delta + log alpha)/(alpha-1)
  //                       + log((alpha-1)/alpha) ].
  Improved,
};

// RDP -> (epsilon, delta): returns the minimal epsilon over the order grid
// and the order attaining it.
inline std::pair<double, double> epsilon_from_rdp(const std::vector<double>& rdp,
                                                  const std::vector<double>& orders, double delta,
                                                  RdpConversion conversion = RdpConversion::Classic) {
  if (rdp.empty() || orders.empty()) throw DataError("epsilon_from_rdp: empty inputs");
  if (rdp.size() != orders.size()) throw DataError("epsilon_from_rdp: misaligned inputs");
  if (!(delta > 0.0 && delta < 1.0)) throw NumericError("epsilon_from_rdp: delta must be in (0,1)");
  double best_eps = rdp_detail::kInf;
  double best_order = orders.front();
  for (std::size_t i = 0; i < rdp.size(); ++i) {
    const double alpha = orders[i];
    if (std::isinf(rdp[i])) continue;
    double eps;
    if (conversion == RdpConversion::Classic) {
      eps = rdp[i] + std::log(1.0 / delta) / (alpha - 1.0);
    } else {
      eps = rdp[i] - (std::log(delta) + std::log(alpha)) / (alpha - 1.0) +
            std::log((alpha - 1.0) / alpha);
    }
    eps = std::max(0.0, eps);
    if (eps < best_eps) {
      best_eps = eps;
      best_order = alpha;
    }
  }
  return {best_eps, best_order};
}

// End-to-end accounted epsilon for a given noise multiplier.
inline double accounted_epsilon(double sigma, double sample_rate, long steps, double delta,
                                const std::vector<double>& orders,
                                RdpConversion conversion = RdpConversion::Improved) {
  const auto rdp = rdp_of_subsampled_gaussian(sigma, sample_rate, steps, orders);
  return epsilon_from_rdp(rdp, orders, delta, conversion).first;
}

// The VMF mechanism carries no (epsilon, delta) accounting -- its guarantees
// live on a different scale and are not comparable to the Gaussian budget,
// which is the point of calibrating empirically. What can be stated exactly:
// per batch the mechanism is kappa*d2-private in the worst-case pairwise
// Euclidean distance, and since that distance is at most 2 on the unit
// sphere, it is also (2*kappa)-DP in the classical sense.
struct VmfGuarantee {
  double concentration = 0.0;
  double batch_d2_epsilon = 0.0;  // coefficient of the d2 batch guarantee
  double pure_dp_epsilon = 0.0;   // classical epsilon via the diameter bound
};

inline VmfGuarantee vmf_guarantee_metadata(double kappa) {
  if (!(kappa >= 0.0)) throw NumericError("vmf_guarantee_metadata: kappa must be >= 0");
  return {kappa, kappa, 2.0 * kappa};
}

inline constexpr double kSigmaBracketLow = 1e-3;
inline constexpr double kSigmaBracketHigh = 1e2;

// Smallest noise multiplier (to 1e-4 relative) whose accounted epsilon does
// not exceed the target. Throws if the target is outside what the bracket
// [1e-3, 100] can express, reporting both endpoint epsilons.
inline double sigma_for_target_epsilon(const PrivacyBudget& budget,
                                       const std::vector<double>& orders = default_rdp_orders(),
                                       RdpConversion conversion = RdpConversion::Improved) {
  budget.validate();
  const auto eps_of = [&](double sigma) {
    return accounted_epsilon(sigma, budget.sample_rate, budget.steps, budget.delta, orders,
                             conversion);
  };
  double lo = kSigmaBracketLow, hi = kSigmaBracketHigh;
  const double eps_lo = eps_of(lo), eps_hi = eps_of(hi);
  if (!(eps_lo > budget.epsilon) || !(eps_hi <= budget.epsilon)) {
    throw NumericError("sigma_for_target_epsilon: target epsilon " + std::to_string(budget.epsilon) +
                       " infeasible in sigma bracket [" + std::to_string(kSigmaBracketLow) + ", " +
                       std::to_string(kSigmaBracketHigh) + "]: accounted epsilon spans [" +
                       std::to_string(eps_hi) + ", " + std::to_string(eps_lo) + "]");
  }
  while (hi / lo > 1.0 + 1e-4) {
    const double mid = std::sqrt(lo * hi);
    if (eps_of(mid) > budget.epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return hi;
}

}  // namespace dpcalib
