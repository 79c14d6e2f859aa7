#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpcalib/bessel.hpp"
#include "dpcalib/errors.hpp"
#include "dpcalib/rng.hpp"
#include "dpcalib/sphere.hpp"

namespace dpcalib {

// von Mises-Fisher distribution on S^{K-1}: density proportional to
// exp(concentration * mean.y). concentration = 0 is the uniform distribution.
struct VmfParams {
  UnitVector mean_direction;
  double concentration;

  VmfParams(UnitVector mean, double kappa)
      : mean_direction(std::move(mean)), concentration(kappa) {
    if (!(kappa >= 0.0) || !std::isfinite(kappa))
      throw NumericError("VmfParams: concentration must be finite and >= 0");
  }

  Eigen::Index dim() const { return mean_direction.dim(); }
};

// log C_K(kappa), the normalisation constant with respect to the surface
// (unnormalised Lebesgue) measure on S^{K-1}:
//   C_K(kappa) = kappa^{K/2-1} / ((2 pi)^{K/2} I_{K/2-1}(kappa)).
// Only tests and diagnostics need this; sampling never evaluates Bessel
// functions.
inline double vmf_log_normalizer(int dim, double kappa) {
  if (dim < 2) throw NumericError("vmf_log_normalizer: dimension must be >= 2");
  if (kappa < 0.0) throw NumericError("vmf_log_normalizer: concentration must be >= 0");
  if (kappa == 0.0) return -log_sphere_area(dim);
  const double half = 0.5 * static_cast<double>(dim);
  return (half - 1.0) * std::log(kappa) - half * std::log(2.0 * M_PI) -
         log_bessel_i(half - 1.0, kappa);
}

inline double vmf_log_density(const VmfParams& p, const UnitVector& y) {
  p.mean_direction.require_same_dim(y);
  return vmf_log_normalizer(static_cast<int>(p.dim()), p.concentration) +
         p.concentration * p.mean_direction.dot(y);
}

// Mean resultant length A_K(kappa) = I_{K/2}(kappa) / I_{K/2-1}(kappa):
// the expected cosine between a draw and the mean direction.
inline double vmf_mean_resultant_length(int dim, double kappa) {
  if (dim < 2) throw NumericError("vmf_mean_resultant_length: dimension must be >= 2");
  if (kappa == 0.0) return 0.0;
  return bessel_i_ratio(0.5 * static_cast<double>(dim), kappa);
}

namespace vmf_detail {

inline constexpr std::uint64_t kMaxRejectionIterations = 1000000;

// Cosine w of the angle to the mean, drawn by rejection from the marginal
// density proportional to exp(kappa w) (1-w^2)^{(K-3)/2} (Ulrich/Wood).
// The envelope parameter b is evaluated as (K-1)/(2k + sqrt(4k^2 + (K-1)^2))
// and all acceptance quantities are formed from 1-w and 1-x0 directly, so the
// test stays exact up to kappa ~ 1e6 and beyond where the naive expressions
// cancel catastrophically.
inline double sample_cosine(int dim, double kappa, RngStream& rng) {
  const double km1 = static_cast<double>(dim - 1);
  const double b = km1 / (2.0 * kappa + std::sqrt(4.0 * kappa * kappa + km1 * km1));
  const double one_minus_x0 = 2.0 * b / (1.0 + b);          // 1 - x0
  const double x0 = 1.0 - one_minus_x0;
  const double log_one_minus_x0sq = std::log(4.0 * b) - 2.0 * std::log1p(b);  // log(1-x0^2)
  const double half_km1 = 0.5 * km1;

  for (std::uint64_t it = 0; it < kMaxRejectionIterations; ++it) {
    const double z = rng.beta(half_km1, half_km1);
    const double one_minus_w = 2.0 * b * z / (1.0 - (1.0 - b) * z);
    const double w = 1.0 - one_minus_w;
    // Acceptance statistic kappa (w - x0) + (K-1) log((1 - x0 w)/(1 - x0^2)),
    // with 1 - x0 w = (1 - x0) + x0 (1 - w).
    const double log_ratio =
        std::log(one_minus_x0 + x0 * one_minus_w) - log_one_minus_x0sq;
    const double stat = kappa * (one_minus_x0 - one_minus_w) + km1 * log_ratio;
    if (stat >= std::log(rng.uniform01_open())) return w;
  }
  throw NumericError("vmf sample: rejection loop exceeded iteration cap (RNG pathology?)");
}

// Householder reflection taking e1 to mu, applied to z.
inline Eigen::VectorXd reflect_e1_to(const UnitVector& mu, const Eigen::VectorXd& z) {
  Eigen::VectorXd u = -mu.coords();
  u[0] += 1.0;  // u = e1 - mu
  const double uu = u.squaredNorm();
  if (uu < 1e-24) return z;  // mu == e1
  return z - u * (2.0 * u.dot(z) / uu);
}

}  // namespace vmf_detail

// Draws one vector from the distribution: the cosine w to the mean comes from
// the rejection sampler, the tangent direction is uniform on the orthogonal
// subsphere, and the pair is rotated from the e1 frame to the mean direction
// by a reflection.
inline UnitVector vmf_sample(const VmfParams& p, RngStream& rng) {
  const Eigen::Index dim = p.dim();
  const double w = vmf_detail::sample_cosine(static_cast<int>(dim), p.concentration, rng);
  const double one_minus_w = 1.0 - w;
  // 1 - w^2 = (1-w)(2-(1-w)) avoids cancellation for w near +-1.
  const double sin_theta = std::sqrt(std::max(0.0, one_minus_w * (2.0 - one_minus_w)));

  Eigen::VectorXd z(dim);
  z[0] = w;
  if (dim == 2) {
    z[1] = (rng.next_u64() & 1) ? sin_theta : -sin_theta;
  } else {
    Eigen::VectorXd tangent(dim - 1);
    double norm = 0.0;
    do {
      for (Eigen::Index i = 0; i < dim - 1; ++i) tangent[i] = rng.gaussian();
      norm = tangent.norm();
    } while (norm == 0.0);
    z.tail(dim - 1) = tangent * (sin_theta / norm);
  }

  Eigen::VectorXd y = vmf_detail::reflect_e1_to(p.mean_direction, z);
  return UnitVector(y / y.norm());
}

// The VMF mechanism: perturb a point x on the unit sphere by sampling from
// VMF(mean = x, concentration = epsilon). For any y and inputs x, x' the
// densities satisfy density(x->y)/density(x'->y) <= exp(epsilon ||x - x'||),
// since the normalisers cancel and x.y - x'.y <= ||x - x'|| by Cauchy-Schwarz.
inline UnitVector vmf_mechanism_perturb(const UnitVector& x, double epsilon, RngStream& rng) {
  if (!(epsilon > 0.0)) throw NumericError("vmf mechanism: epsilon must be > 0");
  return vmf_sample(VmfParams(x, epsilon), rng);
}

struct ComposedPerturbation {
  std::vector<UnitVector> components;
  // Exponent of the composed guarantee over m orthogonal components:
  // 2 * epsilon * sqrt(m).
  double bound_exponent;
};

// Applies the mechanism independently to each orthogonal component of the
// decomposition. Draws consume one substream per component, so the m = 1
// case reproduces a single mechanism draw from substream 0.
inline ComposedPerturbation vmf_compose_orthogonal(const OrthoDecomposition& d, double epsilon,
                                                   RngStream& rng) {
  if (!(epsilon > 0.0)) throw NumericError("vmf mechanism: epsilon must be > 0");
  ComposedPerturbation out;
  out.components.reserve(d.size());
  const std::uint64_t base = rng.next_u64();
  RngStream parent(base);
  for (std::size_t i = 0; i < d.size(); ++i) {
    RngStream sub = parent.substream(i);
    out.components.push_back(vmf_mechanism_perturb(d.components()[i], epsilon, sub));
  }
  out.bound_exponent = 2.0 * epsilon * std::sqrt(static_cast<double>(d.size()));
  return out;
}

}  // namespace dpcalib
