#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "dpcalib/errors.hpp"
#include "dpcalib/rng.hpp"

namespace dpcalib {

inline constexpr double kUnitNormTolerance = 1e-9;

// Rescales v to the given norm, preserving direction. Throws NumericError on
// a zero (or non-finite) input, which cannot be mapped to the sphere.
inline Eigen::VectorXd normalize(const Eigen::VectorXd& v, double target_norm) {
  if (target_norm <= 0.0) throw NumericError("normalize: target norm must be positive");
  const double n = v.norm();
  if (n == 0.0) throw NumericError("normalize: zero vector has no direction");
  if (!std::isfinite(n)) throw NumericError("normalize: non-finite input vector");
  return v * (target_norm / n);
}

// A point on the unit sphere S^{K-1}, K >= 2. The constructor enforces the
// norm invariant; use direction() to project an arbitrary nonzero vector.
class UnitVector {
 public:
  explicit UnitVector(Eigen::VectorXd coords) : coords_(std::move(coords)) {
    if (coords_.size() < 2) throw NumericError("UnitVector: dimension must be >= 2");
    const double n = coords_.norm();
    if (std::abs(n - 1.0) > kUnitNormTolerance)
      throw NumericError("UnitVector: norm " + std::to_string(n) + " is not 1");
  }

  static UnitVector direction(const Eigen::VectorXd& v) {
    return UnitVector(normalize(v, 1.0));
  }

  const Eigen::VectorXd& coords() const { return coords_; }
  Eigen::Index dim() const { return coords_.size(); }

  double dot(const UnitVector& other) const {
    require_same_dim(other);
    return coords_.dot(other.coords_);
  }

  void require_same_dim(const UnitVector& other) const {
    if (dim() != other.dim())
      throw NumericError("UnitVector: dimension mismatch (" + std::to_string(dim()) +
                         " vs " + std::to_string(other.dim()) + ")");
  }

 private:
  Eigen::VectorXd coords_;
};

// Angular distance arccos(a.b) in [0, pi]. The dot product is clamped to
// [-1, 1] so floating-point drift near identical/antipodal pairs cannot
// produce NaN.
inline double angular_distance(const UnitVector& a, const UnitVector& b) {
  const double d = std::clamp(a.dot(b), -1.0, 1.0);
  return std::acos(d);
}

// Euclidean (chord) distance ||a - b|| in [0, 2].
inline double euclidean_distance(const UnitVector& a, const UnitVector& b) {
  a.require_same_dim(b);
  return (a.coords() - b.coords()).norm();
}

// Uniform draw from S^{K-1}: normalized isotropic Gaussian.
inline UnitVector uniform_unit_vector(Eigen::Index dim, RngStream& rng) {
  if (dim < 2) throw NumericError("uniform_unit_vector: dimension must be >= 2");
  Eigen::VectorXd g(dim);
  for (;;) {
    for (Eigen::Index i = 0; i < dim; ++i) g[i] = rng.gaussian();
    const double n = g.norm();
    if (n > 0.0) return UnitVector(g / n);
  }
}

// A vector expressed over mutually orthogonal unit components u_i with
// weights |lambda_i| <= 1. Validated on construction.
class OrthoDecomposition {
 public:
  OrthoDecomposition(std::vector<UnitVector> components, std::vector<double> weights)
      : components_(std::move(components)), weights_(std::move(weights)) {
    if (components_.empty()) throw NumericError("OrthoDecomposition: no components");
    if (components_.size() != weights_.size())
      throw NumericError("OrthoDecomposition: components/weights size mismatch");
    for (std::size_t i = 0; i < components_.size(); ++i) {
      if (std::abs(weights_[i]) > 1.0 + 1e-12)
        throw NumericError("OrthoDecomposition: |weight| > 1 at index " + std::to_string(i));
      for (std::size_t j = i + 1; j < components_.size(); ++j) {
        if (std::abs(components_[i].dot(components_[j])) > 1e-8)
          throw NumericError("OrthoDecomposition: components " + std::to_string(i) + " and " +
                             std::to_string(j) + " are not orthogonal");
      }
    }
  }

  const std::vector<UnitVector>& components() const { return components_; }
  const std::vector<double>& weights() const { return weights_; }
  std::size_t size() const { return components_.size(); }

 private:
  std::vector<UnitVector> components_;
  std::vector<double> weights_;
};

}  // namespace dpcalib
