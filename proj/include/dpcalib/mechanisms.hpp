#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "dpcalib/errors.hpp"
#include "dpcalib/rng.hpp"
#include "dpcalib/sphere.hpp"
#include "dpcalib/vmf.hpp"

namespace dpcalib {

enum class NoiseKind { None, Gaussian, Vmf };

inline const char* noise_kind_name(NoiseKind k) {
  switch (k) {
    case NoiseKind::None: return "none";
    case NoiseKind::Gaussian: return "gaussian";
    case NoiseKind::Vmf: return "vmf";
  }
  return "?";
}

// Mechanism parameterization: sigma (noise multiplier) for Gaussian, kappa
// (concentration) for VMF. The clip norm is fixed to 1. An optional partition
// lists per-segment lengths of the flattened gradient; the VMF path then
// noises each segment on its own unit sphere (composition over orthogonal
// subspaces), instead of the default whole-vector treatment.
struct NoiseSpec {
  NoiseKind kind = NoiseKind::None;
  double parameter = 0.0;
  double clip_norm = 1.0;
  std::vector<Eigen::Index> partition;

  void validate() const {
    if (!(parameter >= 0.0) || !std::isfinite(parameter))
      throw NumericError("NoiseSpec: parameter must be finite and >= 0");
    if (kind == NoiseKind::None && parameter != 0.0)
      throw NumericError("NoiseSpec: kind=none requires parameter 0");
    if (clip_norm != 1.0) throw NumericError("NoiseSpec: clip norm is fixed to 1");
  }
};

// Standard DP-SGD clipping: g -> g / max(1, ||g|| / clip_norm).
inline Eigen::VectorXd clip_to_norm(const Eigen::VectorXd& g, double clip_norm) {
  const double n = g.norm();
  const double scale = std::max(1.0, n / clip_norm);
  return g / scale;
}

// Gaussian mechanism over a lot: (sum_i g_i + z) / L with z spherical
// Gaussian of per-coordinate std sigma * clip_norm. Inputs must already be
// clipped to the clip norm.
inline Eigen::VectorXd gaussian_perturb_sum(const std::vector<Eigen::VectorXd>& per_sample,
                                            double sigma, double clip_norm, RngStream& rng) {
  if (per_sample.empty()) throw DataError("gaussian_perturb_sum: empty lot");
  if (sigma < 0.0) throw NumericError("gaussian_perturb_sum: sigma must be >= 0");
  const Eigen::Index dim = per_sample.front().size();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (const auto& g : per_sample) {
    if (g.size() != dim) throw DataError("gaussian_perturb_sum: dimension mismatch in lot");
    if (g.norm() > clip_norm * (1.0 + 1e-9))
      throw NumericError("gaussian_perturb_sum: input exceeds clip norm (caller must clip)");
    sum += g;
  }
  if (sigma > 0.0) {
    const double std = sigma * clip_norm;
    for (Eigen::Index i = 0; i < dim; ++i) sum[i] += std * rng.gaussian();
  }
  return sum / static_cast<double>(per_sample.size());
}

// VMF mechanism over a lot: independent draw VMF(kappa, g_i) per sample,
// averaged. Output norm is at most 1. Each sample draws from its own
// substream; the summation order is fixed, so results are bit-reproducible.
inline Eigen::VectorXd vmf_perturb_mean(const std::vector<UnitVector>& per_sample, double kappa,
                                        RngStream& rng) {
  if (per_sample.empty()) throw DataError("vmf_perturb_mean: empty lot");
  const Eigen::Index dim = per_sample.front().dim();
  const std::uint64_t base = rng.next_u64();
  RngStream parent(base);
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    per_sample.front().require_same_dim(per_sample[i]);
    RngStream sub = parent.substream(i);
    sum += vmf_sample(VmfParams(per_sample[i], kappa), sub).coords();
  }
  return sum / static_cast<double>(per_sample.size());
}

struct NoisedStep {
  Eigen::VectorXd gradient;
  // Exact-zero per-sample gradients (or partition segments) that were mapped
  // to a uniformly random direction on the VMF path.
  int zero_gradients = 0;
};

namespace mech_detail {

inline UnitVector unit_or_uniform(const Eigen::VectorXd& g, RngStream& rng, int* zero_count) {
  if (g.norm() == 0.0) {
    ++*zero_count;
    return uniform_unit_vector(g.size(), rng);
  }
  return UnitVector::direction(g);
}

}  // namespace mech_detail

// One private aggregation step over per-sample gradients, dispatching on the
// mechanism:
//   none     -> plain mean;
//   gaussian -> clip each sample to the clip norm, then gaussian_perturb_sum;
//   vmf      -> scale each sample to norm 1 (a zero gradient becomes a
//               uniformly random direction, counted in the result), then
//               vmf_perturb_mean; with a partition, per segment.
inline NoisedStep dp_noise_step(const std::vector<Eigen::VectorXd>& per_sample_grads,
                                const NoiseSpec& spec, RngStream& rng) {
  spec.validate();
  if (per_sample_grads.empty()) throw DataError("dp_noise_step: empty lot");
  const Eigen::Index dim = per_sample_grads.front().size();
  for (const auto& g : per_sample_grads)
    if (g.size() != dim) throw DataError("dp_noise_step: dimension mismatch in lot");

  NoisedStep out;
  switch (spec.kind) {
    case NoiseKind::None: {
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
      for (const auto& g : per_sample_grads) sum += g;
      out.gradient = sum / static_cast<double>(per_sample_grads.size());
      return out;
    }
    case NoiseKind::Gaussian: {
      std::vector<Eigen::VectorXd> clipped;
      clipped.reserve(per_sample_grads.size());
      for (const auto& g : per_sample_grads) clipped.push_back(clip_to_norm(g, spec.clip_norm));
      out.gradient = gaussian_perturb_sum(clipped, spec.parameter, spec.clip_norm, rng);
      return out;
    }
    case NoiseKind::Vmf: {
      if (spec.partition.empty()) {
        std::vector<UnitVector> units;
        units.reserve(per_sample_grads.size());
        RngStream zero_stream = rng.substream(0x7e70);
        for (const auto& g : per_sample_grads)
          units.push_back(mech_detail::unit_or_uniform(g, zero_stream, &out.zero_gradients));
        out.gradient = vmf_perturb_mean(units, spec.parameter, rng);
        return out;
      }
      Eigen::Index total = 0;
      for (const auto len : spec.partition) {
        if (len < 2) throw NumericError("dp_noise_step: partition segments must have length >= 2");
        total += len;
      }
      if (total != dim) throw DataError("dp_noise_step: partition does not cover the gradient");
      const std::uint64_t base = rng.next_u64();
      RngStream parent(base);
      Eigen::VectorXd sum = Eigen::VectorXd::Zero(dim);
      for (std::size_t i = 0; i < per_sample_grads.size(); ++i) {
        RngStream sample_stream = parent.substream(i);
        Eigen::Index offset = 0;
        for (std::size_t s = 0; s < spec.partition.size(); ++s) {
          const Eigen::Index len = spec.partition[s];
          RngStream seg_stream = sample_stream.substream(s);
          const Eigen::VectorXd seg = per_sample_grads[i].segment(offset, len);
          const UnitVector u =
              mech_detail::unit_or_uniform(seg, seg_stream, &out.zero_gradients);
          sum.segment(offset, len) +=
              vmf_sample(VmfParams(u, spec.parameter), seg_stream).coords();
          offset += len;
        }
      }
      out.gradient = sum / static_cast<double>(per_sample_grads.size());
      return out;
    }
  }
  throw NumericError("dp_noise_step: unknown mechanism");
}

}  // namespace dpcalib
