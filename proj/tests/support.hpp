// Shared test utilities: synthetic corpora, quadrature oracles, helpers.
#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include "dpcalib/dataset.hpp"
#include "dpcalib/rng.hpp"

namespace testsupport {

// Two-class topical corpus: most tokens come from the class's half of the
// vocabulary, the rest are uniform. Optional label flips and per-example
// singleton tokens give an overfittable memorization surface.
struct SynthConfig {
  long n_examples = 2000;
  int vocab_size = 600;
  int tokens_per_example = 8;
  double topical_fraction = 0.8;
  double label_noise = 0.0;
  int unique_tokens_per_example = 0;
  std::uint64_t seed = 7;
};

inline std::vector<dpcalib::RawExample> make_synth_corpus(const SynthConfig& cfg) {
  dpcalib::RngStream rng(cfg.seed);
  std::vector<dpcalib::RawExample> out;
  out.reserve(cfg.n_examples);
  const int half = cfg.vocab_size / 2;
  char buf[48];
  for (long i = 0; i < cfg.n_examples; ++i) {
    dpcalib::RawExample ex;
    const int true_class = static_cast<int>(rng.uniform_index(2));
    for (int t = 0; t < cfg.tokens_per_example; ++t) {
      int idx;
      if (rng.uniform01() < cfg.topical_fraction) {
        idx = true_class * half + static_cast<int>(rng.uniform_index(half));
      } else {
        idx = static_cast<int>(rng.uniform_index(cfg.vocab_size));
      }
      std::snprintf(buf, sizeof(buf), "w%04d", idx);
      ex.tokens.emplace_back(buf);
    }
    for (int u = 0; u < cfg.unique_tokens_per_example; ++u) {
      std::snprintf(buf, sizeof(buf), "uniq%05ld_%d", i, u);
      ex.tokens.emplace_back(buf);
    }
    ex.label = (rng.uniform01() < cfg.label_noise) ? 1 - true_class : true_class;
    out.push_back(std::move(ex));
  }
  return out;
}

inline dpcalib::Dataset make_synth_dataset(const SynthConfig& cfg, double val_frac = 0.15,
                                           double test_frac = 0.15,
                                           std::size_t vocab_cap = 100000) {
  const auto raws = make_synth_corpus(cfg);
  const auto splits = dpcalib::split_raw(raws, val_frac, test_frac, cfg.seed ^ 0xabcdULL);
  return dpcalib::make_dataset(splits, vocab_cap);
}

// Adaptive Simpson quadrature.
inline double simpson_rec(const std::function<double(double)>& f, double a, double b, double fa,
                          double fm, double fb, double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) < 15.0 * tol)
    return left + right + (left + right - whole) / 15.0;
  return simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) +
         simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1);
}

// rel_tol is interpreted against a coarse magnitude estimate of the
// integral, so integrands of any scale terminate.
inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double rel_tol = 1e-12) {
  double scale = 0.0;
  const int coarse = 64;
  for (int i = 0; i <= coarse; ++i) {
    const double x = a + (b - a) * i / coarse;
    scale = std::max(scale, std::abs(f(x)));
  }
  const double tol = std::max(scale * (b - a), 1e-300) * rel_tol;
  const double m = 0.5 * (a + b);
  const double fa = f(a), fm = f(m), fb = f(b);
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_rec(f, a, b, fa, fm, fb, whole, tol, 30);
}

// Independent oracle for the VMF mean resultant length E[mu.y]: direct
// numerical integration of the cosine marginal
//   p(w) ~ exp(kappa w) (1 - w^2)^{(K-3)/2}.
// For large kappa the mass sits at w ~ 1; substituting t = kappa (1 - w)
// keeps the integrand representable.
inline double vmf_mean_cosine_quadrature(int dim, double kappa) {
  const double p = 0.5 * (dim - 3);
  if (kappa <= 30.0) {
    // Scaled by e^{-kappa} (cancels in the ratio) to stay O(1).
    const auto dens = [&](double w) {
      return std::exp(kappa * (w - 1.0)) * std::pow(1.0 - w * w, p);
    };
    const auto wdens = [&](double w) { return w * dens(w); };
    const double z = integrate(dens, -1.0 + 1e-12, 1.0 - 1e-12, 1e-13);
    return integrate(wdens, -1.0 + 1e-12, 1.0 - 1e-12, 1e-13) / z;
  }
  // t = kappa (1 - w); the e^kappa factor cancels in the ratio. t is capped
  // at 2 kappa (the w = -1 end of the support).
  const double tmax = std::min(60.0 + 12.0 * dim, 2.0 * kappa * (1.0 - 1e-12));
  const auto g = [&](double t) {
    return std::exp(-t) * std::pow(std::max(0.0, (t / kappa) * (2.0 - t / kappa)), p);
  };
  const auto wg = [&](double t) { return (1.0 - t / kappa) * g(t); };
  const double z = integrate(g, 1e-14, tmax, 1e-14);
  return integrate(wg, 1e-14, tmax, 1e-14) / z;
}

}  // namespace testsupport
