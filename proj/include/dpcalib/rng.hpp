#pragma once

#include <cmath>
#include <cstdint>

namespace dpcalib {

namespace detail {

inline std::uint64_t splitmix64_next(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t mix_key(std::uint64_t key, std::uint64_t label) {
  std::uint64_t s = key ^ (0x9e3779b97f4a7c15ULL + (label << 1));
  std::uint64_t a = splitmix64_next(s);
  s ^= label * 0xd1342543de82ef95ULL;
  return a ^ splitmix64_next(s);
}

inline std::uint64_t rotl(std::uint64_t x, int k) {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

// Deterministic, platform-independent random stream (xoshiro256** seeded via
// splitmix64). The standard library distributions are deliberately not used:
// their algorithms are implementation-defined, and every experiment here must
// be bit-reproducible from a 64-bit seed. Streams are cheap to derive; every
// stochastic operation in the library takes an explicit stream.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : key_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = detail::splitmix64_next(s);
  }

  // Independent stream addressed by a label path, e.g. substream(2, step).
  RngStream substream(std::uint64_t a) const {
    return RngStream(detail::mix_key(key_, a));
  }
  RngStream substream(std::uint64_t a, std::uint64_t b) const {
    return RngStream(detail::mix_key(detail::mix_key(key_, a), b));
  }
  RngStream substream(std::uint64_t a, std::uint64_t b, std::uint64_t c) const {
    return RngStream(detail::mix_key(detail::mix_key(detail::mix_key(key_, a), b), c));
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1); safe as a log() argument.
  double uniform01_open() {
    double u;
    do {
      u = uniform01();
    } while (u == 0.0);
    return u;
  }

  // Standard normal via the polar method (no libm distribution involved).
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform01() - 1.0;
      v = 2.0 * uniform01() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    const std::uint64_t limit = n * ((~std::uint64_t{0}) / n);
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  // Gamma(shape, 1) by Marsaglia-Tsang; shape < 1 handled by boosting.
  double gamma(double shape) {
    if (shape < 1.0) {
      const double u = uniform01_open();
      return gamma(shape + 1.0) * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = gaussian();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform01_open();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return d * v;
    }
  }

  double beta(double a, double b) {
    const double x = gamma(a);
    const double y = gamma(b);
    return x / (x + y);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_;
  std::uint64_t state_[4];
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dpcalib
