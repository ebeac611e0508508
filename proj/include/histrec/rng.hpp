#pragma once

#include <cmath>
#include <cstdint>

namespace histrec {

/// Portable 64-bit PRNG (splitmix64). Bit-reproducible across platforms and
/// compilers; all synthetic data generation goes through this generator so
/// that benchmark runs can be replayed exactly.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// Index in [0, n).
  std::uint64_t next_index(std::uint64_t n) { return next_u64() % n; }

  /// Standard normal via Box-Muller (one value per call, two uniforms
  /// consumed; no cached second value so the stream layout is fixed).
  double gaussian() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }

  /// Zero-mean Laplace draw with scale b (inverse CDF).
  double laplace(double b) {
    double u = next_double() - 0.5;
    double s = u < 0.0 ? -1.0 : 1.0;
    double a = 1.0 - 2.0 * std::fabs(u);
    if (a <= 0.0) a = 0x1.0p-53;
    return -b * s * std::log(a);
  }

  /// Derives an independent stream from a base seed and a stream id, so that
  /// per-slice / per-edge generation is order-free and parallel-safe.
  static Rng stream(std::uint64_t seed, std::uint64_t id) {
    Rng mixer(seed ^ (id * 0xD1B54A32D192ED03ULL + 0x8BB84B93962EACC9ULL));
    return Rng(mixer.next_u64());
  }

private:
  std::uint64_t state_;
};

}  // namespace histrec
