#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace afcomb {

// Counter-based random streams. Every consumer derives its own stream key
// from (seed, purpose tag, indices), so results never depend on thread
// scheduling or call interleaving, and are identical across platforms
// (no std::<distribution>, whose output is implementation-defined).

namespace rngtag {
constexpr std::uint64_t permutation = 0x7065726d; // "perm"
constexpr std::uint64_t bootstrap = 0x626f6f74;   // "boot"
constexpr std::uint64_t simulate = 0x73696d75;    // "simu"
constexpr std::uint64_t replicate = 0x72657073;   // "reps"
}  // namespace rngtag

inline std::uint64_t mix64(std::uint64_t z) {
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t stream_key(std::uint64_t seed, std::uint64_t a,
                                std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t k = mix64(seed);
  k = mix64(k ^ a);
  k = mix64(k ^ b);
  k = mix64(k ^ c);
  return k;
}

class Rng {
public:
  explicit Rng(std::uint64_t key) : state_(key) {}

  std::uint64_t next() {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // uniform in [0, 1), 53-bit resolution
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  // uniform in (0, 1], safe as a log() argument
  double uniform_pos() {
    return static_cast<double>((next() >> 11) + 1) * 0x1.0p-53;
  }

  // unbiased integer in [0, bound) via rejection
  std::uint64_t below(std::uint64_t bound) {
    if (bound <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = next();
    } while (v >= limit);
    return v % bound;
  }

  // Box-Muller; two uniforms per draw keeps the stream layout simple
  double normal(double mean = 0.0, double sd = 1.0) {
    const double u1 = uniform_pos();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  // Knuth multiplication method; adequate for the small rates used here
  std::uint64_t poisson(double rate) {
    if (!(rate > 0.0)) return 0;
    const double limit = std::exp(-rate);
    std::uint64_t k = 0;
    double prod = 1.0;
    do {
      prod *= uniform_pos();
      ++k;
    } while (prod > limit);
    return k - 1;
  }

private:
  std::uint64_t state_;
};

// Uniform permutation of {0..n-1} from the stream keyed by (seed, b).
// The same (seed, b, n) always yields the same order.
inline std::vector<std::uint32_t> permutation_order(std::uint64_t seed, int b,
                                                    std::size_t n) {
  Rng rng(stream_key(seed, rngtag::permutation, static_cast<std::uint64_t>(b)));
  std::vector<std::uint32_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = static_cast<std::uint32_t>(i);
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t j = rng.below(i);
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace afcomb
