// Counter-based random streams. Every draw is a pure function of
// (seed, stream, counter), so sampling work can be split across threads in
// any order and still produce bit-identical results.
#pragma once

#include <cmath>
#include <cstdint>

namespace conserva {

// splitmix64 finalizer; good avalanche, trivially portable.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t rng_u64(std::uint64_t seed, std::uint64_t stream,
                             std::uint64_t counter) {
  std::uint64_t h = mix64(seed ^ 0x6a09e667f3bcc908ULL);
  h = mix64(h ^ mix64(stream ^ 0xbb67ae8584caa73bULL));
  return mix64(h ^ mix64(counter));
}

// Uniform in [0,1) with 53 random bits.
inline double rng_unit(std::uint64_t seed, std::uint64_t stream,
                       std::uint64_t counter) {
  return static_cast<double>(rng_u64(seed, stream, counter) >> 11) *
         0x1.0p-53;
}

// A sequential view over one (seed, stream) pair. Cheap to construct; copy
// freely. Rejection loops advance the counter, so a retried draw never
// perturbs any other stream.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t u64() { return rng_u64(seed_, stream_, counter_++); }
  double unit() { return rng_unit(seed_, stream_, counter_++); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }

  // Marsaglia polar method would branch unpredictably; Box-Muller on two
  // fresh units is fine at this call volume.
  double normal() {
    double u1 = unit();
    double u2 = unit();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

  // Integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n ? u64() % n : 0; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t counter_ = 0;
};

}  // namespace conserva
