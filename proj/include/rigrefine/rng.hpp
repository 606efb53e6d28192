#pragma once

#include <cmath>
#include <cstdint>

namespace rigrefine {

// splitmix64 finalizer. Stateless, so a value keyed on (seed, stream, counter)
// is independent of thread scheduling and call order.
inline std::uint64_t hash_u64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
  return hash_u64(a ^ (b + 0x9e3779b97f4a7c15ull + (a << 6) + (a >> 2)));
}

// Counter-based random stream. Cheap to construct anywhere from a key chain;
// two streams built from the same keys always produce the same sequence.
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed) : key_(hash_u64(seed)) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : key_(hash_combine(hash_u64(seed), stream)) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream_a, std::uint64_t stream_b)
      : key_(hash_combine(hash_combine(hash_u64(seed), stream_a), stream_b)) {}

  std::uint64_t next_u64() { return hash_combine(key_, counter_++); }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n). n must be > 0.
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller; consumes two uniforms per call so the
  // stream position stays predictable.
  double next_normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
  }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

}  // namespace rigrefine
