#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>

namespace carfield {

inline uint64_t splitmix64(uint64_t& state) {
  state += 0x9E3779B97F4A7C15ull;
  uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

// Mix an arbitrary key tuple into a single 64-bit stream seed.
inline uint64_t mix_keys(std::initializer_list<uint64_t> keys) {
  uint64_t state = 0x8af5dc8e255b71c1ull;
  uint64_t h = 0;
  for (uint64_t k : keys) {
    state ^= k;
    h = splitmix64(state) ^ (h * 0x2545F4914F6CDD1Dull);
  }
  return h;
}

// Compile-time tags for named random streams, so independent consumers of
// the same base seed never collide.
namespace stream {
constexpr uint64_t kInit = 0x01;
constexpr uint64_t kPatch = 0x02;
constexpr uint64_t kPixels = 0x03;
constexpr uint64_t kRay = 0x04;
constexpr uint64_t kProbe = 0x05;
constexpr uint64_t kSynth = 0x06;
constexpr uint64_t kOracle = 0x07;
}  // namespace stream

// Deterministic RNG stream. The engine is mt19937_64 seeded from the mixed
// key tuple; uniform/normal mappings are fixed-width so every platform and
// build produces identical sequences for identical keys.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}
  Rng(std::initializer_list<uint64_t> keys) : eng_(mix_keys(keys)) {}

  uint64_t next() { return eng_(); }

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Uniform integer in [0, n). Multiply-shift, no modulo bias to speak of.
  int uniform_int(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next()) * static_cast<uint64_t>(n)) >> 64);
  }

  // Standard normal via Box-Muller (pair cached).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 1.0 - uniform();  // (0, 1]
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  double cached_ = 0.0;
  bool have_cached_ = false;
};

}  // namespace carfield
