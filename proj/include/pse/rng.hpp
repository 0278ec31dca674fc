#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

namespace pse {

inline std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// xoroshiro128++ generator. The whole state is two 64-bit words, which is
/// what the 16-byte RNG slot in the checkpoint format stores.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(std::uint64_t seed) {
    std::uint64_t x = seed;
    s_[0] = splitmix64(x);
    s_[1] = splitmix64(x);
  }

  std::uint64_t next() {
    const std::uint64_t s0 = s_[0];
    std::uint64_t s1 = s_[1];
    const std::uint64_t result = rotl(s0 + s1, 17) + s0;
    s1 ^= s0;
    s_[0] = rotl(s0, 49) ^ s1 ^ (s1 << 21);
    s_[1] = rotl(s1, 28);
    return result;
  }

  /// Uniform double in [0, 1), 53 significant bits.
  double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased-enough integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  /// Standard normal via Box-Muller. Consumes two draws per call so the
  /// stream position is a pure function of the call count.
  double gaussian() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // log(0) guard; p ~ 2^-53
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  std::array<std::uint64_t, 2> state() const { return {s_[0], s_[1]}; }
  void set_state(const std::array<std::uint64_t, 2>& s) {
    s_[0] = s[0];
    s_[1] = s[1];
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }
  std::uint64_t s_[2];
};

/// Independent stream for item `index` under a base seed (dataset shards,
/// per-shape generation).
inline Rng derived_rng(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t x = seed;
  std::uint64_t a = splitmix64(x);
  x ^= index * 0x9e3779b97f4a7c15ULL;
  std::uint64_t b = splitmix64(x);
  return Rng(a ^ (b + index));
}

}  // namespace pse
