#pragma once

#include <cstdint>
#include <cmath>

namespace mixlab {

/// xoshiro256++ with splitmix64 seeding.
///
/// All randomness in the project flows from a single experiment seed through
/// the documented split rule: stream k of seed s is seeded from
/// splitmix64(s) advanced once, then mixed with k (see derive()). Identical
/// (seed, stream) pairs give identical draws on every run and thread count.
class Rng {
 public:
  explicit Rng(uint64_t seed) { seed_from(seed); }
  Rng(uint64_t seed, uint64_t stream) { seed_from(splitmix_(seed) ^ splitmix_(0x9e3779b97f4a7c15ULL + stream)); }

  /// Stream k derived from a master seed; the documented split function.
  static Rng derive(uint64_t seed, uint64_t stream) { return Rng(seed, stream); }

  uint64_t next_u64() {
    uint64_t const result = rotl_(s_[0] + s_[3], 23) + s_[0];
    uint64_t const t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl_(s_[3], 45);
    return result;
  }

  /// Uniform on [0,1).
  double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) { return next_u64() % n; }
  /// Standard normal (Box-Muller; one value per call, no caching).
  double normal() {
    double u1 = 0.0;
    while (u1 == 0.0) u1 = uniform();
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
  }
  double exponential(double rate = 1.0) {
    double u = 0.0;
    while (u == 0.0) u = uniform();
    return -std::log(u) / rate;
  }

 private:
  static uint64_t rotl_(uint64_t v, int k) { return (v << k) | (v >> (64 - k)); }
  static uint64_t splitmix_(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  static uint64_t splitmix_(uint64_t&& x) {
    uint64_t y = x;
    return splitmix_(y);
  }
  void seed_from(uint64_t s) {
    for (auto& w : s_) w = splitmix_(s);
  }

  uint64_t s_[4];
};

}  // namespace mixlab
