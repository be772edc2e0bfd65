#pragma once

#include <cmath>
#include <cstdint>

namespace ocl {

/// Counter-style PRNG built on splitmix64. Bit-reproducible on every platform,
/// unlike the std:: distributions, and cheap to fork into independent
/// per-environment streams from (global_seed, stream_id).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0x9e3779b97f4a7c15ull) : state_(seed) {}

  /// Independent stream derived from this seed and an id. Forking does not
  /// advance the parent state.
  Rng fork(uint64_t id) const {
    uint64_t s = mix(state_ ^ (0xbf58476d1ce4e5b9ull * (id + 1)));
    return Rng(mix(s));
  }

  uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ull;
    return mix(state_);
  }

  /// Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n) {
    // Modulo bias is < 2^-53 for any realistic n; fine for simulation use.
    return n == 0 ? 0 : next_u64() % n;
  }

  /// Standard normal via Box-Muller (no cached spare, keeps streams simple).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  uint64_t state() const { return state_; }
  void set_state(uint64_t s) { state_ = s; }

 private:
  static uint64_t mix(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  uint64_t state_;
};

}  // namespace ocl
