#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace aerialvg {

// splitmix64 stream. Same seed gives the same bit sequence everywhere.
class RngState {
 public:
  explicit RngState(std::uint64_t seed = 0) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi]. Modulo bias is negligible for the small ranges used here.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
  }

  // Standard normal via Box-Muller (cosine branch only, one draw per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::uint64_t state() const { return state_; }

 private:
  std::uint64_t state_;
};

// Derive an independent seed from (seed, salt) for sub-streams.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
  RngState r(seed ^ (salt * 0xd1b54a32d192ed03ULL));
  r.next_u64();
  return r.next_u64();
}

}  // namespace aerialvg
