#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace elastic {

// SplitMix64 generator.
//
//   state += 0x9E3779B97F4A7C15
//   z = state
//   z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//   z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//   return z ^ (z >> 31)
//
// The integer stream is identical on every platform. uniform() takes the top
// 53 bits; normal() is Box-Muller on two uniforms (one normal per call, no
// cached spare), so its values additionally depend on the platform libm.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

  constexpr explicit Rng(std::uint64_t seed = 0) noexcept : state_(seed) {}

  constexpr std::uint64_t next() noexcept {
    state_ += kGamma;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform on [0, 1).
  double uniform() noexcept {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) noexcept {
    return lo + (hi - lo) * uniform();
  }

  // Uniform index in [0, n) by 128-bit multiply-shift.
  std::uint64_t below(std::uint64_t n) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next()) * n) >> 64);
  }

  double normal() noexcept {
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  double exponential(double mean) noexcept {
    return -mean * std::log(1.0 - uniform());
  }

  // Independent substream for worker `id` (seed xor id).
  static constexpr Rng substream(std::uint64_t seed, std::uint64_t id) noexcept {
    return Rng(seed ^ id);
  }

  constexpr std::uint64_t state() const noexcept { return state_; }
  friend constexpr bool operator==(const Rng&, const Rng&) = default;

 private:
  std::uint64_t state_;
};

}  // namespace elastic
