#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

namespace kemvol::rng {

// Counter-based stream: every draw is a pure function of (seed, stream,
// counter), so voxel-parallel generation is independent of iteration order.
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash3(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t counter) {
  return splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ counter);
}

// Uniform on the open interval (0, 1), 53 bits.
constexpr double uniform_open(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t counter) {
  return (static_cast<double>(hash3(seed, stream, counter) >> 11) + 0.5) *
         0x1.0p-53;
}

// Box-Muller on two independent counter draws.
inline double standard_normal(std::uint64_t seed, std::uint64_t stream,
                              std::uint64_t counter) {
  const double u1 = uniform_open(seed, stream, 2 * counter);
  const double u2 = uniform_open(seed, stream, 2 * counter + 1);
  return std::sqrt(-2.0 * std::log(u1)) *
         std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace kemvol::rng
