#pragma once

#include <cmath>
#include <cstdint>

namespace covot {

/// Counter-based random numbers: every draw is a pure function of
/// (seed, step, stream, index), so parallel schedules cannot change results.
namespace rng {

inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t key(std::uint64_t seed, std::uint64_t step, std::uint64_t stream,
                         std::uint64_t index) {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ step);
  h = mix64(h ^ (stream << 1));
  h = mix64(h ^ (index << 2));
  return h;
}

/// Uniform draw in (0,1).
inline double uniform(std::uint64_t seed, std::uint64_t step, std::uint64_t stream,
                      std::uint64_t index) {
  const std::uint64_t bits = key(seed, step, stream, index);
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

/// Standard normal via Box-Muller on two counter-keyed uniforms.
inline double normal(std::uint64_t seed, std::uint64_t step, std::uint64_t stream,
                     std::uint64_t index) {
  const double u1 = uniform(seed, step, stream, 2 * index);
  const double u2 = uniform(seed, step, stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace rng
}  // namespace covot
