#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace hoversim
{

/// splitmix64 finalizer; the building block of every counter-based stream in the simulator.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hashValues(std::uint64_t seed, std::initializer_list<std::uint64_t> values) {
  std::uint64_t h = mix64(seed);
  for (std::uint64_t v : values) {
    h = mix64(h ^ v);
  }
  return h;
}

/// Uniform in [0, 1) from the top 53 bits.
constexpr double toUnit(std::uint64_t h) {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

/// Standard normal variate addressed by (seed, index, channel); Box-Muller on two hashed uniforms.
inline double gaussianAt(std::uint64_t seed, std::uint64_t index, std::uint64_t channel) {
  const std::uint64_t h  = hashValues(seed, {index, channel});
  const double        u1 = 1.0 - toUnit(h);  // (0, 1]
  const double        u2 = toUnit(mix64(h));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

}  // namespace hoversim
