#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace hdm::rng {

// SplitMix64 finalizer.
constexpr std::uint64_t mix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Stream key for (seed, a, b, ...); the basis of every per-sample generator.
inline std::uint64_t derive(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = mix(seed);
  for (auto p : parts) h = mix(h ^ mix(p));
  return h;
}

inline std::mt19937_64 stream(std::uint64_t seed, std::initializer_list<std::uint64_t> parts) {
  return std::mt19937_64(derive(seed, parts));
}

// Integer in [0, n), n >= 1. Portable across standard libraries, unlike
// std::uniform_int_distribution.
inline std::uint64_t below(std::mt19937_64& g, std::uint64_t n) { return g() % n; }

// Double in [0, 1) from the top 53 bits.
inline double unit(std::mt19937_64& g) { return static_cast<double>(g() >> 11) * 0x1.0p-53; }

}  // namespace hdm::rng
