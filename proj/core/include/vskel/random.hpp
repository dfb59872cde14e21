#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace vskel {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

/// Seed of the named sub-stream of `seed`. Stage names are hashed (FNV-1a) and
/// mixed with splitmix64, so adding a stage never shifts another stage's draws.
inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view stage) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : stage) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = seed ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng stream(std::uint64_t seed, std::string_view stage) { return Rng(derive_seed(seed, stage)); }

}  // namespace vskel
