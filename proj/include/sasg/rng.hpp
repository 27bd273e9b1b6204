#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace sasg {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Engine keyed by an ordered tuple, e.g. (seed, iteration) or (seed, worker).
inline std::mt19937_64 keyed_rng(std::initializer_list<std::uint64_t> keys) {
  std::uint64_t h = 0x5a5a5a5a5a5a5a5aULL;
  for (auto k : keys) h = splitmix64(h ^ splitmix64(k));
  return std::mt19937_64(h);
}

}  // namespace sasg
