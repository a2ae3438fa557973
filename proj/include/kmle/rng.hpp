#pragma once

#include <cstdint>
#include <random>

namespace kmle {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Stable child-stream derivation: (seed, stream, index) -> independent seed.
// Used to keep per-restart, per-cell and per-series streams reproducible
// regardless of evaluation order or thread count.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0) {
  return splitmix64(splitmix64(seed ^ splitmix64(stream)) ^ splitmix64(index ^ 0x6a09e667f3bcc909ull));
}

inline std::mt19937_64 make_rng(std::uint64_t seed) { return std::mt19937_64(seed); }

}  // namespace kmle
