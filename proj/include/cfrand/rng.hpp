#pragma once

// Deterministic sampling helpers. std::uniform_int_distribution is not
// specified bit-for-bit across standard libraries, so anything that feeds a
// recorded seed goes through these instead.

#include <cstdint>
#include <random>
#include <vector>

namespace cfrand {

// Unbiased draw from [0, bound) via rejection (Lemire-style threshold).
inline uint64_t bounded(std::mt19937_64& rng, uint64_t bound) {
  if (bound == 0) return 0;
  const uint64_t threshold = -bound % bound;  // (2^64 - bound) mod bound
  for (;;) {
    const uint64_t r = rng();
    if (r >= threshold) return r % bound;
  }
}

inline uint64_t bounded(std::mt19937_64& rng, uint64_t lo, uint64_t hi) {
  return lo + bounded(rng, hi - lo + 1);  // inclusive range
}

template <typename T>
void shuffle_indices(std::vector<T>& v, std::mt19937_64& rng) {
  for (size_t i = v.size(); i > 1; --i) {
    const size_t j = bounded(rng, i);
    std::swap(v[i - 1], v[j]);
  }
}

// splitmix64 finalizer; derives stream seeds from (seed, index).
inline uint64_t mix_seed(uint64_t seed, uint64_t index) {
  uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace cfrand
