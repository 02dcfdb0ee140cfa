#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace hmpa {

// All randomness in the project goes through these helpers instead of the
// <random> distributions, whose output sequences are implementation-defined.
// mt19937_64 itself is specified bit-for-bit by the standard, so seeded runs
// reproduce exactly across standard libraries.
using Rng = std::mt19937_64;

// Uniform double in [0,1) with 53 random bits.
inline double rand_uniform(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n). n must be > 0.
inline std::uint64_t rand_index(Rng& rng, std::uint64_t n) {
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x;
  do {
    x = rng();
  } while (x >= limit);
  return x % n;
}

// Uniform integer in [lo, hi] inclusive.
inline std::int64_t rand_range(Rng& rng, std::int64_t lo, std::int64_t hi) {
  return lo + static_cast<std::int64_t>(
                  rand_index(rng, static_cast<std::uint64_t>(hi - lo + 1)));
}

// Standard normal via Box-Muller (one value per call; no cached spare, so
// the stream position is easy to reason about).
inline double rand_normal(Rng& rng) {
  double u1 = rand_uniform(rng);
  while (u1 <= 0.0) u1 = rand_uniform(rng);
  const double u2 = rand_uniform(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Fisher-Yates with explicit index draws.
template <typename T>
void shuffle_in_place(std::vector<T>& v, Rng& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rand_index(rng, i));
    std::swap(v[i - 1], v[j]);
  }
}

// Derive an independent stream from a base seed and a stream tag.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer over the pair.
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace hmpa
