#pragma once

#include <cstdint>
#include <random>

#include "homlab/types.hpp"

namespace homlab {

/// SplitMix64 step; used to derive independent child seeds so that a
/// realization depends only on (seed, index) and never on evaluation order.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t child_seed(std::uint64_t seed, std::uint64_t index) {
  return splitmix64(seed ^ splitmix64(index + 0x632be59bd9b4e019ULL));
}

/// Uniform double in [0, 1) from the top 53 bits. Written out so results do
/// not depend on the standard library's distribution implementation.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform(std::mt19937_64& rng, double a, double b) { return a + (b - a) * uniform01(rng); }

/// Standard normal by Box-Muller on uniform01.
double standard_normal(std::mt19937_64& rng);

/// Dense random complex matrix with entries uniform in the unit square.
CMatrix random_complex_matrix(std::mt19937_64& rng, Index rows, Index cols);
CVector random_complex_vector(std::mt19937_64& rng, Index size);

}  // namespace homlab
