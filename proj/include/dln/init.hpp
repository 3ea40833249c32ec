#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "dln/tensor.hpp"

namespace dln {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

/// FNV-1a; stable across platforms, unlike std::hash.
inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = 0xCBF29CE484222325ull) {
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 0x100000001B3ull;
  }
  return h;
}

/// Uniform in [0,1) from the top 53 bits; independent of the standard
/// library's distribution implementation.
inline double unit_uniform(std::uint64_t bits) { return static_cast<double>(bits >> 11) * 0x1.0p-53; }

inline double uniform_real(Rng& rng, double lo, double hi) { return lo + (hi - lo) * unit_uniform(rng()); }

/// Uniform integer in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return static_cast<std::size_t>(unit_uniform(rng()) * static_cast<double>(n));
}

/// Standard normal via Box-Muller.
inline double standard_normal(Rng& rng) {
  double u1 = unit_uniform(rng());
  const double u2 = unit_uniform(rng());
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
}

/// Fisher-Yates using uniform_index so results do not depend on the STL.
template <class It>
void shuffle_range(It first, It last, Rng& rng) {
  const auto n = static_cast<std::size_t>(last - first);
  for (std::size_t i = n; i > 1; --i) std::swap(first[i - 1], first[uniform_index(rng, i)]);
}

template <class T>
Tensor<T> uniform_init(const Shape& shape, double range_limit, Rng& rng) {
  if (!(range_limit > 0)) throw ArgumentError("uniform_init: range_limit must be positive");
  Tensor<T> t(shape);
  for (T& v : t.values()) v = static_cast<T>(uniform_real(rng, -range_limit, range_limit));
  return t;
}

template <class T>
Tensor<T> uniform_init(const Shape& shape, double range_limit, std::uint64_t seed) {
  Rng rng(seed);
  return uniform_init<T>(shape, range_limit, rng);
}

}  // namespace dln
