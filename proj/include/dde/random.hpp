#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <stdexcept>

namespace dde {

using Rng = std::mt19937_64;

/// Role constants for seed splitting. Every random stream in an experiment is
/// seeded with `seed ^ role` (optionally mixed with an index), so streams for
/// different purposes never share state.
namespace role {
inline constexpr std::uint64_t mdp = 0x6d64700000000001ULL;
inline constexpr std::uint64_t dataset = 0x6461746100000002ULL;
inline constexpr std::uint64_t init = 0x696e697400000003ULL;
inline constexpr std::uint64_t train = 0x747261696e000004ULL;
inline constexpr std::uint64_t eval = 0x6576616c00000005ULL;
inline constexpr std::uint64_t theory = 0x7468656f00000006ULL;
inline constexpr std::uint64_t replicate = 0x7265706c00000007ULL;
inline constexpr std::uint64_t instance = 0x696e737400000008ULL;
}  // namespace role

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// seed XOR role, then mixed with the stream index (index 0 is the plain
/// XOR so single-stream roles stay human-predictable).
inline constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t role_constant,
                                           std::uint64_t index = 0) {
  const std::uint64_t base = seed ^ role_constant;
  return index == 0 ? base : splitmix64(base + splitmix64(index));
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t role_constant, std::uint64_t index = 0) {
  return Rng(derive_seed(seed, role_constant, index));
}

/// Uniform draw in [0, 1) with 53 random bits; bit-identical across standard
/// libraries, unlike std::uniform_real_distribution.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

inline double standard_normal(Rng& rng) {
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  const double u1 = 1.0 - uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

/// Inverse-transform draw from a finite probability vector.
inline std::size_t sample_categorical(std::span<const double> probs, Rng& rng) {
  if (probs.empty()) throw std::invalid_argument("sample_categorical: empty distribution");
  const double u = uniform01(rng);
  double cumulative = 0.0;
  std::size_t last_positive = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    cumulative += probs[i];
    last_positive = i;
    if (u < cumulative) return i;
  }
  return last_positive;
}

}  // namespace dde
