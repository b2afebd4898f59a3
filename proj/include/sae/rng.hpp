#pragma once

#include <cstdint>
#include <random>

namespace sae {

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Simulation stages that draw randomness inside one replicate.
enum class Stage : std::uint64_t { population = 1, linkage = 2, sampling = 3, audit = 4 };

/// Independent stream for (base_seed, replicate, stage). Parallel and serial
/// drivers derive identical streams, so their results agree bit for bit.
inline Rng make_stream(std::uint64_t base_seed, std::uint64_t replicate, Stage stage) {
  std::uint64_t s = splitmix64(base_seed);
  s = splitmix64(s ^ (replicate * 0xD1B54A32D192ED03ULL));
  s = splitmix64(s ^ static_cast<std::uint64_t>(stage));
  return Rng(s);
}

}  // namespace sae
