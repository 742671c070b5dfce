#pragma once

#include <cstdint>
#include <random>

namespace obm {

/// Engine used for every random stream. The output sequence of
/// std::mt19937_64 is fixed by the standard, so runs are bit-reproducible
/// across compilers as long as only `uniform01` / `uniform_index` are used
/// on top of it.
using Engine = std::mt19937_64;

/// Independent streams carved out of one run seed. A policy never draws
/// from the arrival or edge streams, so for a fixed seed every policy sees
/// the same arrival classes and the same per-step edge uniforms.
enum class Stream : std::uint64_t {
  arrivals = 1,
  edges = 2,
  policy = 3,
  graph = 4,
  offline = 5,
  instance = 6,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline Engine make_stream(std::uint64_t seed, Stream stream) {
  const std::uint64_t mixed =
      splitmix64(splitmix64(seed) ^ (static_cast<std::uint64_t>(stream) * 0xd1b54a32d192ed03ULL));
  return Engine(mixed);
}

/// Uniform double in [0, 1) with 53 random bits.
inline double uniform01(Engine& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

__extension__ using u128 = unsigned __int128;

/// Uniform integer in [0, n), n > 0 (Lemire's multiply-shift with rejection).
inline std::uint64_t uniform_index(Engine& rng, std::uint64_t n) {
  u128 m = static_cast<u128>(rng()) * n;
  auto low = static_cast<std::uint64_t>(m);
  if (low < n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (low < threshold) {
      m = static_cast<u128>(rng()) * n;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

}  // namespace obm
