#pragma once

#include <cstdint>
#include <random>

namespace packetstop {

// Fixed stream tags so independent draws from one seed never alias.
inline constexpr std::uint64_t kOrderStream = 0x6f72646572ULL;  // "order"
inline constexpr std::uint64_t kLossStream = 0x6c6f7373ULL;     // "loss"
inline constexpr std::uint64_t kSceneStream = 0x7363656e65ULL;  // "scene"

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(splitmix64(seed) ^ stream);
}

// The std distributions are implementation-defined; these are not, so
// schedules and scenes are identical across standard libraries.
inline double unit_double(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline std::size_t uniform_index(std::mt19937_64& rng, std::size_t bound) {
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = rng();
  } while (v >= limit);
  return static_cast<std::size_t>(v % bound);
}

inline double uniform_real(std::mt19937_64& rng, double lo, double hi) {
  return lo + (hi - lo) * unit_double(rng);
}

}  // namespace packetstop
