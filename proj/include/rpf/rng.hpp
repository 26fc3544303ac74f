#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace rpf {

// splitmix64: used to derive independent sub-seeds from one run seed so that
// every consumer (batches, evals, probes) gets its own reproducible stream.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t index = 0) {
  std::uint64_t h = base;
  for (char c : tag) h = splitmix64(h ^ static_cast<std::uint64_t>(c));
  return splitmix64(h ^ index);
}

inline std::mt19937_64 make_engine(std::uint64_t seed) {
  return std::mt19937_64(seed);
}

}  // namespace rpf
