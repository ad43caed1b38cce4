#pragma once

#include <cstdint>
#include <string_view>

namespace semicrf {

// Seed of the named substream of a master seed: splitmix64 over
// master ^ FNV-1a(name).
inline std::uint64_t substream_seed(std::uint64_t master, std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : name) h = (h ^ ch) * 0x100000001b3ULL;
  std::uint64_t z = master ^ h;
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace semicrf
