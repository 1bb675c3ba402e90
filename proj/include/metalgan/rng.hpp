#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <string_view>

namespace metalgan {

// All randomness in the toolkit flows from one root seed through named
// substreams, so that adding draws to one stream never perturbs another.
inline std::uint64_t substream_seed(std::uint64_t root_seed, std::string_view name) {
  // FNV-1a over the name, mixed with the root seed (splitmix64 finalizer).
  std::uint64_t h = 1469598103934665603ull;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = root_seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 make_rng(std::uint64_t root_seed, std::string_view name) {
  return std::mt19937_64(substream_seed(root_seed, name));
}

// mt19937_64 stream state round-trips exactly through text.
inline std::string rng_to_string(const std::mt19937_64& g) {
  std::ostringstream os;
  os << g;
  return os.str();
}

inline std::mt19937_64 rng_from_string(const std::string& s) {
  std::mt19937_64 g;
  std::istringstream is(s);
  is >> g;
  return g;
}

}  // namespace metalgan
