#pragma once

#include <cstdint>
#include <string_view>

namespace ecgr {

/// SplitMix64 finaliser.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Stable per-component seed from (base seed, component name, index).
[[nodiscard]] constexpr std::uint64_t derive_seed(std::uint64_t base, std::string_view component,
                                                  std::uint64_t index = 0) {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : component) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return mix64(mix64(base ^ h) + index);
}

}  // namespace ecgr
