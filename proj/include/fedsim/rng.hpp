#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fedsim {

using Rng = std::mt19937_64;

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_string(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Derives an independent stream seed from a base seed and a list of tags.
// Used wherever a value must not depend on how much of some other stream
// was consumed (per-client training seeds, per-round delays).
constexpr std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) noexcept {
  std::uint64_t h = mix64(base);
  for (auto t : tags) h = mix64(h ^ mix64(t));
  return h;
}

inline Rng make_rng(std::uint64_t base, std::initializer_list<std::uint64_t> tags = {}) {
  return Rng(derive_seed(base, tags));
}

}  // namespace fedsim
