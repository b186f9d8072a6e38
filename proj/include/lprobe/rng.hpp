#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace lprobe {

// FNV-1a; stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Namespaced child seed: every consumer of randomness derives its own stream
// from the command's root seed and a fixed label.
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view ns) {
  std::uint64_t z = root ^ fnv1a64(ns);
  // splitmix64 finalizer
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view ns) {
  return Rng(derive_seed(root, ns));
}

}  // namespace lprobe
