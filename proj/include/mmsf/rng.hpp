#pragma once

#include <cstdint>
#include <random>

namespace mmsf {

/// Independent random streams. Every consumer of randomness derives its seed
/// from (run seed, stream, index...) so results never depend on the order in
/// which work items are visited or on the number of worker threads.
enum class Stream : std::uint64_t {
  users = 1,
  tags = 2,
  resources = 3,
  edges = 4,
  partition = 5,
  power_inits = 6,
  sweep = 7,
};

/// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a,
                                    std::uint64_t b = 0, std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix64(seed);
  h = mix64(h ^ a);
  h = mix64(h ^ (b + 0x632be59bd9b4e019ULL));
  h = mix64(h ^ (c + 0x85157af5ULL));
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream s, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
  return derive_seed(seed, static_cast<std::uint64_t>(s), b, c);
}

/// Counter-based uniform draw in [0, 1) with 53 random bits.
constexpr double counter_uniform(std::uint64_t key, std::uint64_t counter) noexcept {
  const std::uint64_t bits = mix64(key ^ mix64(counter));
  return static_cast<double>(bits >> 11) * 0x1.0p-53;
}

using Engine = std::mt19937_64;

inline Engine make_engine(std::uint64_t seed, Stream s, std::uint64_t b = 0, std::uint64_t c = 0) {
  return Engine(derive_seed(seed, s, b, c));
}

}  // namespace mmsf
