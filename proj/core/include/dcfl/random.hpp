#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace dcfl {

using Rng = std::mt19937_64;

// splitmix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t tag_hash(std::string_view tag) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

// Seed of a named sub-stream, e.g. derive_seed(seed, "client", {round, id}).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view tag,
                                    std::initializer_list<std::uint64_t> parts = {}) {
  std::uint64_t h = mix64(seed ^ mix64(tag_hash(tag)));
  for (std::uint64_t p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t seed, std::string_view tag, std::initializer_list<std::uint64_t> parts = {}) {
  return Rng(derive_seed(seed, tag, parts));
}

// Uniform point on the unit sphere in `dim` dimensions (normalized Gaussian).
std::vector<double> random_unit_vector(std::size_t dim, Rng& rng);

}  // namespace dcfl
