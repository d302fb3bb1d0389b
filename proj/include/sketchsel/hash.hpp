#pragma once

#include <cstdint>
#include <string_view>

#include "sketchsel/errors.hpp"

namespace sketchsel {

// Bijective 64-bit finalizer-style mixer (murmur3 constants).
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdULL;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ULL;
  x ^= x >> 33;
  return x;
}

// Key of hash row j; rows decorrelate via the golden-ratio stride.
constexpr std::uint64_t row_key(std::uint64_t seed, std::uint64_t row) noexcept {
  return mix64(seed ^ (0x9e3779b97f4a7c15ULL * (row + 1)));
}

// One evaluation per (row, feature) yields both bucket and sign.
constexpr std::uint64_t feature_bits(std::uint64_t key, std::uint64_t index) noexcept {
  return mix64(key ^ mix64(index));
}

// Bucket from the low 63 bits; width need not be a power of two.
constexpr std::size_t bucket_of(std::uint64_t bits, std::size_t width) noexcept {
  return static_cast<std::size_t>((bits & 0x7fffffffffffffffULL) % width);
}

// Sign from the top bit, disjoint from the bucket bits.
constexpr double sign_of(std::uint64_t bits) noexcept {
  return (bits >> 63) ? -1.0 : 1.0;
}

// Deterministic token id in [0, 2^bits): FNV-1a over bytes, then seed-mixed.
// The token -> id map is one-way; keep a side dictionary if names are needed.
inline std::uint64_t hash_token(std::string_view token, unsigned bits,
                                std::uint64_t seed) {
  if (bits > 63) throw error("hash_token: bits must be <= 63");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  h = mix64(h ^ mix64(seed));
  return h & ((std::uint64_t{1} << bits) - 1);
}

}  // namespace sketchsel
