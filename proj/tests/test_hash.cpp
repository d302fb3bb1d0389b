#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <set>
#include <vector>

#include "sketchsel/hash.hpp"
#include "sketchsel/rng.hpp"

using namespace sketchsel;

TEST_CASE("mix64 is deterministic and avalanching", "[hash]") {
  REQUIRE(mix64(0x1234) == mix64(0x1234));
  REQUIRE(mix64(1) != mix64(2));
  // A one-bit input flip moves roughly half the output bits.
  int flipped = 0;
  const std::uint64_t a = mix64(0xdeadbeef), b = mix64(0xdeadbeef ^ 1);
  for (int i = 0; i < 64; ++i) flipped += ((a ^ b) >> i) & 1;
  REQUIRE(flipped >= 16);
  REQUIRE(flipped <= 48);
}

TEST_CASE("row keys differ across rows and seeds", "[hash]") {
  std::set<std::uint64_t> keys;
  for (std::uint64_t seed : {0ull, 42ull, 1ull << 63}) {
    for (std::uint64_t row = 0; row < 8; ++row) keys.insert(row_key(seed, row));
  }
  REQUIRE(keys.size() == 24);
}

TEST_CASE("bucket stays in range and sign is a unit", "[hash]") {
  SplitMix64 rng(7);
  for (int t = 0; t < 1000; ++t) {
    const std::uint64_t key = rng.next();
    const std::uint64_t idx = rng.next();
    const std::size_t width = 1 + static_cast<std::size_t>(rng.below(1000));
    const std::uint64_t bits = feature_bits(key, idx);
    REQUIRE(bucket_of(bits, width) < width);
    const double s = sign_of(bits);
    REQUIRE((s == 1.0 || s == -1.0));
  }
}

TEST_CASE("signs split close to evenly", "[hash]") {
  const std::uint64_t key = row_key(99, 0);
  int plus = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    if (sign_of(feature_bits(key, static_cast<std::uint64_t>(i))) > 0) ++plus;
  // Binomial(20000, 1/2): 5 sigma is ~354.
  REQUIRE(std::abs(plus - n / 2) < 400);
}

TEST_CASE("hash_token is deterministic and range-bounded", "[hash]") {
  REQUIRE(hash_token("abc", 24, 5) == hash_token("abc", 24, 5));
  REQUIRE(hash_token("abc", 24, 5) != hash_token("abc", 24, 6));
  for (int t = 0; t < 200; ++t) {
    const std::string tok = "tok" + std::to_string(t);
    REQUIRE(hash_token(tok, 4, 11) < 16);
  }
  REQUIRE_THROWS_AS(hash_token("abc", 64, 0), error);
}
