#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>
#include <vector>

#include "sketchsel/countsketch.hpp"
#include "sketchsel/rng.hpp"

using namespace sketchsel;

namespace {

struct Update {
  std::uint64_t index;
  double delta;
};

// Recomputes every cell of the grid from the raw update log using only the
// sketch's published bucket/sign maps.
std::vector<double> replay_grid(const CountSketch& s,
                                const std::vector<Update>& log) {
  std::vector<double> grid(s.depth() * s.width(), 0.0);
  for (const Update& u : log) {
    for (std::size_t j = 0; j < s.depth(); ++j)
      grid[j * s.width() + s.bucket(j, u.index)] += s.sign(j, u.index) * u.delta;
  }
  return grid;
}

// Independent estimate: full-sort, sign-corrected median over the rows.
double median_oracle(const CountSketch& s, std::uint64_t index) {
  std::vector<double> vals;
  for (std::size_t j = 0; j < s.depth(); ++j)
    vals.push_back(s.sign(j, index) *
                   s.counters()[j * s.width() + s.bucket(j, index)]);
  std::sort(vals.begin(), vals.end());
  const std::size_t d = vals.size();
  return d % 2 ? vals[d / 2] : 0.5 * (vals[d / 2 - 1] + vals[d / 2]);
}

// Integer-valued deltas keep all arithmetic exact in doubles.
std::vector<Update> random_integer_stream(SplitMix64& rng, std::size_t count,
                                          std::uint64_t p) {
  std::vector<Update> log;
  for (std::size_t t = 0; t < count; ++t) {
    const double delta = static_cast<double>(rng.below(19)) - 9.0;
    log.push_back({rng.below(p), delta});
  }
  return log;
}

}  // namespace

TEST_CASE("fresh sketch is all zeros and geometry is validated", "[countsketch]") {
  CountSketch s({3, 16, SketchMode::standard}, 42);
  REQUIRE(s.counters().size() == 48);
  for (double c : s.counters()) REQUIRE(c == 0.0);
  for (std::uint64_t i = 0; i < 100; ++i) REQUIRE(s.query(i) == 0.0);

  CountSketch id({1, 1000, SketchMode::identity}, 0);
  REQUIRE(id.depth() == 1);
  REQUIRE(id.width() == 1000);

  REQUIRE_THROWS_AS(CountSketch({0, 16, SketchMode::standard}, 1),
                    invalid_geometry_error);
  REQUIRE_THROWS_AS(CountSketch({3, 0, SketchMode::standard}, 1),
                    invalid_geometry_error);
  REQUIRE_THROWS_AS(CountSketch({2, 16, SketchMode::identity}, 1),
                    invalid_geometry_error);
}

TEST_CASE("single update hits one cell per row and queries exactly", "[countsketch]") {
  CountSketch s({3, 16, SketchMode::standard}, 7);
  s.update(7, 2.5);
  for (std::size_t j = 0; j < 3; ++j) {
    const double cell = s.counters()[j * 16 + s.bucket(j, 7)];
    REQUIRE(cell == s.sign(j, 7) * 2.5);
  }
  // Exactly one nonzero cell per row.
  std::size_t nonzero = 0;
  for (double c : s.counters()) nonzero += c != 0.0;
  REQUIRE(nonzero == 3);
  REQUIRE(s.query(7) == 2.5);

  s.update(7, -2.5);
  for (double c : s.counters()) REQUIRE(c == 0.0);
}

TEST_CASE("identity mode maps i mod width with sign +1", "[countsketch]") {
  CountSketch s({1, 10, SketchMode::identity}, 3);
  s.update(3, 1.5);
  s.update(13, 1.0);  // wraps onto cell 3
  REQUIRE(s.counters()[3] == 2.5);
  REQUIRE(s.query(3) == 2.5);
  for (std::uint64_t i = 0; i < 10; ++i) {
    REQUIRE(s.bucket(0, i) == i);
    REQUIRE(s.sign(0, i) == 1.0);
  }
}

TEST_CASE("counters match the replay-log oracle", "[countsketch]") {
  SplitMix64 rng(11);
  CountSketch s({3, 8, SketchMode::standard}, 99);
  std::vector<Update> log;
  for (int t = 0; t < 50; ++t) {
    log.push_back({rng.below(10), rng.normal()});
    s.update(log.back().index, log.back().delta);
  }
  REQUIRE(s.counters() == replay_grid(s, log));
}

TEST_CASE("query matches the direct median oracle", "[countsketch]") {
  for (std::size_t depth : {3u, 4u}) {  // odd and even medians
    SplitMix64 rng(depth);
    CountSketch s({depth, 8, SketchMode::standard}, 1234);
    for (int t = 0; t < 100; ++t) s.update(rng.below(20), rng.normal());
    for (std::uint64_t i = 0; i < 20; ++i)
      REQUIRE(s.query(i) == median_oracle(s, i));
  }
}

TEST_CASE("merge equals the concatenated stream", "[countsketch]") {
  SplitMix64 rng(21);
  CountSketch a({3, 16, SketchMode::standard}, 5);
  CountSketch b({3, 16, SketchMode::standard}, 5);
  CountSketch both({3, 16, SketchMode::standard}, 5);
  const auto log_a = random_integer_stream(rng, 40, 30);
  const auto log_b = random_integer_stream(rng, 60, 30);
  for (const Update& u : log_a) {
    a.update(u.index, u.delta);
    both.update(u.index, u.delta);
  }
  for (const Update& u : log_b) {
    b.update(u.index, u.delta);
    both.update(u.index, u.delta);
  }
  const CountSketch m = merge(a, b);
  REQUIRE(m.counters() == both.counters());

  CountSketch fresh({3, 16, SketchMode::standard}, 5);
  REQUIRE(merge(fresh, a).counters() == a.counters());
}

TEST_CASE("merge rejects mismatched families", "[countsketch]") {
  CountSketch a({3, 16, SketchMode::standard}, 5);
  CountSketch seed_off({3, 16, SketchMode::standard}, 6);
  CountSketch width_off({3, 8, SketchMode::standard}, 5);
  CountSketch depth_off({2, 16, SketchMode::standard}, 5);
  REQUIRE_THROWS_AS(merge(a, seed_off), incompatible_sketch_error);
  REQUIRE_THROWS_AS(merge(a, width_off), incompatible_sketch_error);
  REQUIRE_THROWS_AS(merge(a, depth_off), incompatible_sketch_error);
}

TEST_CASE("scale acts uniformly on every query", "[countsketch]") {
  SplitMix64 rng(31);
  CountSketch s({3, 16, SketchMode::standard}, 8);
  for (int t = 0; t < 100; ++t) s.update(rng.below(40), rng.normal());

  CountSketch unchanged = s;
  unchanged.scale(1.0);
  REQUIRE(unchanged.counters() == s.counters());

  std::vector<double> before;
  for (std::uint64_t i = 0; i < 40; ++i) before.push_back(s.query(i));
  CountSketch scaled = s;
  scaled.scale(0.9);
  for (std::uint64_t i = 0; i < 40; ++i)
    REQUIRE_THAT(scaled.query(i),
                 Catch::Matchers::WithinRel(0.9 * before[i], 1e-15) ||
                     Catch::Matchers::WithinAbs(0.9 * before[i], 1e-300));

  CountSketch zeroed = s;
  zeroed.scale(0.0);
  for (double c : zeroed.counters()) REQUIRE(c == 0.0);
}

TEST_CASE("scale commutes with scaling the update stream", "[countsketch]") {
  SplitMix64 rng(41);
  const auto log = random_integer_stream(rng, 80, 25);
  CountSketch post({3, 12, SketchMode::standard}, 2);
  CountSketch pre({3, 12, SketchMode::standard}, 2);
  for (const Update& u : log) post.update(u.index, u.delta);
  post.scale(0.5);  // power of two: exact
  for (const Update& u : log) pre.update(u.index, u.delta * 0.5);
  REQUIRE(post.counters() == pre.counters());
}

TEST_CASE("scale_except protects identity cells", "[countsketch]") {
  CountSketch s({1, 10, SketchMode::identity}, 0);
  for (std::uint64_t i = 0; i < 10; ++i) s.update(i, double(i + 1));

  CountSketch all_protected = s;
  std::vector<std::uint64_t> everyone;
  for (std::uint64_t i = 0; i < 10; ++i) everyone.push_back(i);
  all_protected.scale_except(0.5, everyone);
  REQUIRE(all_protected.counters() == s.counters());

  CountSketch partial = s;
  partial.scale_except(0.5, {3});
  for (std::uint64_t i = 0; i < 10; ++i) {
    const double expect = i == 3 ? double(i + 1) : 0.5 * double(i + 1);
    REQUIRE(partial.counters()[i] == expect);
  }

  CountSketch standard({3, 16, SketchMode::standard}, 0);
  REQUIRE_THROWS_AS(standard.scale_except(0.5, {1}),
                    unsupported_mode_error);
}

TEST_CASE("non-finite inputs are rejected", "[countsketch]") {
  CountSketch s({3, 16, SketchMode::standard}, 0);
  const double inf = std::numeric_limits<double>::infinity();
  const double nan = std::numeric_limits<double>::quiet_NaN();
  REQUIRE_THROWS_AS(s.update(1, inf), numeric_input_error);
  REQUIRE_THROWS_AS(s.update(1, nan), numeric_input_error);
  REQUIRE_THROWS_AS(s.scale(inf), numeric_input_error);
  CountSketch id({1, 4, SketchMode::identity}, 0);
  REQUIRE_THROWS_AS(id.scale_except(nan, {0}), numeric_input_error);
}

TEST_CASE("same seed, geometry, and stream give identical grids", "[countsketch]") {
  SplitMix64 rng(55);
  std::vector<Update> log;
  for (int t = 0; t < 200; ++t) log.push_back({rng.below(100), rng.normal()});
  CountSketch a({5, 32, SketchMode::standard}, 77);
  CountSketch b({5, 32, SketchMode::standard}, 77);
  for (const Update& u : log) {
    a.update(u.index, u.delta);
    b.update(u.index, u.delta);
  }
  REQUIRE(a.counters() == b.counters());
}

TEST_CASE("queries are unbiased over random seeds", "[countsketch]") {
  // Fixed sparse vector; mean per-coordinate query error over seeds stays
  // within 3 standard errors of zero.
  const std::size_t p = 30;
  std::vector<double> beta(p, 0.0);
  beta[2] = 1.5;
  beta[9] = -2.0;
  beta[17] = 0.7;
  beta[23] = 3.0;
  const int seeds = 1000;
  std::vector<double> sum(p, 0.0), sumsq(p, 0.0);
  for (int t = 0; t < seeds; ++t) {
    CountSketch s({3, 16, SketchMode::standard}, 1000 + t);
    for (std::size_t i = 0; i < p; ++i)
      if (beta[i] != 0.0) s.update(i, beta[i]);
    for (std::size_t i = 0; i < p; ++i) {
      const double e = s.query(i) - beta[i];
      sum[i] += e;
      sumsq[i] += e * e;
    }
  }
  for (std::size_t i = 0; i < p; ++i) {
    const double mean = sum[i] / seeds;
    const double var = std::max(sumsq[i] / seeds - mean * mean, 0.0);
    const double se = std::sqrt(var / seeds);
    REQUIRE(std::abs(mean) <= 3.0 * se + 1e-12);
  }
}

TEST_CASE("binary round-trip preserves the sketch", "[countsketch]") {
  SplitMix64 rng(66);
  CountSketch s({4, 24, SketchMode::standard}, 31337);
  for (int t = 0; t < 100; ++t) s.update(rng.below(100), rng.normal());

  std::stringstream buf;
  s.save(buf);
  const CountSketch back = CountSketch::load(buf);
  REQUIRE(back.depth() == s.depth());
  REQUIRE(back.width() == s.width());
  REQUIRE(back.mode() == s.mode());
  REQUIRE(back.seed() == s.seed());
  REQUIRE(back.counters() == s.counters());
  // Behavioral equivalence after reload.
  for (std::uint64_t i = 0; i < 100; ++i) REQUIRE(back.query(i) == s.query(i));
}

TEST_CASE("load rejects corrupt input", "[countsketch]") {
  std::stringstream bad("XXXX");
  REQUIRE_THROWS_AS(CountSketch::load(bad), io_error);

  CountSketch s({2, 4, SketchMode::standard}, 1);
  std::stringstream buf;
  s.save(buf);
  std::string bytes = buf.str();
  bytes.resize(bytes.size() - 9);  // drop part of the counter payload
  std::stringstream truncated(bytes);
  REQUIRE_THROWS_AS(CountSketch::load(truncated), io_error);
}
