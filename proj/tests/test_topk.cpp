#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <sstream>
#include <vector>

#include "sketchsel/rng.hpp"
#include "sketchsel/topk.hpp"

using namespace sketchsel;

namespace {

struct Offer {
  std::uint64_t index;
  double weight;
};

// Greedy replay with a plain map and a linear minimum scan: the reference
// semantics for eps_heap = 0.
class ReplayOracle {
 public:
  explicit ReplayOracle(std::size_t k) : k_(k) {}

  void offer(std::uint64_t index, double weight) {
    if (auto it = entries_.find(index); it != entries_.end()) {
      it->second = weight;
      return;
    }
    if (entries_.size() < k_) {
      entries_[index] = weight;
      return;
    }
    if (k_ == 0) return;
    auto min_it = entries_.begin();
    for (auto it = entries_.begin(); it != entries_.end(); ++it)
      if (std::abs(it->second) < std::abs(min_it->second)) min_it = it;
    if (std::abs(weight) > std::abs(min_it->second)) {
      entries_.erase(min_it);
      entries_[index] = weight;
    }
  }

  std::vector<std::pair<std::uint64_t, double>> top() const {
    std::vector<std::pair<std::uint64_t, double>> out(entries_.begin(),
                                                      entries_.end());
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      const double ma = std::abs(a.second), mb = std::abs(b.second);
      if (ma != mb) return ma > mb;
      return a.first < b.first;
    });
    return out;
  }

 private:
  std::size_t k_;
  std::map<std::uint64_t, double> entries_;
};

std::vector<Offer> random_offers(std::uint64_t seed, std::size_t count,
                                 std::uint64_t id_space) {
  SplitMix64 rng(seed);
  std::vector<Offer> offers;
  offers.reserve(count);
  for (std::size_t t = 0; t < count; ++t)
    offers.push_back({rng.below(id_space), rng.normal()});
  return offers;
}

}  // namespace

TEST_CASE("insertion into empty heap and basic rejection", "[topk]") {
  TopKHeap h(3);
  REQUIRE(h.offer(5, 1.0) == OfferResult::inserted);
  REQUIRE(h.size() == 1);
  REQUIRE(h.get(5) == 1.0);

  REQUIRE(h.offer(1, 0.5) == OfferResult::inserted);
  REQUIRE(h.offer(2, 2.0) == OfferResult::inserted);
  // Full: |0.4| < |0.5| is rejected.
  REQUIRE(h.offer(9, 0.4) == OfferResult::rejected);
  REQUIRE(!h.contains(9));
  // Tie with the minimum keeps the incumbent.
  REQUIRE(h.offer(9, 0.5) == OfferResult::rejected);
  REQUIRE(h.offer(9, -0.5) == OfferResult::rejected);
  // Strictly larger magnitude evicts; sign is irrelevant.
  REQUIRE(h.offer(9, -0.6) == OfferResult::inserted);
  REQUIRE(!h.contains(1));
  REQUIRE(h.get(9) == -0.6);
}

TEST_CASE("matches the sorted-replay oracle at several capacities", "[topk]") {
  for (std::size_t k : {1u, 10u, 100u}) {
    TopKHeap h(k);
    ReplayOracle oracle(k);
    for (const Offer& o : random_offers(1000 + k, 1000, 50)) {
      h.offer(o.index, o.weight);
      oracle.offer(o.index, o.weight);
    }
    REQUIRE(h.top() == oracle.top());
  }
}

TEST_CASE("top orders by |weight| descending with id ties ascending", "[topk]") {
  TopKHeap empty(4);
  REQUIRE(empty.top().empty());

  TopKHeap h(4);
  h.offer(5, -3.0);
  h.offer(2, 1.0);
  const auto t = h.top();
  REQUIRE(t.size() == 2);
  REQUIRE(t[0] == std::pair<std::uint64_t, double>{5, -3.0});
  REQUIRE(t[1] == std::pair<std::uint64_t, double>{2, 1.0});

  TopKHeap ties(4);
  ties.offer(7, 1.0);
  ties.offer(3, -1.0);
  ties.offer(9, 1.0);
  const auto tt = ties.top();
  REQUIRE(tt[0].first == 3);
  REQUIRE(tt[1].first == 7);
  REQUIRE(tt[2].first == 9);
}

TEST_CASE("get distinguishes tracked and untracked ids", "[topk]") {
  TopKHeap h(2);
  REQUIRE(!h.get(5).has_value());
  h.offer(5, 1.0);
  REQUIRE(h.get(5) == 1.0);
}

TEST_CASE("lazy updates store the weight but defer the key", "[topk]") {
  TopKHeap h(3, 0.1);
  h.offer(5, 1.0);
  REQUIRE(h.offer(5, 1.05) == OfferResult::updated);
  REQUIRE(h.get(5) == 1.05);          // stored weight current
  REQUIRE(h.max_staleness() > 0.0);   // heap key stale
  REQUIRE(h.max_staleness() < 0.1);
  h.offer(5, 1.25);                   // drift >= eps forces a reposition
  REQUIRE(h.max_staleness() == 0.0);
}

TEST_CASE("staleness stays below eps_heap across random drifts", "[topk]") {
  for (double eps : {0.0, 0.05}) {
    TopKHeap h(50, eps);
    SplitMix64 rng(17);
    std::vector<std::uint64_t> live;
    for (int t = 0; t < 10000; ++t) {
      // Mix fresh ids with small perturbations of tracked ones.
      if (!live.empty() && rng.uniform() < 0.7) {
        const std::uint64_t id = live[rng.below(live.size())];
        const double w = h.get(id).value_or(0.0);
        h.offer(id, w + 0.02 * rng.normal());
      } else {
        const std::uint64_t id = rng.below(500);
        if (h.offer(id, rng.normal()) == OfferResult::inserted)
          live.push_back(id);
      }
    }
    if (eps == 0.0) {
      REQUIRE(h.max_staleness() == 0.0);
    } else {
      REQUIRE(h.max_staleness() < eps);
    }
  }
}

TEST_CASE("evict_min removes the smallest entry", "[topk]") {
  TopKHeap h(4);
  h.offer(10, 0.5);
  h.offer(20, 1.0);
  REQUIRE(h.evict_min() == std::pair<std::uint64_t, double>{10, 0.5});
  REQUIRE(h.size() == 1);
  REQUIRE(h.evict_min() == std::pair<std::uint64_t, double>{20, 1.0});
  REQUIRE(h.empty());
  REQUIRE_THROWS_AS(h.evict_min(), empty_heap_error);
}

TEST_CASE("capacity is never exceeded and counters balance", "[topk]") {
  TopKHeap h(10);
  SplitMix64 rng(23);
  for (int t = 0; t < 2000; ++t) {
    h.offer(rng.below(200), rng.normal());
    REQUIRE(h.size() <= 10);
  }
  h.evict_min();
  h.evict_min();
  REQUIRE(h.insertions() - h.evictions() == h.size());
}

TEST_CASE("evicted ids may re-enter later", "[topk]") {
  TopKHeap h(2);
  h.offer(1, 1.0);
  h.offer(2, 2.0);
  h.offer(3, 3.0);  // evicts 1
  REQUIRE(!h.contains(1));
  h.offer(1, 5.0);  // beats the new minimum (2.0)
  REQUIRE(h.contains(1));
  REQUIRE(!h.contains(2));
}

TEST_CASE("zero-capacity heap rejects all offers", "[topk]") {
  TopKHeap h(0);
  REQUIRE(h.offer(1, 100.0) == OfferResult::rejected);
  REQUIRE(h.empty());
}

TEST_CASE("non-finite weights are rejected", "[topk]") {
  TopKHeap h(2);
  REQUIRE_THROWS_AS(h.offer(1, std::numeric_limits<double>::infinity()),
                    numeric_input_error);
  REQUIRE_THROWS_AS(h.offer(1, std::numeric_limits<double>::quiet_NaN()),
                    numeric_input_error);
}

TEST_CASE("snapshot writes id<TAB>weight in descending magnitude", "[topk]") {
  TopKHeap h(3);
  h.offer(12, -0.75);
  h.offer(3, 2.0);
  h.offer(40, 1.0);
  std::stringstream out;
  h.snapshot(out);

  std::vector<std::pair<std::uint64_t, double>> parsed;
  std::string line;
  while (std::getline(out, line)) {
    const auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    parsed.emplace_back(std::stoull(line.substr(0, tab)),
                        std::stod(line.substr(tab + 1)));
  }
  REQUIRE(parsed == h.top());
}
