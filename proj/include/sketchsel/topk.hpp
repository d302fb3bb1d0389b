#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <ostream>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sketchsel/errors.hpp"

namespace sketchsel {

enum class OfferResult { inserted, updated, rejected };

// Capacity-k min-heap ordered by |heap key|, with an id -> entry map.
// Each entry stores its current weight and the key it was last positioned
// under; positions are refreshed only when |weight - key| >= eps_heap, so
// with eps_heap = 0 the heap is exact and with eps_heap > 0 every key is
// within eps_heap of its entry's current weight.
class TopKHeap {
 public:
  explicit TopKHeap(std::size_t capacity, double eps_heap = 0.0)
      : capacity_(capacity), eps_(eps_heap) {
    if (!(eps_ >= 0.0) || !std::isfinite(eps_))
      throw numeric_input_error("eps_heap must be finite and >= 0");
  }

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return heap_.size(); }
  bool empty() const noexcept { return heap_.empty(); }
  double eps_heap() const noexcept { return eps_; }
  std::size_t insertions() const noexcept { return insertions_; }
  std::size_t evictions() const noexcept { return evictions_; }

  // Tracked id: stores the weight, repositioning lazily. Untracked id:
  // inserts while below capacity, else evicts the current minimum only when
  // |weight| strictly beats it (ties keep the incumbent).
  OfferResult offer(std::uint64_t index, double weight) {
    if (!std::isfinite(weight))
      throw numeric_input_error("offer requires a finite weight");
    if (auto it = entries_.find(index); it != entries_.end()) {
      Entry& e = it->second;
      e.weight = weight;
      if (std::abs(weight - heap_[e.pos].key) >= eps_) {
        heap_[e.pos].key = weight;
        reheap(e.pos);
      }
      return OfferResult::updated;
    }
    if (heap_.size() < capacity_) {
      insert_entry(index, weight);
      return OfferResult::inserted;
    }
    if (capacity_ == 0) return OfferResult::rejected;
    if (std::abs(weight) > std::abs(entries_.at(heap_[0].id).weight)) {
      remove_at(0);
      ++evictions_;
      insert_entry(index, weight);
      return OfferResult::inserted;
    }
    return OfferResult::rejected;
  }

  std::optional<double> get(std::uint64_t index) const {
    auto it = entries_.find(index);
    if (it == entries_.end()) return std::nullopt;
    return it->second.weight;
  }

  bool contains(std::uint64_t index) const {
    return entries_.find(index) != entries_.end();
  }

  // All entries with their current weights, descending |weight|,
  // ties by ascending feature id.
  std::vector<std::pair<std::uint64_t, double>> top() const {
    std::vector<std::pair<std::uint64_t, double>> out;
    out.reserve(heap_.size());
    for (const Node& n : heap_) out.emplace_back(n.id, entries_.at(n.id).weight);
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
      const double ma = std::abs(a.second), mb = std::abs(b.second);
      if (ma != mb) return ma > mb;
      return a.first < b.first;
    });
    return out;
  }

  std::vector<std::uint64_t> ids() const {
    std::vector<std::uint64_t> out;
    out.reserve(heap_.size());
    for (const Node& n : heap_) out.push_back(n.id);
    return out;
  }

  // Removes and returns the root entry; with eps_heap > 0 it may be within
  // eps_heap of the true minimum rather than the exact one.
  std::pair<std::uint64_t, double> evict_min() {
    if (heap_.empty()) throw empty_heap_error("evict_min on an empty heap");
    const std::uint64_t id = heap_[0].id;
    const double weight = entries_.at(id).weight;
    remove_at(0);
    ++evictions_;
    return {id, weight};
  }

  void clear() {
    heap_.clear();
    entries_.clear();
  }

  // Largest |weight - key| over entries; < eps_heap by construction.
  double max_staleness() const {
    double worst = 0.0;
    for (const Node& n : heap_)
      worst = std::max(worst, std::abs(entries_.at(n.id).weight - n.key));
    return worst;
  }

  // One "feature_id<TAB>weight" line per entry, descending |weight|.
  void snapshot(std::ostream& os) const {
    char line[64];
    for (const auto& [id, w] : top()) {
      std::snprintf(line, sizeof(line), "%llu\t%.17g\n",
                    static_cast<unsigned long long>(id), w);
      os << line;
    }
  }

 private:
  struct Node {
    double key;  // weight at last reposition
    std::uint64_t id;
  };
  struct Entry {
    double weight;
    std::size_t pos;
  };

  static bool less_abs(double a, double b) noexcept {
    return std::abs(a) < std::abs(b);
  }

  void insert_entry(std::uint64_t index, double weight) {
    heap_.push_back(Node{weight, index});
    entries_[index] = Entry{weight, heap_.size() - 1};
    sift_up(heap_.size() - 1);
    ++insertions_;
  }

  // Swap-with-last removal; the displaced node is re-sifted.
  void remove_at(std::size_t pos) {
    entries_.erase(heap_[pos].id);
    if (pos + 1 != heap_.size()) {
      heap_[pos] = heap_.back();
      entries_.at(heap_[pos].id).pos = pos;
      heap_.pop_back();
      reheap(pos);
    } else {
      heap_.pop_back();
    }
  }

  void reheap(std::size_t pos) {
    sift_up(pos);
    sift_down(pos);
  }

  void sift_up(std::size_t pos) {
    while (pos > 0) {
      const std::size_t parent = (pos - 1) / 2;
      if (!less_abs(heap_[pos].key, heap_[parent].key)) break;
      swap_nodes(pos, parent);
      pos = parent;
    }
  }

  void sift_down(std::size_t pos) {
    for (;;) {
      std::size_t smallest = pos;
      const std::size_t l = 2 * pos + 1, r = 2 * pos + 2;
      if (l < heap_.size() && less_abs(heap_[l].key, heap_[smallest].key))
        smallest = l;
      if (r < heap_.size() && less_abs(heap_[r].key, heap_[smallest].key))
        smallest = r;
      if (smallest == pos) break;
      swap_nodes(pos, smallest);
      pos = smallest;
    }
  }

  void swap_nodes(std::size_t a, std::size_t b) {
    std::swap(heap_[a], heap_[b]);
    entries_.at(heap_[a].id).pos = a;
    entries_.at(heap_[b].id).pos = b;
  }

  std::size_t capacity_;
  double eps_;
  std::vector<Node> heap_;
  std::unordered_map<std::uint64_t, Entry> entries_;
  std::size_t insertions_ = 0;
  std::size_t evictions_ = 0;
};

}  // namespace sketchsel
