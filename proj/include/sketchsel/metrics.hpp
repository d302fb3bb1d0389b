#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_set>
#include <vector>

#include "sketchsel/errors.hpp"

namespace sketchsel {

struct EvalReport {
  std::string metric;
  double value = 0.0;
  std::size_t samples = 0;
  std::size_t positives = 0;
};

// Mann-Whitney AUC via the rank statistic: probability a random positive
// outscores a random negative, ties counted one half.
inline double auc(const std::vector<double>& scores,
                  const std::vector<double>& labels) {
  if (scores.size() != labels.size())
    throw length_mismatch_error("auc: scores and labels differ in length");
  std::size_t pos = 0, neg = 0;
  for (double y : labels) (y > 0 ? pos : neg) += 1;
  if (pos == 0 || neg == 0)
    throw degenerate_labels_error("auc requires both classes present");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] < scores[b];
  });

  // Tied scores share the average of their 1-based rank range.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * double(i + 1 + j);  // mean of i+1 .. j
    for (std::size_t t = i; t < j; ++t)
      if (labels[order[t]] > 0) rank_sum_pos += avg_rank;
    i = j;
  }
  const double u = rank_sum_pos - 0.5 * double(pos) * double(pos + 1);
  return u / (double(pos) * double(neg));
}

// Sum of precision at each positive's rank over positives, scores descending,
// ties broken by ascending original index (deterministic).
inline double average_precision(const std::vector<double>& scores,
                                const std::vector<double>& labels) {
  if (scores.size() != labels.size())
    throw length_mismatch_error("ap: scores and labels differ in length");
  std::size_t pos = 0;
  for (double y : labels) pos += y > 0;
  if (pos == 0)
    throw degenerate_labels_error("average precision requires >= 1 positive");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });

  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 1; rank <= order.size(); ++rank) {
    if (labels[order[rank - 1]] > 0) {
      ++hits;
      sum += double(hits) / double(rank);
    }
  }
  return sum / double(pos);
}

inline double accuracy(const std::vector<double>& predicted,
                       const std::vector<double>& truth) {
  if (predicted.size() != truth.size())
    throw length_mismatch_error("accuracy: length mismatch");
  if (predicted.empty()) return 0.0;
  std::size_t equal = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i)
    equal += predicted[i] == truth[i];
  return double(equal) / double(predicted.size());
}

// True iff every planted id appears among the estimated ids.
inline bool support_recovered(const std::vector<std::uint64_t>& estimate,
                              const std::vector<std::uint64_t>& truth) {
  const std::unordered_set<std::uint64_t> have(estimate.begin(),
                                               estimate.end());
  for (std::uint64_t id : truth)
    if (have.find(id) == have.end()) return false;
  return true;
}

}  // namespace sketchsel
