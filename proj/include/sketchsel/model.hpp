#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "sketchsel/countsketch.hpp"
#include "sketchsel/data.hpp"
#include "sketchsel/errors.hpp"
#include "sketchsel/loss.hpp"
#include "sketchsel/topk.hpp"

namespace sketchsel {

using SparseVector = std::vector<std::pair<std::uint64_t, double>>;

// Keeps the k largest-|value| entries, zeroing (dropping) the rest;
// ties broken by ascending index. Output is index-ascending.
inline SparseVector hard_threshold(SparseVector v, std::size_t k) {
  if (v.size() > k) {
    std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
      const double ma = std::abs(a.second), mb = std::abs(b.second);
      if (ma != mb) return ma > mb;
      return a.first < b.first;
    });
    v.resize(k);
  }
  std::sort(v.begin(), v.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  return v;
}

// Per-class sketch width under a total counter budget split across depth
// rows and C classes.
inline std::size_t per_class_width(std::size_t total_budget, std::size_t depth,
                                   std::size_t classes) {
  if (depth == 0 || classes == 0)
    throw invalid_geometry_error("budget split needs depth >= 1, classes >= 1");
  return total_budget / (depth * classes);
}

struct TrainerConfig {
  LossSpec loss;
  std::size_t top_k = 0;
  SketchGeometry geometry;        // MISSION only
  std::uint64_t seed = 0;
  double eps_heap = 0.0;
  std::size_t batch_budget = 0;   // Batch IHT only; must be >= top_k
};

// Sparse linear model whose active support lives in per-class top-k heaps.
// MISSION accumulates gradients in per-class count-sketches and re-queries
// touched features; IHT applies gradients to heap weights directly (the heap
// is the hard threshold); Batch IHT buffers gradients and sort-prunes.
// Predictions read heap weights only: evicted coordinates are exactly zero.
class DenseTopKModel {
 public:
  enum class Algo { mission, iht, batch_iht };

  DenseTopKModel(Algo algo, TrainerConfig cfg)
      : algo_(algo), cfg_(std::move(cfg)) {
    cfg_.loss.validate();
    const std::size_t classes = cfg_.loss.classes;
    if (algo_ == Algo::batch_iht && cfg_.batch_budget < cfg_.top_k)
      throw invalid_budget_error("batch buffer budget must be >= top_k");
    heaps_.reserve(classes);
    for (std::size_t c = 0; c < classes; ++c)
      heaps_.emplace_back(cfg_.top_k, cfg_.eps_heap);
    if (algo_ == Algo::mission) {
      sketches_.reserve(classes);
      // Distinct per-class seeds give C disjoint sketch regions.
      for (std::size_t c = 0; c < classes; ++c)
        sketches_.emplace_back(cfg_.geometry, mix64(cfg_.seed ^ (c + 1)));
    }
    if (algo_ == Algo::batch_iht) buffers_.resize(classes);
  }

  Algo algo() const noexcept { return algo_; }
  const TrainerConfig& config() const noexcept { return cfg_; }
  std::size_t classes() const noexcept { return cfg_.loss.classes; }

  TopKHeap& heap(std::size_t c = 0) { return heaps_.at(c); }
  const TopKHeap& heap(std::size_t c = 0) const { return heaps_.at(c); }
  CountSketch& sketch(std::size_t c = 0) { return sketches_.at(c); }
  const CountSketch& sketch(std::size_t c = 0) const { return sketches_.at(c); }

  // Inner product of heap-active weights with the example (class c).
  double predict(const SparseExample& ex, std::size_t c = 0) const {
    const TopKHeap& h = heaps_.at(c);
    double score = 0.0;
    for (std::size_t i = 0; i < ex.indices.size(); ++i)
      if (const auto w = h.get(ex.indices[i])) score += *w * ex.values[i];
    return score;
  }

  std::vector<double> predict_scores(const SparseExample& ex) const {
    std::vector<double> out(classes());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = predict(ex, c);
    return out;
  }

  double example_loss(const SparseExample& ex) const {
    if (classes() == 1) return loss_value(cfg_.loss, ex.label, predict(ex));
    return loss_value_multiclass(cfg_.loss, ex.label, predict_scores(ex));
  }

  void step(const SparseExample& ex) {
    switch (algo_) {
      case Algo::mission: mission_step(ex); return;
      case Algo::iht: iht_step(ex); return;
      case Algo::batch_iht: batch_iht_step(ex); return;
    }
  }

  // Gradient from heap weights -> sketch accumulation -> re-query touched
  // features -> offer estimates; the heap snapshot is the next iterate.
  void mission_step(const SparseExample& ex) {
    if (algo_ != Algo::mission)
      throw unsupported_mode_error("mission_step requires a MISSION model");
    for_each_class_coefficient(ex, [&](std::size_t c, double coef) {
      CountSketch& s = sketches_[c];
      TopKHeap& h = heaps_[c];
      for (std::size_t i = 0; i < ex.indices.size(); ++i)
        s.update(ex.indices[i], coef * ex.values[i]);
      for (std::uint64_t id : ex.indices) h.offer(id, s.query(id));
    });
  }

  // Gradient applied to heap weights; untracked features enter at their bare
  // gradient value and compete for slots. Candidates are snapshotted before
  // any offer so mid-step evictions cannot alter later candidates.
  void iht_step(const SparseExample& ex) {
    if (algo_ != Algo::iht)
      throw unsupported_mode_error("iht_step requires an IHT model");
    for_each_class_coefficient(ex, [&](std::size_t c, double coef) {
      TopKHeap& h = heaps_[c];
      scratch_.clear();
      for (std::size_t i = 0; i < ex.indices.size(); ++i) {
        const std::uint64_t id = ex.indices[i];
        scratch_.emplace_back(id, h.get(id).value_or(0.0) + coef * ex.values[i]);
      }
      for (const auto& [id, w] : scratch_) h.offer(id, w);
    });
  }

  // Buffered variant: gradients accumulate (on top of the tracked weight at
  // first touch) in a side buffer of up to batch_budget feature slots; a full
  // buffer or an epoch end triggers the sort-and-prune flush.
  void batch_iht_step(const SparseExample& ex) {
    if (algo_ != Algo::batch_iht)
      throw unsupported_mode_error("batch_iht_step requires a Batch IHT model");
    for_each_class_coefficient(ex, [&](std::size_t c, double coef) {
      auto& buf = buffers_[c];
      TopKHeap& h = heaps_[c];
      for (std::size_t i = 0; i < ex.indices.size(); ++i) {
        const std::uint64_t id = ex.indices[i];
        auto [it, fresh] = buf.try_emplace(id, 0.0);
        if (fresh) it->second = h.get(id).value_or(0.0);
        it->second += coef * ex.values[i];
      }
    });
    for (std::size_t c = 0; c < buffers_.size(); ++c)
      if (buffers_[c].size() >= cfg_.batch_budget) flush_batch(c);
  }

  void batch_iht_step(const std::vector<SparseExample>& batch) {
    for (const SparseExample& ex : batch) batch_iht_step(ex);
  }

  // Sort accumulated entries (with untouched tracked weights carried over)
  // by |weight| and rebuild the heap from the top-k; buffer cleared.
  void flush_batch(std::size_t c) {
    auto& buf = buffers_.at(c);
    if (buf.empty()) return;
    TopKHeap& h = heaps_[c];
    SparseVector candidates(buf.begin(), buf.end());
    for (const auto& [id, w] : h.top())
      if (buf.find(id) == buf.end()) candidates.emplace_back(id, w);
    buf.clear();
    candidates = hard_threshold(std::move(candidates), cfg_.top_k);
    h.clear();
    for (const auto& [id, w] : candidates)
      if (w != 0.0) h.offer(id, w);
  }

  // Epoch boundary hook: Batch IHT flushes, others are unaffected.
  void end_epoch() {
    if (algo_ == Algo::batch_iht)
      for (std::size_t c = 0; c < buffers_.size(); ++c) flush_batch(c);
  }

 private:
  template <class Fn>
  void for_each_class_coefficient(const SparseExample& ex, Fn&& fn) {
    if (classes() == 1) {
      const double coef =
          gradient_coefficient(cfg_.loss, ex.label, predict(ex));
      if (coef != 0.0) fn(std::size_t{0}, coef);
      return;
    }
    const std::vector<double> coefs =
        gradient_coefficients(cfg_.loss, ex.label, predict_scores(ex));
    for (std::size_t c = 0; c < coefs.size(); ++c)
      if (coefs[c] != 0.0) fn(c, coefs[c]);
  }

  Algo algo_;
  TrainerConfig cfg_;
  std::vector<TopKHeap> heaps_;
  std::vector<CountSketch> sketches_;
  std::vector<std::unordered_map<std::uint64_t, double>> buffers_;
  SparseVector scratch_;
};

// Dense feature-hashing baseline: indices re-hash into [0, R) and colliding
// features share one weight. Not a feature selector; no identity survives.
class FeatureHashModel {
 public:
  FeatureHashModel(std::size_t width, LossSpec loss, std::uint64_t seed)
      : width_(width), loss_(std::move(loss)), seed_(seed) {
    loss_.validate();
    if (width_ == 0) throw invalid_geometry_error("hash width must be >= 1");
    weights_.assign(width_ * loss_.classes, 0.0);
  }

  std::size_t width() const noexcept { return width_; }
  const LossSpec& loss() const noexcept { return loss_; }
  std::size_t classes() const noexcept { return loss_.classes; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<double>& weights() const noexcept { return weights_; }
  double& weight_at(std::size_t c, std::size_t bucket) {
    return weights_.at(c * width_ + bucket);
  }

  std::size_t bucket(std::uint64_t index) const noexcept {
    return static_cast<std::size_t>(mix64(seed_ ^ mix64(index)) % width_);
  }

  double predict(const SparseExample& ex, std::size_t c = 0) const {
    const double* w = weights_.data() + c * width_;
    double score = 0.0;
    for (std::size_t i = 0; i < ex.indices.size(); ++i)
      score += w[bucket(ex.indices[i])] * ex.values[i];
    return score;
  }

  std::vector<double> predict_scores(const SparseExample& ex) const {
    std::vector<double> out(classes());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = predict(ex, c);
    return out;
  }

  double example_loss(const SparseExample& ex) const {
    if (classes() == 1) return loss_value(loss_, ex.label, predict(ex));
    return loss_value_multiclass(loss_, ex.label, predict_scores(ex));
  }

  // Dense SGD on the bucketed weights.
  void fh_step(const SparseExample& ex) {
    if (classes() == 1) {
      const double coef = gradient_coefficient(loss_, ex.label, predict(ex));
      if (coef == 0.0) return;
      double* w = weights_.data();
      for (std::size_t i = 0; i < ex.indices.size(); ++i)
        w[bucket(ex.indices[i])] += coef * ex.values[i];
      return;
    }
    const std::vector<double> coefs =
        gradient_coefficients(loss_, ex.label, predict_scores(ex));
    for (std::size_t c = 0; c < coefs.size(); ++c) {
      if (coefs[c] == 0.0) continue;
      double* w = weights_.data() + c * width_;
      for (std::size_t i = 0; i < ex.indices.size(); ++i)
        w[bucket(ex.indices[i])] += coefs[c] * ex.values[i];
    }
  }

  void step(const SparseExample& ex) { fh_step(ex); }
  void end_epoch() {}

 private:
  std::size_t width_;
  LossSpec loss_;
  std::uint64_t seed_;
  std::vector<double> weights_;
};

struct StoppingRule {
  std::size_t max_epochs = 1;
  // Stop when (prev - cur) / max(|prev|, tiny) drops below this.
  std::optional<double> plateau_rel_improvement;
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean pre-update loss per epoch
  std::size_t steps = 0;
  std::size_t epochs_run = 0;
  bool stopped_early = false;
  double wall_seconds = 0.0;
};

// Runs the model's step over the stream until the epoch budget or the
// plateau rule fires. Zero epochs leaves the model untouched.
template <class Model>
TrainReport train(Model& model, const ExampleStream& stream,
                  const StoppingRule& stop) {
  const auto t0 = std::chrono::steady_clock::now();
  TrainReport report;
  for (std::size_t epoch = 0; epoch < stop.max_epochs; ++epoch) {
    double sum = 0.0;
    std::size_t count = 0;
    stream.for_epoch(epoch, [&](const SparseExample& ex) {
      sum += model.example_loss(ex);
      model.step(ex);
      ++count;
    });
    model.end_epoch();
    report.steps += count;
    report.epoch_loss.push_back(count ? sum / double(count) : 0.0);
    ++report.epochs_run;
    if (stop.plateau_rel_improvement && report.epoch_loss.size() >= 2) {
      const double prev = report.epoch_loss[report.epoch_loss.size() - 2];
      const double cur = report.epoch_loss.back();
      if ((prev - cur) / std::max(std::abs(prev), 1e-12) <
          *stop.plateau_rel_improvement) {
        report.stopped_early = true;
        break;
      }
    }
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
          .count();
  return report;
}

}  // namespace sketchsel
