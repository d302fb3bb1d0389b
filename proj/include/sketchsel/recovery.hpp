#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "sketchsel/countsketch.hpp"
#include "sketchsel/data.hpp"
#include "sketchsel/errors.hpp"
#include "sketchsel/metrics.hpp"
#include "sketchsel/model.hpp"
#include "sketchsel/synthetic.hpp"

namespace sketchsel {

// Per-round multiplicative attenuation applied to non-selected sketch mass;
// starts near 1 and decays linearly to a floor.
struct GammaSchedule {
  double start = 0.999;
  double decrement = 0.0005;
  double floor = 0.9;

  void validate() const {
    if (!std::isfinite(start) || !std::isfinite(decrement) ||
        !std::isfinite(floor) || start <= 0.0 || start >= 1.0 ||
        floor <= 0.0 || floor > start || decrement < 0.0)
      throw invalid_spec_error(
          "gamma schedule requires 0 < floor <= start < 1 and decrement >= 0");
  }

  double at(std::size_t round) const noexcept {
    return std::max(floor, start - decrement * double(round));
  }

  // Constant attenuation factor (no decay).
  static GammaSchedule fixed(double value) noexcept {
    return {value, 0.0, value};
  }
};

namespace detail {

// Exact top-k ids of |values| with ties broken by ascending id; returned
// ascending by id.
inline std::vector<std::uint64_t> top_ids(const std::vector<double>& values,
                                          std::size_t k) {
  std::vector<std::uint64_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), std::uint64_t{0});
  if (k < idx.size()) {
    std::nth_element(idx.begin(), idx.begin() + k, idx.end(),
                     [&](std::uint64_t a, std::uint64_t b) {
                       const double ma = std::abs(values[a]);
                       const double mb = std::abs(values[b]);
                       if (ma != mb) return ma > mb;
                       return a < b;
                     });
    idx.resize(k);
  }
  std::sort(idx.begin(), idx.end());
  return idx;
}

inline double median_inplace(double* v, std::size_t n) {
  std::sort(v, v + n);
  if (n % 2 == 1) return v[n / 2];
  return 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace detail

// One full-gradient recovery run.
struct FullGradientOptions {
  std::size_t top_k = 0;
  GammaSchedule gamma{};
  std::size_t max_rounds = 300;
  std::size_t stable_rounds = 10;  // 0 disables the stability stop
  std::size_t cleanup_top_m = 0;   // 0 sketches the full gradient
  // Identity with width 0 means "width = p".
  SketchGeometry geometry{1, 0, SketchMode::identity};
  std::uint64_t sketch_seed = 0;
  // Standard mode only: after the uniform scale, re-add (1 - gamma) times the
  // selected estimates so tracked coordinates keep their value.
  bool restore_selected_after_scale = false;
  bool track_errors = false;
};

struct RecoveryOutcome {
  std::vector<std::uint64_t> selected;  // final top-k ids, ascending
  std::size_t rounds = 0;
  bool stabilized = false;
  bool diverged = false;   // non-finite gradient, or error doubled 5 rounds
  bool recovered = false;  // planted support contained in selected
  std::vector<double> errors;  // ||beta - beta*||_2 per round when tracked
};

namespace detail {

// Shared bookkeeping for the round loops: stability counting, error
// tracking with the doubling-divergence flag.
class RoundTracker {
 public:
  RoundTracker(std::size_t stable_rounds, bool track_errors,
               const std::vector<std::uint64_t>& support)
      : stable_rounds_(stable_rounds),
        track_errors_(track_errors),
        support_(support) {}

  // Returns true when the run should stop (support stable long enough).
  bool end_round(const std::vector<std::uint64_t>& ids,
                 const SparseVector& beta, RecoveryOutcome& out) {
    if (track_errors_) {
      const double err = support_l2_error(beta, support_);
      if (!out.errors.empty() && err > 2.0 * out.errors.back()) {
        if (++doublings_ >= 5) out.diverged = true;
      } else {
        doublings_ = 0;
      }
      out.errors.push_back(err);
    }
    ++out.rounds;
    if (have_prev_ && ids == prev_) {
      if (stable_rounds_ > 0 && ++stable_ >= stable_rounds_) {
        out.stabilized = true;
        return true;
      }
    } else {
      stable_ = 0;
    }
    prev_ = ids;
    have_prev_ = true;
    return false;
  }

 private:
  std::size_t stable_rounds_;
  bool track_errors_;
  const std::vector<std::uint64_t>& support_;
  std::vector<std::uint64_t> prev_;
  bool have_prev_ = false;
  std::size_t stable_ = 0;
  std::size_t doublings_ = 0;
};

// residual = y - X beta for a sparse beta.
inline void residual_into(const DesignData& d, const SparseVector& beta,
                          std::vector<double>& resid) {
  resid.assign(d.y.begin(), d.y.end());
  for (const auto& [id, w] : beta)
    for (std::size_t i = 0; i < d.n; ++i)
      resid[i] -= w * d.x[i * d.p + id];
}

// g = 2 lambda X^T resid; returns false when any entry is non-finite.
inline bool gradient_into(const DesignData& d, const std::vector<double>& resid,
                          double lambda, std::vector<double>& g) {
  g.assign(d.p, 0.0);
  for (std::size_t i = 0; i < d.n; ++i) {
    const double r = 2.0 * lambda * resid[i];
    const double* row = d.x.data() + i * d.p;
    for (std::size_t j = 0; j < d.p; ++j) g[j] += row[j] * r;
  }
  for (double v : g)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace detail

// Full-gradient mission recovery: accumulate the (optionally top-m cleaned)
// gradient into the sketch, re-select the top-k queried coordinates as the
// iterate, attenuate unselected mass, and stop once the selection is stable.
inline RecoveryOutcome run_mission_full(const DesignData& d,
                                        FullGradientOptions opt) {
  opt.gamma.validate();
  if (opt.geometry.mode == SketchMode::identity && opt.geometry.width == 0)
    opt.geometry.width = d.p;
  if (opt.geometry.mode == SketchMode::identity && opt.geometry.width < d.p)
    throw invalid_geometry_error("identity recovery sketch must cover p");
  CountSketch sketch(opt.geometry, opt.sketch_seed);
  const bool standard = opt.geometry.mode == SketchMode::standard;
  const std::size_t depth = opt.geometry.depth;

  // Standard mode: precompute bucket/sign tables so the all-p query sweep
  // does no hashing.
  std::vector<std::uint32_t> buckets;
  std::vector<double> signs;
  if (standard) {
    buckets.resize(depth * d.p);
    signs.resize(depth * d.p);
    for (std::size_t j = 0; j < depth; ++j)
      for (std::uint64_t i = 0; i < d.p; ++i) {
        buckets[j * d.p + i] = std::uint32_t(sketch.bucket(j, i));
        signs[j * d.p + i] = sketch.sign(j, i);
      }
  }

  const double lambda = auto_lambda(d);
  RecoveryOutcome out;
  detail::RoundTracker tracker(opt.stable_rounds, opt.track_errors, d.support);
  SparseVector beta;
  std::vector<double> resid, g, q(d.p), rowvals(depth);
  std::vector<std::uint64_t> ids;

  for (std::size_t round = 0; round < opt.max_rounds; ++round) {
    detail::residual_into(d, beta, resid);
    if (!detail::gradient_into(d, resid, lambda, g)) {
      out.diverged = true;
      break;
    }
    if (opt.cleanup_top_m > 0 && opt.cleanup_top_m < d.p) {
      for (std::uint64_t id : detail::top_ids(g, opt.cleanup_top_m))
        if (g[id] != 0.0) sketch.update(id, g[id]);
    } else {
      for (std::uint64_t i = 0; i < d.p; ++i)
        if (g[i] != 0.0) sketch.update(i, g[i]);
    }

    if (standard) {
      const std::vector<double>& cells = sketch.counters();
      for (std::uint64_t i = 0; i < d.p; ++i) {
        for (std::size_t j = 0; j < depth; ++j)
          rowvals[j] = signs[j * d.p + i] *
                       cells[j * opt.geometry.width + buckets[j * d.p + i]];
        q[i] = detail::median_inplace(rowvals.data(), depth);
      }
    } else {
      const std::vector<double>& cells = sketch.counters();
      for (std::uint64_t i = 0; i < d.p; ++i) q[i] = cells[i];
    }

    ids = detail::top_ids(q, opt.top_k);
    beta.clear();
    for (std::uint64_t id : ids) beta.emplace_back(id, q[id]);

    const double gamma = opt.gamma.at(round);
    if (standard) {
      sketch.scale(gamma);
      if (opt.restore_selected_after_scale)
        for (const auto& [id, w] : beta)
          if (w != 0.0) sketch.update(id, (1.0 - gamma) * w);
    } else {
      sketch.scale_except(gamma, ids);
    }

    if (tracker.end_round(ids, beta, out) || out.diverged) break;
  }
  out.selected = ids;
  out.recovered = support_recovered(out.selected, d.support);
  return out;
}

// Full-gradient hard-thresholding recovery: beta <- H_k(beta + g). No sketch,
// no memory outside the current support.
inline RecoveryOutcome run_iht_full(const DesignData& d,
                                    const FullGradientOptions& opt) {
  const double lambda = auto_lambda(d);
  RecoveryOutcome out;
  detail::RoundTracker tracker(opt.stable_rounds, opt.track_errors, d.support);
  SparseVector beta;
  std::vector<double> resid, g;
  std::vector<std::uint64_t> ids;

  for (std::size_t round = 0; round < opt.max_rounds; ++round) {
    detail::residual_into(d, beta, resid);
    if (!detail::gradient_into(d, resid, lambda, g)) {
      out.diverged = true;
      break;
    }
    for (const auto& [id, w] : beta) g[id] += w;  // candidate = beta + g
    ids = detail::top_ids(g, opt.top_k);
    beta.clear();
    for (std::uint64_t id : ids) beta.emplace_back(id, g[id]);
    if (tracker.end_round(ids, beta, out) || out.diverged) break;
  }
  out.selected = ids;
  out.recovered = support_recovered(out.selected, d.support);
  return out;
}

// One per-example (streaming) recovery run over shuffled epochs.
struct StreamOptions {
  std::size_t top_k = 0;
  GammaSchedule gamma{};  // mission only, applied once per epoch
  std::size_t max_epochs = 150;
  std::size_t stable_epochs = 10;
  std::uint64_t shuffle_seed = 0;
  std::uint64_t sketch_seed = 0;
};

namespace detail {

template <class StepFn, class EpochEndFn>
RecoveryOutcome run_stream_loop(const DesignData& d, const StreamOptions& opt,
                                TopKHeap& heap, StepFn&& step,
                                EpochEndFn&& epoch_end) {
  const ExampleStream stream(design_examples(d), opt.shuffle_seed);
  RecoveryOutcome out;
  RoundTracker tracker(opt.stable_epochs, false, d.support);
  std::vector<std::uint64_t> ids;
  SparseVector unused;
  for (std::size_t epoch = 0; epoch < opt.max_epochs; ++epoch) {
    stream.for_epoch(epoch, step);
    ids = heap.ids();
    std::sort(ids.begin(), ids.end());
    epoch_end(epoch, ids);
    if (tracker.end_round(ids, unused, out)) break;
  }
  out.selected = ids;
  out.recovered = support_recovered(out.selected, d.support);
  return out;
}

}  // namespace detail

inline RecoveryOutcome run_mission_stream(const DesignData& d,
                                          const StreamOptions& opt) {
  opt.gamma.validate();
  TrainerConfig cfg;
  cfg.loss = {LossKind::squared, auto_lambda(d), 1};
  cfg.top_k = opt.top_k;
  cfg.geometry = {1, d.p, SketchMode::identity};
  cfg.seed = opt.sketch_seed;
  DenseTopKModel model(DenseTopKModel::Algo::mission, cfg);
  return detail::run_stream_loop(
      d, opt, model.heap(),
      [&](const SparseExample& ex) { model.mission_step(ex); },
      [&](std::size_t epoch, const std::vector<std::uint64_t>& ids) {
        model.sketch().scale_except(opt.gamma.at(epoch), ids);
      });
}

inline RecoveryOutcome run_iht_stream(const DesignData& d,
                                      const StreamOptions& opt) {
  TrainerConfig cfg;
  cfg.loss = {LossKind::squared, auto_lambda(d), 1};
  cfg.top_k = opt.top_k;
  DenseTopKModel model(DenseTopKModel::Algo::iht, cfg);
  return detail::run_stream_loop(
      d, opt, model.heap(),
      [&](const SparseExample& ex) { model.iht_step(ex); },
      [](std::size_t, const std::vector<std::uint64_t>&) {});
}

}  // namespace sketchsel
