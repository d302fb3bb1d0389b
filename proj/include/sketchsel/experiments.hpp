#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <initializer_list>
#include <ostream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "sketchsel/recovery.hpp"
#include "sketchsel/version.hpp"

namespace sketchsel {

namespace detail {

// Deterministic seed for a grid cell: mixes the base with every coordinate,
// so results are independent of cell execution order.
inline std::uint64_t cell_seed(std::uint64_t base,
                               std::initializer_list<std::uint64_t> coords) {
  std::uint64_t h = mix64(base ^ 0x1f83d9abfb41bd6bULL);
  for (std::uint64_t c : coords) h = mix64(h ^ mix64(c + 0x9e3779b97f4a7c15ULL));
  return h;
}

// Runs fn(0..count) across a small worker pool; rethrows the first worker
// exception. Results must be written to per-index slots by the caller.
template <class Fn>
void parallel_for_index(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  std::vector<std::thread> pool;
  pool.reserve(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count || failed.load()) return;
        try {
          fn(i);
        } catch (...) {
          if (!failed.exchange(true)) error = std::current_exception();
          return;
        }
      }
    });
  for (std::thread& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

inline std::string format_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / double(v.size());
}

inline double population_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / double(v.size()));
}

template <class T>
void json_get(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline void json_get_gamma(const nlohmann::json& j, const char* key,
                           GammaSchedule& g) {
  if (!j.contains(key)) return;
  const nlohmann::json& s = j.at(key);
  json_get(s, "start", g.start);
  json_get(s, "decrement", g.decrement);
  json_get(s, "floor", g.floor);
}

inline nlohmann::json gamma_json(const GammaSchedule& g) {
  return {{"start", g.start}, {"decrement", g.decrement}, {"floor", g.floor}};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Phase transition: support-recovery success rates over an (n, k) grid.
// ---------------------------------------------------------------------------

struct PhaseGrid {
  std::size_t p = 1000;
  std::vector<std::size_t> n_values{50, 100, 200};
  std::vector<std::size_t> k_values{0, 1, 2, 4, 6, 8, 12, 16};
  std::size_t trials = 20;
  std::uint64_t base_seed = 333;
  double success_threshold = 0.5;
  std::size_t max_epochs = 150;
  std::size_t stable_epochs = 10;
  GammaSchedule gamma{};
  bool full_gradient = false;  // per-example streaming by default
  std::size_t threads = 1;

  void validate() const {
    if (trials < 1) throw invalid_spec_error("phase grid requires trials >= 1");
    if (!(success_threshold > 0.0) || !(success_threshold < 1.0))
      throw invalid_spec_error("success threshold must lie in (0, 1)");
    if (n_values.empty() || k_values.empty())
      throw invalid_spec_error("phase grid requires n and k values");
    gamma.validate();
  }
};

struct PhaseCell {
  std::size_t n = 0, k = 0, trials = 0;
  double mission_rate = 0.0, iht_rate = 0.0;
  bool skipped = false;
  std::string note;
};

struct PhaseContour {
  std::size_t n = 0;
  double mission_k50 = 0.0, iht_k50 = 0.0;
};

struct PhaseResult {
  PhaseGrid grid;
  std::vector<PhaseCell> cells;  // row-major over n_values x k_values
  std::vector<PhaseContour> contours;
  double mission_dominance = 0.0;  // fraction of n rows, mission above iht
};

namespace detail {

// Largest (interpolated) k at which the success rate still reaches the
// threshold; 0 when even the smallest k is below it.
inline double contour_along_k(const std::vector<double>& ks,
                              const std::vector<double>& rates,
                              double threshold) {
  std::size_t last = ks.size();
  for (std::size_t i = 0; i < ks.size(); ++i)
    if (rates[i] >= threshold) last = i;
  if (last == ks.size()) return 0.0;
  if (last + 1 == ks.size()) return ks.back();
  const double span = rates[last] - rates[last + 1];
  return ks[last] + (rates[last] - threshold) * (ks[last + 1] - ks[last]) / span;
}

}  // namespace detail

inline PhaseResult run_phase_transition(const PhaseGrid& grid) {
  grid.validate();
  PhaseResult result;
  result.grid = grid;
  std::vector<std::size_t> ks = grid.k_values;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  std::vector<std::size_t> ns = grid.n_values;
  std::sort(ns.begin(), ns.end());
  ns.erase(std::unique(ns.begin(), ns.end()), ns.end());

  result.cells.resize(ns.size() * ks.size());
  detail::parallel_for_index(
      result.cells.size(), grid.threads, [&](std::size_t idx) {
        const std::size_t n = ns[idx / ks.size()];
        const std::size_t k = ks[idx % ks.size()];
        PhaseCell cell;
        cell.n = n;
        cell.k = k;
        cell.trials = grid.trials;
        std::size_t mission_wins = 0, iht_wins = 0;
        for (std::size_t t = 0; t < grid.trials && !cell.skipped; ++t) {
          try {
            const DesignData design = generate_design(
                {grid.p, n, k, 0.0, 1.0,
                 detail::cell_seed(grid.base_seed, {1, n, k, t})});
            if (grid.full_gradient) {
              FullGradientOptions opt;
              opt.top_k = k;
              opt.gamma = grid.gamma;
              opt.max_rounds = grid.max_epochs;
              opt.stable_rounds = grid.stable_epochs;
              mission_wins += run_mission_full(design, opt).recovered;
              iht_wins += run_iht_full(design, opt).recovered;
            } else {
              StreamOptions opt;
              opt.top_k = k;
              opt.gamma = grid.gamma;
              opt.max_epochs = grid.max_epochs;
              opt.stable_epochs = grid.stable_epochs;
              opt.shuffle_seed = detail::cell_seed(grid.base_seed, {2, n, k, t});
              opt.sketch_seed = detail::cell_seed(grid.base_seed, {3, n, k, t});
              mission_wins += run_mission_stream(design, opt).recovered;
              iht_wins += run_iht_stream(design, opt).recovered;
            }
          } catch (const invalid_spec_error& e) {
            cell.skipped = true;
            cell.note = e.what();
          }
        }
        if (!cell.skipped) {
          cell.mission_rate = double(mission_wins) / double(grid.trials);
          cell.iht_rate = double(iht_wins) / double(grid.trials);
        }
        result.cells[idx] = std::move(cell);
      });

  std::size_t rows_won = 0, rows_counted = 0;
  for (std::size_t r = 0; r < ns.size(); ++r) {
    std::vector<double> row_k, row_m, row_i;
    for (std::size_t c = 0; c < ks.size(); ++c) {
      const PhaseCell& cell = result.cells[r * ks.size() + c];
      if (cell.skipped) continue;
      row_k.push_back(double(cell.k));
      row_m.push_back(cell.mission_rate);
      row_i.push_back(cell.iht_rate);
    }
    if (row_k.empty()) continue;
    PhaseContour contour;
    contour.n = ns[r];
    contour.mission_k50 =
        detail::contour_along_k(row_k, row_m, grid.success_threshold);
    contour.iht_k50 =
        detail::contour_along_k(row_k, row_i, grid.success_threshold);
    result.contours.push_back(contour);
    ++rows_counted;
    rows_won += contour.mission_k50 > contour.iht_k50;
  }
  if (rows_counted > 0)
    result.mission_dominance = double(rows_won) / double(rows_counted);
  return result;
}

// ---------------------------------------------------------------------------
// Attenuation tolerance: per-trial maximum alpha with full support recovery.
// ---------------------------------------------------------------------------

struct AttenuationConfig {
  std::size_t p = 1000, n = 100, k = 2;
  std::size_t trials = 100;
  double alpha_start = 1.0, alpha_step = 0.25;
  std::size_t alpha_count = 17;  // 1, 1.25, ..., 5
  std::uint64_t base_seed = 2000;
  std::size_t max_rounds = 300, stable_rounds = 10;
  GammaSchedule gamma{};
  std::size_t threads = 1;

  void validate() const {
    if (trials < 1 || alpha_count < 1)
      throw invalid_spec_error("attenuation config requires trials, alphas >= 1");
    if (!(alpha_start >= 1.0) || !(alpha_step > 0.0))
      throw invalid_spec_error("alpha ladder must start at >= 1 and increase");
    gamma.validate();
  }
};

struct AttenuationTrial {
  std::uint64_t design_seed = 0;
  bool mission_acc1 = false, iht_acc1 = false;
  double mission_max_alpha = 0.0, iht_max_alpha = 0.0;
};

struct AttenuationSummary {
  double acc1_rate = 0.0;
  double mean_max_alpha = 0.0, sd_max_alpha = 0.0;
};

struct AttenuationResult {
  AttenuationConfig config;
  std::vector<AttenuationTrial> trials;
  std::size_t co_successful = 0;
  AttenuationSummary mission, iht;
};

inline AttenuationResult run_attenuation(const AttenuationConfig& cfg) {
  cfg.validate();
  AttenuationResult result;
  result.config = cfg;
  result.trials.resize(cfg.trials);

  detail::parallel_for_index(cfg.trials, cfg.threads, [&](std::size_t t) {
    AttenuationTrial trial;
    trial.design_seed = detail::cell_seed(cfg.base_seed, {11, t});
    for (int algo = 0; algo < 2; ++algo) {
      double max_alpha = 0.0;
      bool acc1 = false;
      for (std::size_t a = 0; a < cfg.alpha_count; ++a) {
        const double alpha = cfg.alpha_start + cfg.alpha_step * double(a);
        const DesignData design = generate_design(
            {cfg.p, cfg.n, cfg.k, 0.0, alpha, trial.design_seed});
        FullGradientOptions opt;
        opt.top_k = cfg.k;
        opt.gamma = cfg.gamma;
        opt.max_rounds = cfg.max_rounds;
        opt.stable_rounds = cfg.stable_rounds;
        const RecoveryOutcome run = algo == 0 ? run_mission_full(design, opt)
                                              : run_iht_full(design, opt);
        if (a == 0) acc1 = run.recovered;
        if (!run.recovered) break;  // ladder stops at the first failure
        max_alpha = alpha;
      }
      if (algo == 0) {
        trial.mission_acc1 = acc1;
        trial.mission_max_alpha = max_alpha;
      } else {
        trial.iht_acc1 = acc1;
        trial.iht_max_alpha = max_alpha;
      }
    }
    result.trials[t] = trial;
  });

  // Table protocol: average max alpha over trials where every compared
  // algorithm succeeds at alpha = 1.
  std::vector<double> mission_vals, iht_vals;
  std::size_t mission_acc = 0, iht_acc = 0;
  for (const AttenuationTrial& trial : result.trials) {
    mission_acc += trial.mission_acc1;
    iht_acc += trial.iht_acc1;
    if (trial.mission_acc1 && trial.iht_acc1) {
      mission_vals.push_back(trial.mission_max_alpha);
      iht_vals.push_back(trial.iht_max_alpha);
    }
  }
  result.co_successful = mission_vals.size();
  result.mission.acc1_rate = double(mission_acc) / double(cfg.trials);
  result.iht.acc1_rate = double(iht_acc) / double(cfg.trials);
  result.mission.mean_max_alpha = detail::mean_of(mission_vals);
  result.mission.sd_max_alpha = detail::population_sd(mission_vals);
  result.iht.mean_max_alpha = detail::mean_of(iht_vals);
  result.iht.sd_max_alpha = detail::population_sd(iht_vals);
  return result;
}

// ---------------------------------------------------------------------------
// Memory scaling: minimal sketch width for 100% recovery across a p ladder.
// ---------------------------------------------------------------------------

struct MemoryScalingConfig {
  std::vector<std::size_t> p_exponents{10, 12, 14, 16};
  std::size_t k = 5, n = 100;
  std::size_t depth = 5;
  std::size_t trials = 10;
  std::size_t cleanup_top_m = 20;
  std::size_t width_start = 8;
  std::size_t width_cap = std::size_t{1} << 21;
  std::uint64_t base_seed = 50000;
  std::size_t max_rounds = 400, stable_rounds = 10;
  GammaSchedule gamma{};
  std::size_t threads = 1;

  void validate() const {
    if (p_exponents.empty() || trials < 1)
      throw invalid_spec_error("memory scaling requires exponents and trials");
    if (width_start < 1 || width_cap < width_start)
      throw invalid_spec_error("memory scaling width range is empty");
    gamma.validate();
  }
};

struct MemoryScalingPoint {
  std::size_t exponent = 0, p = 0;
  std::size_t minimal_width = 0;  // 0 when censored
  bool censored = false;
  std::size_t probes = 0;
};

struct MemoryScalingResult {
  MemoryScalingConfig config;
  std::vector<MemoryScalingPoint> points;
  double width_ratio = 0.0;  // last / first uncensored minimal width
  double fit_intercept = 0.0, fit_slope = 0.0;  // width ~ a + b log2(p)^2
};

namespace detail {

inline bool memory_all_recover(const MemoryScalingConfig& cfg,
                               std::size_t exponent, std::size_t p,
                               std::size_t width) {
  for (std::size_t t = 0; t < cfg.trials; ++t) {
    const DesignData design = generate_design(
        {p, cfg.n, cfg.k, 0.0, 1.0, cell_seed(cfg.base_seed, {21, exponent, t})});
    FullGradientOptions opt;
    opt.top_k = cfg.k;
    opt.gamma = cfg.gamma;
    opt.max_rounds = cfg.max_rounds;
    opt.stable_rounds = cfg.stable_rounds;
    opt.cleanup_top_m = cfg.cleanup_top_m;
    opt.geometry = {cfg.depth, width, SketchMode::standard};
    opt.sketch_seed = cell_seed(cfg.base_seed, {22, exponent, t});
    if (!run_mission_full(design, opt).recovered) return false;
  }
  return true;
}

}  // namespace detail

inline MemoryScalingResult run_memory_scaling(const MemoryScalingConfig& cfg) {
  cfg.validate();
  MemoryScalingResult result;
  result.config = cfg;
  result.points.resize(cfg.p_exponents.size());

  detail::parallel_for_index(
      cfg.p_exponents.size(), cfg.threads, [&](std::size_t i) {
        const std::size_t e = cfg.p_exponents[i];
        MemoryScalingPoint point;
        point.exponent = e;
        point.p = std::size_t{1} << e;
        // Doubling sweep up to the cap, then bisection to a 1/16 tolerance.
        std::size_t w = cfg.width_start;
        while (w <= cfg.width_cap &&
               !detail::memory_all_recover(cfg, e, point.p, w)) {
          w *= 2;
          ++point.probes;
        }
        ++point.probes;
        if (w > cfg.width_cap) {
          point.censored = true;
        } else {
          std::size_t lo = w / 2, hi = w;
          while (hi - lo > std::max<std::size_t>(1, hi / 16)) {
            const std::size_t mid = lo + (hi - lo) / 2;
            ++point.probes;
            if (detail::memory_all_recover(cfg, e, point.p, mid))
              hi = mid;
            else
              lo = mid;
          }
          point.minimal_width = hi;
        }
        result.points[i] = point;
      });

  // Quadratic-in-log fit over uncensored points and the end-to-end ratio.
  std::vector<double> xs, ys;
  for (const MemoryScalingPoint& pt : result.points)
    if (!pt.censored) {
      xs.push_back(double(pt.exponent) * double(pt.exponent));
      ys.push_back(double(pt.minimal_width));
    }
  if (xs.size() >= 2) {
    const double mx = detail::mean_of(xs), my = detail::mean_of(ys);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      sxx += (xs[i] - mx) * (xs[i] - mx);
      sxy += (xs[i] - mx) * (ys[i] - my);
    }
    result.fit_slope = sxx > 0.0 ? sxy / sxx : 0.0;
    result.fit_intercept = my - result.fit_slope * mx;
    result.width_ratio = ys.back() / ys.front();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Sketch-memory trade-off: multi-class accuracy vs width-to-k ratio.
// ---------------------------------------------------------------------------

struct TradeoffConfig {
  std::size_t classes = 3, p = 512, k = 8, depth = 3;
  std::vector<double> ratios{0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0};
  std::size_t trials = 5;
  std::size_t train_examples = 1200, test_examples = 600;
  std::size_t features_per_class = 6, noise_features = 4;
  double feature_rate = 0.6;
  std::size_t epochs = 4;
  double lambda = 0.1;
  std::uint64_t base_seed = 606;
  std::size_t threads = 1;

  void validate() const {
    if (classes < 2 || k < 1 || trials < 1 || ratios.empty())
      throw invalid_spec_error("tradeoff config needs classes, k, trials, ratios");
    if (classes * 128 > p + 128)  // planted blocks live at 128*c offsets
      throw invalid_spec_error("tradeoff p too small for the class blocks");
  }
};

struct TradeoffPoint {
  double ratio = 0.0;
  std::size_t width = 0;
  double mean_accuracy = 0.0, sd_accuracy = 0.0;
};

struct TradeoffResult {
  TradeoffConfig config;
  std::vector<TradeoffPoint> points;  // ascending ratio; ratio 1 always present
  double identity_mean_accuracy = 0.0, identity_sd_accuracy = 0.0;
  double noise_band = 0.0;  // 2 * max sd across points
};

namespace detail {

// Class-conditional sparse examples: class c activates features within its
// block [128c, 128c + features_per_class) plus uniform noise features.
inline std::vector<SparseExample> tradeoff_examples(const TradeoffConfig& cfg,
                                                    std::size_t count,
                                                    std::uint64_t seed) {
  SplitMix64 rng(seed);
  std::vector<SparseExample> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t label = rng.below(cfg.classes);
    std::set<std::uint64_t> ids;
    for (std::size_t f = 0; f < cfg.features_per_class; ++f)
      if (rng.uniform() < cfg.feature_rate) ids.insert(128 * label + f);
    while (ids.size() < cfg.features_per_class + cfg.noise_features)
      ids.insert(rng.below(cfg.p));
    SparseExample ex;
    ex.label = double(label);
    for (std::uint64_t id : ids) {
      ex.indices.push_back(id);
      ex.values.push_back(1.0);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline double tradeoff_accuracy(const TradeoffConfig& cfg,
                                const SketchGeometry& geometry,
                                std::uint64_t trial) {
  const auto train_set = tradeoff_examples(
      cfg, cfg.train_examples, cell_seed(cfg.base_seed, {41, trial}));
  const auto test_set = tradeoff_examples(
      cfg, cfg.test_examples, cell_seed(cfg.base_seed, {42, trial}));
  TrainerConfig tc;
  tc.loss = {LossKind::cross_entropy, cfg.lambda, cfg.classes};
  tc.top_k = cfg.k;
  tc.geometry = geometry;
  tc.seed = cell_seed(cfg.base_seed, {43, trial, geometry.width,
                                      std::uint64_t(geometry.mode)});
  DenseTopKModel model(DenseTopKModel::Algo::mission, tc);
  const ExampleStream stream(train_set, cell_seed(cfg.base_seed, {44, trial}));
  StoppingRule stop;
  stop.max_epochs = cfg.epochs;
  train(model, stream, stop);

  std::size_t hits = 0;
  for (const SparseExample& ex : test_set) {
    const std::vector<double> scores = model.predict_scores(ex);
    const std::size_t pred = std::size_t(std::distance(
        scores.begin(), std::max_element(scores.begin(), scores.end())));
    hits += pred == std::size_t(ex.label);
  }
  return double(hits) / double(test_set.size());
}

}  // namespace detail

inline TradeoffResult run_tradeoff(const TradeoffConfig& cfg) {
  cfg.validate();
  TradeoffResult result;
  result.config = cfg;
  std::vector<double> ratios = cfg.ratios;
  if (std::find(ratios.begin(), ratios.end(), 1.0) == ratios.end())
    ratios.push_back(1.0);  // the unit ratio point is always emitted
  std::sort(ratios.begin(), ratios.end());
  ratios.erase(std::unique(ratios.begin(), ratios.end()), ratios.end());

  result.points.resize(ratios.size());
  detail::parallel_for_index(ratios.size() + 1, cfg.threads, [&](std::size_t i) {
    if (i == ratios.size()) {  // identity-sketch reference
      std::vector<double> accs;
      for (std::size_t t = 0; t < cfg.trials; ++t)
        accs.push_back(detail::tradeoff_accuracy(
            cfg, {1, cfg.p, SketchMode::identity}, t));
      result.identity_mean_accuracy = detail::mean_of(accs);
      result.identity_sd_accuracy = detail::population_sd(accs);
      return;
    }
    TradeoffPoint point;
    point.ratio = ratios[i];
    point.width = std::max<std::size_t>(
        1, std::size_t(std::llround(ratios[i] * double(cfg.k))));
    std::vector<double> accs;
    for (std::size_t t = 0; t < cfg.trials; ++t)
      accs.push_back(detail::tradeoff_accuracy(
          cfg, {cfg.depth, point.width, SketchMode::standard}, t));
    point.mean_accuracy = detail::mean_of(accs);
    point.sd_accuracy = detail::population_sd(accs);
    result.points[i] = point;
  });

  double max_sd = result.identity_sd_accuracy;
  for (const TradeoffPoint& pt : result.points)
    max_sd = std::max(max_sd, pt.sd_accuracy);
  result.noise_band = 2.0 * max_sd;
  return result;
}

// ---------------------------------------------------------------------------
// Convergence: per-round error sequences of full-gradient recovery.
// ---------------------------------------------------------------------------

struct ConvergenceConfig {
  std::size_t p = 1000, k = 5;
  std::vector<std::size_t> n_values{400, 1600};
  double sigma_w = 0.1;
  std::size_t rounds = 80;
  double attenuation = 0.5;
  std::size_t trials = 8;
  std::uint64_t base_seed = 400;
  std::size_t plateau_window = 10;
  // Paired identity-vs-standard floor comparison.
  std::size_t paired_trials = 6;
  std::size_t standard_depth = 5, standard_width = 512;
  std::size_t threads = 1;

  void validate() const {
    if (n_values.empty() || trials < 1 || rounds < 1)
      throw invalid_spec_error("convergence config needs n values, trials, rounds");
    if (!(attenuation > 0.0) || !(attenuation < 1.0))
      throw invalid_spec_error("attenuation factor must lie in (0, 1)");
    if (plateau_window < 1 || plateau_window > rounds)
      throw invalid_spec_error("plateau window must fit inside the rounds");
  }
};

struct ConvergenceRun {
  std::size_t n = 0;
  std::uint64_t design_seed = 0;
  std::vector<double> errors;
  double plateau = 0.0;
  double decay_ratio = 0.0;  // mean successive ratio over the decay phase
  bool has_decay_phase = false;
  bool diverged = false;
};

struct ConvergenceAggregate {
  std::size_t n = 0;
  double mean_plateau = 0.0;
  double mean_decay_ratio = 0.0;
};

struct ConvergencePair {
  std::size_t n = 0;
  std::uint64_t design_seed = 0;
  double identity_plateau = 0.0, standard_plateau = 0.0;
};

struct ConvergenceResult {
  ConvergenceConfig config;
  std::vector<ConvergenceRun> runs;  // identity runs, grouped by n
  std::vector<ConvergenceAggregate> aggregates;
  std::vector<ConvergencePair> pairs;
  double identity_pair_mean_plateau = 0.0, standard_pair_mean_plateau = 0.0;
};

namespace detail {

inline void finish_convergence_run(const ConvergenceConfig& cfg,
                                   ConvergenceRun& run) {
  const std::size_t window = std::min(cfg.plateau_window, run.errors.size());
  if (window == 0) return;
  double sum = 0.0;
  for (std::size_t i = run.errors.size() - window; i < run.errors.size(); ++i)
    sum += run.errors[i];
  run.plateau = sum / double(window);
  // Decay phase: rounds whose error still exceeds twice the plateau.
  std::vector<double> decay;
  for (double e : run.errors)
    if (e > 2.0 * run.plateau) decay.push_back(e);
  if (decay.size() >= 2) {
    double rsum = 0.0;
    for (std::size_t i = 1; i < decay.size(); ++i)
      rsum += decay[i] / decay[i - 1];
    run.decay_ratio = rsum / double(decay.size() - 1);
    run.has_decay_phase = true;
  }
}

inline ConvergenceRun convergence_run(const ConvergenceConfig& cfg,
                                      std::size_t n, std::uint64_t design_seed,
                                      const FullGradientOptions& base_opt) {
  SyntheticDesign spec;
  spec.p = cfg.p;
  spec.n = n;
  spec.k = cfg.k;
  spec.sigma_w = cfg.sigma_w;
  spec.seed = design_seed;
  // Unit-variance entries keep the support-column norms at sqrt(n), so the
  // least-squares floor scales as sigma*sqrt(k/n); normalized columns would
  // pin it at sigma*sqrt(k) independent of n.
  spec.variance = VarianceConvention::unit;
  const DesignData design = generate_design(spec);

  FullGradientOptions opt = base_opt;
  opt.top_k = cfg.k;
  opt.gamma = GammaSchedule::fixed(cfg.attenuation);
  opt.max_rounds = cfg.rounds;
  opt.stable_rounds = 0;  // fixed horizon, no stability stop
  opt.track_errors = true;

  ConvergenceRun run;
  run.n = n;
  run.design_seed = design_seed;
  const RecoveryOutcome outcome = run_mission_full(design, opt);
  run.errors = outcome.errors;
  run.diverged = outcome.diverged;
  finish_convergence_run(cfg, run);
  return run;
}

}  // namespace detail

inline ConvergenceResult run_convergence(const ConvergenceConfig& cfg) {
  cfg.validate();
  ConvergenceResult result;
  result.config = cfg;
  result.runs.resize(cfg.n_values.size() * cfg.trials);

  detail::parallel_for_index(
      result.runs.size(), cfg.threads, [&](std::size_t idx) {
        const std::size_t n = cfg.n_values[idx / cfg.trials];
        const std::size_t t = idx % cfg.trials;
        FullGradientOptions opt;  // identity sketch over p
        result.runs[idx] = detail::convergence_run(
            cfg, n, detail::cell_seed(cfg.base_seed, {31, n, t}), opt);
      });

  for (std::size_t g = 0; g < cfg.n_values.size(); ++g) {
    ConvergenceAggregate agg;
    agg.n = cfg.n_values[g];
    std::vector<double> plateaus, ratios;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const ConvergenceRun& run = result.runs[g * cfg.trials + t];
      plateaus.push_back(run.plateau);
      if (run.has_decay_phase) ratios.push_back(run.decay_ratio);
    }
    agg.mean_plateau = detail::mean_of(plateaus);
    agg.mean_decay_ratio = detail::mean_of(ratios);
    result.aggregates.push_back(agg);
  }

  // Paired floors on the smallest n: identity vs standard, same designs.
  if (cfg.paired_trials > 0 && !cfg.n_values.empty()) {
    const std::size_t n = cfg.n_values.front();
    std::vector<double> ident, stand;
    result.pairs.resize(cfg.paired_trials);
    detail::parallel_for_index(
        cfg.paired_trials, cfg.threads, [&](std::size_t t) {
          const std::uint64_t seed = detail::cell_seed(cfg.base_seed, {32, t});
          FullGradientOptions ident_opt;
          const ConvergenceRun a =
              detail::convergence_run(cfg, n, seed, ident_opt);
          FullGradientOptions std_opt;
          std_opt.geometry = {cfg.standard_depth, cfg.standard_width,
                              SketchMode::standard};
          std_opt.sketch_seed = detail::cell_seed(cfg.base_seed, {33, t});
          std_opt.restore_selected_after_scale = true;
          const ConvergenceRun b = detail::convergence_run(cfg, n, seed, std_opt);
          result.pairs[t] = {n, seed, a.plateau, b.plateau};
        });
    for (const ConvergencePair& pr : result.pairs) {
      ident.push_back(pr.identity_plateau);
      stand.push_back(pr.standard_plateau);
    }
    result.identity_pair_mean_plateau = detail::mean_of(ident);
    result.standard_pair_mean_plateau = detail::mean_of(stand);
  }
  return result;
}

// ---------------------------------------------------------------------------
// CSV and manifest output.
// ---------------------------------------------------------------------------

inline void write_phase_csv(const PhaseResult& r, std::ostream& os) {
  os << "n,k,trials,mission_rate,iht_rate,skipped,note\n";
  for (const PhaseCell& c : r.cells)
    os << c.n << ',' << c.k << ',' << c.trials << ','
       << detail::format_real(c.mission_rate) << ','
       << detail::format_real(c.iht_rate) << ',' << (c.skipped ? 1 : 0) << ','
       << c.note << '\n';
}

inline void write_phase_contours_csv(const PhaseResult& r, std::ostream& os) {
  os << "n,mission_k50,iht_k50\n";
  for (const PhaseContour& c : r.contours)
    os << c.n << ',' << detail::format_real(c.mission_k50) << ','
       << detail::format_real(c.iht_k50) << '\n';
}

inline void write_attenuation_csv(const AttenuationResult& r, std::ostream& os) {
  os << "trial,design_seed,mission_acc1,mission_max_alpha,iht_acc1,"
        "iht_max_alpha\n";
  for (std::size_t t = 0; t < r.trials.size(); ++t) {
    const AttenuationTrial& trial = r.trials[t];
    os << t << ',' << trial.design_seed << ',' << (trial.mission_acc1 ? 1 : 0)
       << ',' << detail::format_real(trial.mission_max_alpha) << ','
       << (trial.iht_acc1 ? 1 : 0) << ','
       << detail::format_real(trial.iht_max_alpha) << '\n';
  }
}

inline void write_memory_csv(const MemoryScalingResult& r, std::ostream& os) {
  os << "exponent,p,minimal_width,censored,probes\n";
  for (const MemoryScalingPoint& pt : r.points)
    os << pt.exponent << ',' << pt.p << ',' << pt.minimal_width << ','
       << (pt.censored ? 1 : 0) << ',' << pt.probes << '\n';
}

inline void write_tradeoff_csv(const TradeoffResult& r, std::ostream& os) {
  os << "ratio,width,mean_accuracy,sd_accuracy\n";
  for (const TradeoffPoint& pt : r.points)
    os << detail::format_real(pt.ratio) << ',' << pt.width << ','
       << detail::format_real(pt.mean_accuracy) << ','
       << detail::format_real(pt.sd_accuracy) << '\n';
}

inline void write_convergence_runs_csv(const ConvergenceResult& r,
                                       std::ostream& os) {
  os << "n,trial,design_seed,plateau,decay_ratio,has_decay_phase,diverged\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const ConvergenceRun& run = r.runs[i];
    os << run.n << ',' << i % r.config.trials << ',' << run.design_seed << ','
       << detail::format_real(run.plateau) << ','
       << detail::format_real(run.decay_ratio) << ','
       << (run.has_decay_phase ? 1 : 0) << ',' << (run.diverged ? 1 : 0)
       << '\n';
  }
}

inline void write_convergence_errors_csv(const ConvergenceResult& r,
                                         std::ostream& os) {
  os << "n,trial,round,error\n";
  for (std::size_t i = 0; i < r.runs.size(); ++i) {
    const ConvergenceRun& run = r.runs[i];
    for (std::size_t round = 0; round < run.errors.size(); ++round)
      os << run.n << ',' << i % r.config.trials << ',' << round << ','
         << detail::format_real(run.errors[round]) << '\n';
  }
}

// ---------------------------------------------------------------------------
// JSON config parsing and manifests.
// ---------------------------------------------------------------------------

inline PhaseGrid parse_phase_grid(const nlohmann::json& j) {
  PhaseGrid g;
  detail::json_get(j, "p", g.p);
  detail::json_get(j, "n_values", g.n_values);
  detail::json_get(j, "k_values", g.k_values);
  detail::json_get(j, "trials", g.trials);
  detail::json_get(j, "base_seed", g.base_seed);
  detail::json_get(j, "success_threshold", g.success_threshold);
  detail::json_get(j, "max_epochs", g.max_epochs);
  detail::json_get(j, "stable_epochs", g.stable_epochs);
  detail::json_get_gamma(j, "gamma", g.gamma);
  detail::json_get(j, "full_gradient", g.full_gradient);
  detail::json_get(j, "threads", g.threads);
  return g;
}

inline nlohmann::json config_json(const PhaseGrid& g) {
  return {{"p", g.p},
          {"n_values", g.n_values},
          {"k_values", g.k_values},
          {"trials", g.trials},
          {"base_seed", g.base_seed},
          {"success_threshold", g.success_threshold},
          {"max_epochs", g.max_epochs},
          {"stable_epochs", g.stable_epochs},
          {"gamma", detail::gamma_json(g.gamma)},
          {"full_gradient", g.full_gradient},
          {"threads", g.threads}};
}

inline AttenuationConfig parse_attenuation_config(const nlohmann::json& j) {
  AttenuationConfig c;
  detail::json_get(j, "p", c.p);
  detail::json_get(j, "n", c.n);
  detail::json_get(j, "k", c.k);
  detail::json_get(j, "trials", c.trials);
  detail::json_get(j, "alpha_start", c.alpha_start);
  detail::json_get(j, "alpha_step", c.alpha_step);
  detail::json_get(j, "alpha_count", c.alpha_count);
  detail::json_get(j, "base_seed", c.base_seed);
  detail::json_get(j, "max_rounds", c.max_rounds);
  detail::json_get(j, "stable_rounds", c.stable_rounds);
  detail::json_get_gamma(j, "gamma", c.gamma);
  detail::json_get(j, "threads", c.threads);
  return c;
}

inline nlohmann::json config_json(const AttenuationConfig& c) {
  return {{"p", c.p},
          {"n", c.n},
          {"k", c.k},
          {"trials", c.trials},
          {"alpha_start", c.alpha_start},
          {"alpha_step", c.alpha_step},
          {"alpha_count", c.alpha_count},
          {"base_seed", c.base_seed},
          {"max_rounds", c.max_rounds},
          {"stable_rounds", c.stable_rounds},
          {"gamma", detail::gamma_json(c.gamma)},
          {"threads", c.threads}};
}

inline MemoryScalingConfig parse_memory_config(const nlohmann::json& j) {
  MemoryScalingConfig c;
  detail::json_get(j, "p_exponents", c.p_exponents);
  detail::json_get(j, "k", c.k);
  detail::json_get(j, "n", c.n);
  detail::json_get(j, "depth", c.depth);
  detail::json_get(j, "trials", c.trials);
  detail::json_get(j, "cleanup_top_m", c.cleanup_top_m);
  detail::json_get(j, "width_start", c.width_start);
  detail::json_get(j, "width_cap", c.width_cap);
  detail::json_get(j, "base_seed", c.base_seed);
  detail::json_get(j, "max_rounds", c.max_rounds);
  detail::json_get(j, "stable_rounds", c.stable_rounds);
  detail::json_get_gamma(j, "gamma", c.gamma);
  detail::json_get(j, "threads", c.threads);
  return c;
}

inline nlohmann::json config_json(const MemoryScalingConfig& c) {
  return {{"p_exponents", c.p_exponents},
          {"k", c.k},
          {"n", c.n},
          {"depth", c.depth},
          {"trials", c.trials},
          {"cleanup_top_m", c.cleanup_top_m},
          {"width_start", c.width_start},
          {"width_cap", c.width_cap},
          {"base_seed", c.base_seed},
          {"max_rounds", c.max_rounds},
          {"stable_rounds", c.stable_rounds},
          {"gamma", detail::gamma_json(c.gamma)},
          {"threads", c.threads}};
}

inline TradeoffConfig parse_tradeoff_config(const nlohmann::json& j) {
  TradeoffConfig c;
  detail::json_get(j, "classes", c.classes);
  detail::json_get(j, "p", c.p);
  detail::json_get(j, "k", c.k);
  detail::json_get(j, "depth", c.depth);
  detail::json_get(j, "ratios", c.ratios);
  detail::json_get(j, "trials", c.trials);
  detail::json_get(j, "train_examples", c.train_examples);
  detail::json_get(j, "test_examples", c.test_examples);
  detail::json_get(j, "features_per_class", c.features_per_class);
  detail::json_get(j, "noise_features", c.noise_features);
  detail::json_get(j, "feature_rate", c.feature_rate);
  detail::json_get(j, "epochs", c.epochs);
  detail::json_get(j, "lambda", c.lambda);
  detail::json_get(j, "base_seed", c.base_seed);
  detail::json_get(j, "threads", c.threads);
  return c;
}

inline nlohmann::json config_json(const TradeoffConfig& c) {
  return {{"classes", c.classes},
          {"p", c.p},
          {"k", c.k},
          {"depth", c.depth},
          {"ratios", c.ratios},
          {"trials", c.trials},
          {"train_examples", c.train_examples},
          {"test_examples", c.test_examples},
          {"features_per_class", c.features_per_class},
          {"noise_features", c.noise_features},
          {"feature_rate", c.feature_rate},
          {"epochs", c.epochs},
          {"lambda", c.lambda},
          {"base_seed", c.base_seed},
          {"threads", c.threads}};
}

inline ConvergenceConfig parse_convergence_config(const nlohmann::json& j) {
  ConvergenceConfig c;
  detail::json_get(j, "p", c.p);
  detail::json_get(j, "k", c.k);
  detail::json_get(j, "n_values", c.n_values);
  detail::json_get(j, "sigma_w", c.sigma_w);
  detail::json_get(j, "rounds", c.rounds);
  detail::json_get(j, "attenuation", c.attenuation);
  detail::json_get(j, "trials", c.trials);
  detail::json_get(j, "base_seed", c.base_seed);
  detail::json_get(j, "plateau_window", c.plateau_window);
  detail::json_get(j, "paired_trials", c.paired_trials);
  detail::json_get(j, "standard_depth", c.standard_depth);
  detail::json_get(j, "standard_width", c.standard_width);
  detail::json_get(j, "threads", c.threads);
  return c;
}

inline nlohmann::json config_json(const ConvergenceConfig& c) {
  return {{"p", c.p},
          {"k", c.k},
          {"n_values", c.n_values},
          {"sigma_w", c.sigma_w},
          {"rounds", c.rounds},
          {"attenuation", c.attenuation},
          {"trials", c.trials},
          {"base_seed", c.base_seed},
          {"plateau_window", c.plateau_window},
          {"paired_trials", c.paired_trials},
          {"standard_depth", c.standard_depth},
          {"standard_width", c.standard_width},
          {"threads", c.threads}};
}

inline nlohmann::json manifest_json(const PhaseResult& r) {
  nlohmann::json contours = nlohmann::json::array();
  for (const PhaseContour& c : r.contours)
    contours.push_back(
        {{"n", c.n}, {"mission_k50", c.mission_k50}, {"iht_k50", c.iht_k50}});
  return {{"kind", "phase"},
          {"version", library_version},
          {"config", config_json(r.grid)},
          {"summary",
           {{"cells", r.cells.size()},
            {"contours", contours},
            {"mission_dominance", r.mission_dominance}}}};
}

inline nlohmann::json manifest_json(const AttenuationResult& r) {
  return {{"kind", "attenuation"},
          {"version", library_version},
          {"config", config_json(r.config)},
          {"summary",
           {{"co_successful", r.co_successful},
            {"mission",
             {{"acc1_rate", r.mission.acc1_rate},
              {"mean_max_alpha", r.mission.mean_max_alpha},
              {"sd_max_alpha", r.mission.sd_max_alpha}}},
            {"iht",
             {{"acc1_rate", r.iht.acc1_rate},
              {"mean_max_alpha", r.iht.mean_max_alpha},
              {"sd_max_alpha", r.iht.sd_max_alpha}}}}}};
}

inline nlohmann::json manifest_json(const MemoryScalingResult& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const MemoryScalingPoint& pt : r.points)
    points.push_back({{"exponent", pt.exponent},
                      {"p", pt.p},
                      {"minimal_width", pt.minimal_width},
                      {"censored", pt.censored},
                      {"probes", pt.probes}});
  return {{"kind", "memory"},
          {"version", library_version},
          {"config", config_json(r.config)},
          {"summary",
           {{"points", points},
            {"width_ratio", r.width_ratio},
            {"fit_intercept", r.fit_intercept},
            {"fit_slope", r.fit_slope}}}};
}

inline nlohmann::json manifest_json(const TradeoffResult& r) {
  nlohmann::json points = nlohmann::json::array();
  for (const TradeoffPoint& pt : r.points)
    points.push_back({{"ratio", pt.ratio},
                      {"width", pt.width},
                      {"mean_accuracy", pt.mean_accuracy},
                      {"sd_accuracy", pt.sd_accuracy}});
  return {{"kind", "tradeoff"},
          {"version", library_version},
          {"config", config_json(r.config)},
          {"summary",
           {{"points", points},
            {"identity_mean_accuracy", r.identity_mean_accuracy},
            {"identity_sd_accuracy", r.identity_sd_accuracy},
            {"noise_band", r.noise_band}}}};
}

inline nlohmann::json manifest_json(const ConvergenceResult& r) {
  nlohmann::json aggregates = nlohmann::json::array();
  for (const ConvergenceAggregate& a : r.aggregates)
    aggregates.push_back({{"n", a.n},
                          {"mean_plateau", a.mean_plateau},
                          {"mean_decay_ratio", a.mean_decay_ratio}});
  return {{"kind", "convergence"},
          {"version", library_version},
          {"config", config_json(r.config)},
          {"summary",
           {{"aggregates", aggregates},
            {"identity_pair_mean_plateau", r.identity_pair_mean_plateau},
            {"standard_pair_mean_plateau", r.standard_pair_mean_plateau}}}};
}

}  // namespace sketchsel
