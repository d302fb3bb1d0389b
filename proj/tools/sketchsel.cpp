// Command-line front end: train/eval on libsvm or token data, plus the
// synthetic experiment harness (CSV + manifest output).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sketchsel/experiments.hpp"
#include "sketchsel/metrics.hpp"
#include "sketchsel/model.hpp"
#include "sketchsel/model_io.hpp"

namespace {

using namespace sketchsel;
namespace fs = std::filesystem;

void print_kv(const std::string& key, const nlohmann::json& v) {
  if (v.is_string())
    std::printf("%s=%s\n", key.c_str(), v.get<std::string>().c_str());
  else
    std::printf("%s=%s\n", key.c_str(), v.dump().c_str());
}

// Scalar leaves of the manifest summary as name=value lines (arrays and the
// full detail live in the CSV files).
void print_summary(const nlohmann::json& summary, const std::string& prefix) {
  for (const auto& [key, value] : summary.items()) {
    const std::string name = prefix.empty() ? key : prefix + "." + key;
    if (value.is_object())
      print_summary(value, name);
    else if (!value.is_array())
      print_kv(name, value);
  }
}

struct TrainArgs {
  std::string algo, loss = "squared", data, format = "libsvm", model_out;
  std::string sketch_mode = "standard", index_base = "one";
  std::size_t top_k = 0, sketch_depth = 3, sketch_width = 0, epochs = 1;
  std::size_t classes = 0, batch_budget = 0;
  double lr = 0.5, eps_heap = 0.0, plateau = 0.0;
  std::uint64_t seed = 0, hash_seed = 0;
  unsigned hash_bits = 20;
  std::optional<std::uint64_t> shuffle_seed;
};

IngestSpec make_ingest(const TrainArgs& a) {
  IngestSpec in;
  in.format = a.format;
  in.index_base = a.index_base == "zero" ? IndexBase::zero_based
                                         : IndexBase::one_based;
  in.hash_bits = a.hash_bits;
  in.hash_seed = a.hash_seed;
  return in;
}

// Class count for cross-entropy when not given: labels are class ids, so the
// largest observed label fixes C.
std::size_t infer_classes(const std::vector<SparseExample>& data) {
  double max_label = 0.0;
  for (const SparseExample& ex : data)
    max_label = std::max(max_label, ex.label);
  return static_cast<std::size_t>(max_label) + 1;
}

int run_train(const TrainArgs& a) {
  const IngestSpec ingest = make_ingest(a);
  std::vector<SparseExample> data = ingest.load(a.data);
  if (data.empty()) throw io_error("no examples in '" + a.data + "'");

  LossSpec loss;
  loss.kind = detail::loss_from_name(a.loss);
  loss.lambda = a.lr;
  loss.classes = 1;
  if (loss.kind == LossKind::cross_entropy)
    loss.classes = a.classes > 0 ? a.classes : std::max<std::size_t>(
                                                   2, infer_classes(data));

  const ExampleStream stream(std::move(data), a.shuffle_seed);
  StoppingRule stop;
  stop.max_epochs = a.epochs;
  if (a.plateau > 0.0) stop.plateau_rel_improvement = a.plateau;

  // The model file is opened only after training succeeds so a mid-train
  // error cannot truncate a previous model living at the same path.
  std::ofstream out;
  const auto open_out = [&] {
    out.open(a.model_out);
    if (!out) throw io_error("cannot write '" + a.model_out + "'");
  };

  TrainReport report;
  if (a.algo == "fh") {
    if (a.sketch_width == 0)
      throw invalid_spec_error("fh needs --sketch-width (bucket count)");
    FeatureHashModel model(a.sketch_width, loss, a.seed);
    report = train(model, stream, stop);
    open_out();
    save_model(out, model, ingest);
  } else {
    if (a.top_k == 0) throw invalid_spec_error(a.algo + " needs --top-k >= 1");
    TrainerConfig cfg;
    cfg.loss = loss;
    cfg.top_k = a.top_k;
    cfg.seed = a.seed;
    cfg.eps_heap = a.eps_heap;
    const DenseTopKModel::Algo algo = detail::algo_from_name(a.algo);
    if (algo == DenseTopKModel::Algo::mission) {
      if (a.sketch_width == 0)
        throw invalid_spec_error("mission needs --sketch-width >= 1");
      cfg.geometry = {a.sketch_depth, a.sketch_width,
                      detail::mode_from_name(a.sketch_mode)};
    }
    if (algo == DenseTopKModel::Algo::batch_iht)
      cfg.batch_budget = a.batch_budget > 0 ? a.batch_budget : a.top_k;
    DenseTopKModel model(algo, cfg);
    report = train(model, stream, stop);
    open_out();
    save_model(out, model, ingest);
  }
  out.close();
  if (!out) throw io_error("model save failed");

  std::printf("examples=%zu\n", stream.size());
  std::printf("epochs_run=%zu\n", report.epochs_run);
  std::printf("steps=%zu\n", report.steps);
  if (!report.epoch_loss.empty())
    std::printf("final_loss=%.10g\n", report.epoch_loss.back());
  std::printf("stopped_early=%s\n", report.stopped_early ? "true" : "false");
  std::printf("wall_seconds=%.3f\n", report.wall_seconds);
  std::printf("model=%s\n", a.model_out.c_str());
  return 0;
}

struct EvalArgs {
  std::string metric, model, data;
  std::string format;  // empty: use the model's recorded settings
};

int run_eval(const EvalArgs& a) {
  std::ifstream in(a.model);
  if (!in) throw io_error("cannot open '" + a.model + "'");
  const LoadedModel model = load_model(in);

  IngestSpec ingest = model.ingest;
  if (!a.format.empty()) ingest.format = a.format;
  const std::vector<SparseExample> data = ingest.load(a.data);
  if (data.empty()) throw io_error("no examples in '" + a.data + "'");

  double value = 0.0;
  if (a.metric == "auc" || a.metric == "ap") {
    if (model.classes() != 1)
      throw invalid_spec_error(a.metric + " needs a binary (1-class) model");
    std::vector<double> scores, labels;
    scores.reserve(data.size());
    labels.reserve(data.size());
    for (const SparseExample& ex : data) {
      scores.push_back(model.predict(ex));
      labels.push_back(ex.label);
    }
    value = a.metric == "auc" ? auc(scores, labels)
                              : average_precision(scores, labels);
  } else {  // acc: sign for binary models, argmax class id otherwise
    std::vector<double> predicted, truth;
    predicted.reserve(data.size());
    truth.reserve(data.size());
    for (const SparseExample& ex : data) {
      if (model.classes() == 1) {
        predicted.push_back(model.predict(ex) > 0.0 ? 1.0 : -1.0);
      } else {
        const std::vector<double> scores = model.predict_scores(ex);
        std::size_t best = 0;
        for (std::size_t c = 1; c < scores.size(); ++c)
          if (scores[c] > scores[best]) best = c;
        predicted.push_back(double(best));
      }
      truth.push_back(ex.label);
    }
    value = accuracy(predicted, truth);
  }
  std::printf("%s=%.10g\n", a.metric.c_str(), value);
  std::printf("examples=%zu\n", data.size());
  return 0;
}

struct ExperimentArgs {
  std::string kind, config, out;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path);
  os << text;
  if (!os) throw io_error("cannot write '" + path.string() + "'");
}

template <class Fn>
void write_csv(const fs::path& path, Fn&& writer) {
  std::ofstream os(path);
  writer(os);
  if (!os) throw io_error("cannot write '" + path.string() + "'");
}

int run_experiment(const ExperimentArgs& a) {
  std::ifstream cfg_in(a.config);
  if (!cfg_in) throw io_error("cannot open '" + a.config + "'");
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(cfg_in);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("bad config: ") + e.what(), 0);
  }

  const fs::path out_dir(a.out);
  fs::create_directories(out_dir);

  nlohmann::json manifest;
  if (a.kind == "phase") {
    const PhaseResult r = run_phase_transition(parse_phase_grid(cfg));
    write_csv(out_dir / "cells.csv", [&](std::ostream& os) {
      write_phase_csv(r, os);
    });
    write_csv(out_dir / "contours.csv", [&](std::ostream& os) {
      write_phase_contours_csv(r, os);
    });
    manifest = manifest_json(r);
  } else if (a.kind == "attenuation") {
    const AttenuationResult r = run_attenuation(parse_attenuation_config(cfg));
    write_csv(out_dir / "attenuation.csv", [&](std::ostream& os) {
      write_attenuation_csv(r, os);
    });
    manifest = manifest_json(r);
  } else if (a.kind == "memory") {
    const MemoryScalingResult r = run_memory_scaling(parse_memory_config(cfg));
    write_csv(out_dir / "memory.csv", [&](std::ostream& os) {
      write_memory_csv(r, os);
    });
    manifest = manifest_json(r);
  } else if (a.kind == "tradeoff") {
    const TradeoffResult r = run_tradeoff(parse_tradeoff_config(cfg));
    write_csv(out_dir / "tradeoff.csv", [&](std::ostream& os) {
      write_tradeoff_csv(r, os);
    });
    manifest = manifest_json(r);
  } else {  // convergence (kind validated by the option parser)
    const ConvergenceResult r = run_convergence(parse_convergence_config(cfg));
    write_csv(out_dir / "runs.csv", [&](std::ostream& os) {
      write_convergence_runs_csv(r, os);
    });
    write_csv(out_dir / "errors.csv", [&](std::ostream& os) {
      write_convergence_errors_csv(r, os);
    });
    manifest = manifest_json(r);
  }
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");

  print_summary(manifest.at("summary"), "");
  std::printf("out=%s\n", out_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sketchsel: memory-bounded sparse feature selection"};
  app.require_subcommand(1);

  TrainArgs ta;
  CLI::App* tr = app.add_subcommand("train", "Train a model on a dataset");
  tr->add_option("--algo", ta.algo, "Training algorithm")
      ->required()
      ->check(CLI::IsMember({"mission", "iht", "batch-iht", "fh"}));
  tr->add_option("--loss", ta.loss, "Loss function")
      ->capture_default_str()
      ->check(CLI::IsMember({"squared", "logistic", "hinge", "xent"}));
  tr->add_option("--top-k", ta.top_k, "Active features per class");
  tr->add_option("--sketch-depth", ta.sketch_depth, "Sketch rows (mission)")
      ->capture_default_str();
  tr->add_option("--sketch-width", ta.sketch_width,
                 "Sketch columns (mission) or bucket count (fh)");
  tr->add_option("--lr", ta.lr, "Learning rate")->capture_default_str();
  tr->add_option("--epochs", ta.epochs, "Training epochs")
      ->capture_default_str();
  tr->add_option("--data", ta.data, "Training data path")
      ->required()
      ->check(CLI::ExistingFile);
  tr->add_option("--format", ta.format, "Input format")
      ->capture_default_str()
      ->check(CLI::IsMember({"libsvm", "tokens"}));
  tr->add_option("--model-out", ta.model_out, "Model output path")->required();
  tr->add_option("--classes", ta.classes,
                 "Class count for xent (default: inferred from labels)");
  tr->add_option("--seed", ta.seed, "Sketch/hash seed")->capture_default_str();
  tr->add_option("--batch-budget", ta.batch_budget,
                 "Gradient buffer slots for batch-iht (default: top-k)");
  tr->add_option("--sketch-mode", ta.sketch_mode, "Sketch hashing mode")
      ->capture_default_str()
      ->check(CLI::IsMember({"standard", "identity"}));
  tr->add_option("--eps-heap", ta.eps_heap, "Heap reposition tolerance")
      ->capture_default_str();
  tr->add_option("--hash-bits", ta.hash_bits,
                 "Token feature space bits (tokens format)")
      ->capture_default_str();
  tr->add_option("--hash-seed", ta.hash_seed, "Token hash seed")
      ->capture_default_str();
  tr->add_option("--index-base", ta.index_base, "libsvm index base")
      ->capture_default_str()
      ->check(CLI::IsMember({"one", "zero"}));
  tr->add_option("--shuffle-seed", ta.shuffle_seed,
                 "Per-epoch shuffle seed (default: file order)");
  tr->add_option("--plateau", ta.plateau,
                 "Stop when relative epoch-loss improvement drops below this");

  EvalArgs ea;
  CLI::App* ev = app.add_subcommand("eval", "Evaluate a saved model");
  ev->add_option("--metric", ea.metric, "Metric to report")
      ->required()
      ->check(CLI::IsMember({"auc", "ap", "acc"}));
  ev->add_option("--model", ea.model, "Model path")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--data", ea.data, "Evaluation data path")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--format", ea.format,
                 "Override the model's recorded input format")
      ->check(CLI::IsMember({"libsvm", "tokens"}));

  ExperimentArgs xa;
  CLI::App* ex = app.add_subcommand("experiment", "Run a synthetic study");
  ex->add_option("kind", xa.kind, "Experiment kind")
      ->required()
      ->check(CLI::IsMember(
          {"phase", "attenuation", "memory", "tradeoff", "convergence"}));
  ex->add_option("--config", xa.config, "JSON config path")
      ->required()
      ->check(CLI::ExistingFile);
  ex->add_option("--out", xa.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (tr->parsed()) return run_train(ta);
    if (ev->parsed()) return run_eval(ea);
    return run_experiment(xa);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const sketchsel::error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
}
