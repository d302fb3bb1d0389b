#pragma once

#include <cstdint>
#include <cstdio>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sketchsel/data.hpp"
#include "sketchsel/model.hpp"
#include "sketchsel/version.hpp"

namespace sketchsel {

// Ingestion settings captured in a model file so evaluation reads examples
// with the training-time conventions (format, index base, token hashing).
struct IngestSpec {
  std::string format = "libsvm";  // "libsvm" | "tokens"
  IndexBase index_base = IndexBase::one_based;
  unsigned hash_bits = 20;      // tokens only
  std::uint64_t hash_seed = 0;  // tokens only

  void validate() const {
    if (format != "libsvm" && format != "tokens")
      throw invalid_spec_error("unknown data format '" + format + "'");
    if (format == "tokens" && (hash_bits == 0 || hash_bits > 63))
      throw invalid_spec_error("token hash bits must be in [1, 63]");
  }

  std::vector<SparseExample> load(const std::string& path) const {
    validate();
    if (format == "tokens") return load_tokens(path, hash_bits, hash_seed);
    return load_libsvm(path, index_base);
  }
};

namespace detail {

inline const char* algo_name(DenseTopKModel::Algo a) {
  switch (a) {
    case DenseTopKModel::Algo::mission: return "mission";
    case DenseTopKModel::Algo::iht: return "iht";
    case DenseTopKModel::Algo::batch_iht: return "batch-iht";
  }
  return "mission";
}

inline DenseTopKModel::Algo algo_from_name(const std::string& s) {
  if (s == "mission") return DenseTopKModel::Algo::mission;
  if (s == "iht") return DenseTopKModel::Algo::iht;
  if (s == "batch-iht") return DenseTopKModel::Algo::batch_iht;
  throw invalid_spec_error("unknown algorithm '" + s + "'");
}

inline const char* loss_name(LossKind k) {
  switch (k) {
    case LossKind::squared: return "squared";
    case LossKind::logistic: return "logistic";
    case LossKind::hinge: return "hinge";
    case LossKind::cross_entropy: return "xent";
  }
  return "squared";
}

inline LossKind loss_from_name(const std::string& s) {
  if (s == "squared") return LossKind::squared;
  if (s == "logistic") return LossKind::logistic;
  if (s == "hinge") return LossKind::hinge;
  if (s == "xent") return LossKind::cross_entropy;
  throw invalid_spec_error("unknown loss '" + s + "'");
}

inline const char* mode_name(SketchMode m) {
  return m == SketchMode::identity ? "identity" : "standard";
}

inline SketchMode mode_from_name(const std::string& s) {
  if (s == "standard") return SketchMode::standard;
  if (s == "identity") return SketchMode::identity;
  throw invalid_spec_error("unknown sketch mode '" + s + "'");
}

inline nlohmann::json ingest_json(const IngestSpec& in) {
  return {{"format", in.format},
          {"index_base",
           in.index_base == IndexBase::one_based ? "one_based" : "zero_based"},
          {"hash_bits", in.hash_bits},
          {"hash_seed", in.hash_seed}};
}

inline IngestSpec ingest_from_json(const nlohmann::json& j) {
  IngestSpec in;
  in.format = j.at("format").get<std::string>();
  in.index_base = j.at("index_base").get<std::string>() == "zero_based"
                      ? IndexBase::zero_based
                      : IndexBase::one_based;
  in.hash_bits = j.at("hash_bits").get<unsigned>();
  in.hash_seed = j.at("hash_seed").get<std::uint64_t>();
  return in;
}

inline void write_weight_line(std::ostream& os, std::uint64_t id, double w) {
  char line[64];
  std::snprintf(line, sizeof(line), "%llu\t%.17g\n",
                static_cast<unsigned long long>(id), w);
  os << line;
}

}  // namespace detail

// Model file: one JSON header line (algorithm, loss kind, learning rate,
// top-k, sketch geometry, seed, class count, ingestion settings), then per
// class a "#class c" marker followed by the heap snapshot — or, for the
// feature-hashing baseline, the nonzero bucket weights.
inline void save_model(std::ostream& os, const DenseTopKModel& model,
                       const IngestSpec& ingest) {
  const TrainerConfig& cfg = model.config();
  nlohmann::json header = {
      {"kind", "sketchsel-model"},
      {"version", library_version},
      {"algo", detail::algo_name(model.algo())},
      {"loss", detail::loss_name(cfg.loss.kind)},
      {"lambda", cfg.loss.lambda},
      {"classes", cfg.loss.classes},
      {"top_k", cfg.top_k},
      {"seed", cfg.seed},
      {"eps_heap", cfg.eps_heap},
      {"batch_budget", cfg.batch_budget},
      {"data", detail::ingest_json(ingest)}};
  if (model.algo() == DenseTopKModel::Algo::mission)
    header["sketch"] = {{"depth", cfg.geometry.depth},
                        {"width", cfg.geometry.width},
                        {"mode", detail::mode_name(cfg.geometry.mode)}};
  os << header.dump() << "\n";
  for (std::size_t c = 0; c < model.classes(); ++c) {
    os << "#class " << c << "\n";
    model.heap(c).snapshot(os);
  }
  if (!os) throw io_error("model save failed");
}

inline void save_model(std::ostream& os, const FeatureHashModel& model,
                       const IngestSpec& ingest) {
  const nlohmann::json header = {{"kind", "sketchsel-model"},
                                 {"version", library_version},
                                 {"algo", "fh"},
                                 {"loss", detail::loss_name(model.loss().kind)},
                                 {"lambda", model.loss().lambda},
                                 {"classes", model.loss().classes},
                                 {"width", model.width()},
                                 {"seed", model.seed()},
                                 {"data", detail::ingest_json(ingest)}};
  os << header.dump() << "\n";
  for (std::size_t c = 0; c < model.classes(); ++c) {
    os << "#class " << c << "\n";
    for (std::size_t b = 0; b < model.width(); ++b) {
      const double w = model.weights()[c * model.width() + b];
      if (w != 0.0) detail::write_weight_line(os, b, w);
    }
  }
  if (!os) throw io_error("model save failed");
}

// A reloaded model: exactly one of the two members is engaged. Predictions
// match the saved model; MISSION sketch counters are not persisted, so
// further training restarts accumulation from the restored heap.
struct LoadedModel {
  IngestSpec ingest;
  std::optional<DenseTopKModel> dense;
  std::optional<FeatureHashModel> hashed;

  std::size_t classes() const {
    return dense ? dense->classes() : hashed->classes();
  }
  double predict(const SparseExample& ex, std::size_t c = 0) const {
    return dense ? dense->predict(ex, c) : hashed->predict(ex, c);
  }
  std::vector<double> predict_scores(const SparseExample& ex) const {
    return dense ? dense->predict_scores(ex) : hashed->predict_scores(ex);
  }
};

inline LoadedModel load_model(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw io_error("empty model file");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw parse_error(std::string("bad model header: ") + e.what(), 0);
  }
  if (header.value("kind", "") != "sketchsel-model")
    throw parse_error("not a sketchsel model file", 0);

  LoadedModel out;
  out.ingest = detail::ingest_from_json(header.at("data"));
  const std::string algo = header.at("algo").get<std::string>();
  LossSpec loss;
  loss.kind = detail::loss_from_name(header.at("loss").get<std::string>());
  loss.lambda = header.at("lambda").get<double>();
  loss.classes = header.at("classes").get<std::size_t>();

  if (algo == "fh") {
    out.hashed.emplace(header.at("width").get<std::size_t>(), loss,
                       header.at("seed").get<std::uint64_t>());
  } else {
    TrainerConfig cfg;
    cfg.loss = loss;
    cfg.top_k = header.at("top_k").get<std::size_t>();
    cfg.seed = header.at("seed").get<std::uint64_t>();
    cfg.eps_heap = header.value("eps_heap", 0.0);
    cfg.batch_budget = header.value("batch_budget", std::size_t{0});
    if (header.contains("sketch")) {
      const nlohmann::json& s = header.at("sketch");
      cfg.geometry = {s.at("depth").get<std::size_t>(),
                      s.at("width").get<std::size_t>(),
                      detail::mode_from_name(s.at("mode").get<std::string>())};
    }
    out.dense.emplace(detail::algo_from_name(algo), cfg);
  }

  std::size_t cls = 0;
  bool saw_class = false;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "model line " + std::to_string(line_no);
    if (line.rfind("#class ", 0) == 0) {
      cls = detail::parse_index(std::string_view(line).substr(7), 0);
      if (cls >= (out.dense ? out.dense->classes() : out.hashed->classes()))
        throw parse_error(where + ": class out of range", 0);
      saw_class = true;
      continue;
    }
    if (!saw_class) throw parse_error(where + ": weight before #class", 0);
    const auto tab = line.find('\t');
    if (tab == std::string::npos)
      throw parse_error(where + ": expected id<TAB>weight", 0);
    const std::uint64_t id =
        detail::parse_index(std::string_view(line).substr(0, tab), 0);
    const double w =
        detail::parse_real(std::string_view(line).substr(tab + 1), tab + 1);
    if (out.dense) {
      out.dense->heap(cls).offer(id, w);
    } else {
      if (id >= out.hashed->width())
        throw parse_error(where + ": bucket out of range", 0);
      out.hashed->weight_at(cls, id) = w;
    }
  }
  return out;
}

}  // namespace sketchsel
