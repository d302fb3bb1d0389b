#pragma once

#include <zlib.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sketchsel/errors.hpp"
#include "sketchsel/hash.hpp"
#include "sketchsel/rng.hpp"

namespace sketchsel {

// One observation: strictly ascending feature ids, matching finite nonzero
// values, and a label (real, {-1,+1}, or class id depending on the loss).
struct SparseExample {
  std::vector<std::uint64_t> indices;
  std::vector<double> values;
  double label = 0.0;

  bool operator==(const SparseExample&) const = default;
};

namespace detail {

inline double parse_real(std::string_view token, std::size_t offset) {
  std::string_view t = token;
  if (!t.empty() && t.front() == '+') t.remove_prefix(1);
  double out = 0.0;
  const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
  if (res.ec != std::errc{} || res.ptr != t.data() + t.size() || t.empty())
    throw parse_error("invalid number '" + std::string(token) + "'", offset);
  if (!std::isfinite(out))
    throw parse_error("non-finite number '" + std::string(token) + "'", offset);
  return out;
}

inline std::uint64_t parse_index(std::string_view token, std::size_t offset) {
  std::uint64_t out = 0;
  const auto res =
      std::from_chars(token.data(), token.data() + token.size(), out);
  if (res.ec != std::errc{} || res.ptr != token.data() + token.size() ||
      token.empty())
    throw parse_error("invalid feature index '" + std::string(token) + "'",
                      offset);
  return out;
}

// Sorts, merges duplicate indices by summation, and drops entries whose
// merged value is zero (keeps the example invariant: nonzero values only).
inline void normalize_pairs(std::vector<std::pair<std::uint64_t, double>>& fs,
                            SparseExample& out) {
  std::sort(fs.begin(), fs.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  out.indices.clear();
  out.values.clear();
  std::size_t i = 0;
  while (i < fs.size()) {
    const std::uint64_t id = fs[i].first;
    double sum = 0.0;
    while (i < fs.size() && fs[i].first == id) sum += fs[i++].second;
    if (sum != 0.0) {
      out.indices.push_back(id);
      out.values.push_back(sum);
    }
  }
}

}  // namespace detail

// Parses "label idx:val idx:val ...". Tolerates repeated whitespace and a
// trailing '#' comment; duplicate indices are summed; indices re-sorted.
// Indices are taken literally; see IndexBase for the on-disk convention.
inline SparseExample parse_libsvm_line(std::string_view line) {
  if (const auto hash = line.find('#'); hash != std::string_view::npos)
    line = line.substr(0, hash);

  const auto is_ws = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
  std::size_t pos = 0;
  const auto skip_ws = [&] {
    while (pos < line.size() && is_ws(line[pos])) ++pos;
  };
  const auto take_token = [&]() -> std::pair<std::string_view, std::size_t> {
    const std::size_t start = pos;
    while (pos < line.size() && !is_ws(line[pos])) ++pos;
    return {line.substr(start, pos - start), start};
  };

  skip_ws();
  if (pos == line.size()) throw parse_error("missing label", pos);
  const auto [label_tok, label_off] = take_token();

  SparseExample out;
  out.label = detail::parse_real(label_tok, label_off);

  std::vector<std::pair<std::uint64_t, double>> features;
  for (;;) {
    skip_ws();
    if (pos == line.size()) break;
    const auto [tok, off] = take_token();
    const auto colon = tok.find(':');
    if (colon == std::string_view::npos)
      throw parse_error("feature token without ':'", off);
    const std::uint64_t idx = detail::parse_index(tok.substr(0, colon), off);
    const double val =
        detail::parse_real(tok.substr(colon + 1), off + colon + 1);
    features.emplace_back(idx, val);
  }
  detail::normalize_pairs(features, out);
  return out;
}

// Inverse of parse_libsvm_line up to number formatting; round-trips exactly.
inline std::string format_libsvm_line(const SparseExample& ex) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", ex.label);
  std::string out = buf;
  for (std::size_t i = 0; i < ex.indices.size(); ++i) {
    std::snprintf(buf, sizeof(buf), " %llu:%.17g",
                  static_cast<unsigned long long>(ex.indices[i]),
                  ex.values[i]);
    out += buf;
  }
  return out;
}

// Parses "label<TAB>tok1 tok2 ...": each token hashes into [0, 2^bits) and
// repeated tokens accumulate counts.
inline SparseExample parse_token_line(std::string_view line, unsigned bits,
                                      std::uint64_t seed) {
  const auto tab = line.find('\t');
  if (tab == std::string_view::npos)
    throw parse_error("token line without a label<TAB> prefix", 0);
  SparseExample out;
  out.label = detail::parse_real(line.substr(0, tab), 0);

  std::vector<std::pair<std::uint64_t, double>> features;
  std::size_t pos = tab + 1;
  while (pos < line.size()) {
    while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\r')) ++pos;
    const std::size_t start = pos;
    while (pos < line.size() && line[pos] != ' ' && line[pos] != '\r') ++pos;
    if (pos > start)
      features.emplace_back(
          hash_token(line.substr(start, pos - start), bits, seed), 1.0);
  }
  detail::normalize_pairs(features, out);
  return out;
}

// On-disk index convention: libsvm files are conventionally 1-based; ids are
// shifted down on load. zero_based reads ids verbatim.
enum class IndexBase { zero_based, one_based };

inline SparseExample apply_index_base(SparseExample ex, IndexBase base) {
  if (base == IndexBase::one_based) {
    for (std::uint64_t& id : ex.indices) {
      if (id == 0)
        throw parse_error("index 0 in a 1-based libsvm file", 0);
      --id;
    }
  }
  return ex;
}

// Line reader over plain or gzip text (zlib's gzopen handles both).
class LineReader {
 public:
  explicit LineReader(const std::string& path) : path_(path) {
    file_ = gzopen(path.c_str(), "rb");
    if (file_ == nullptr) throw io_error("cannot open '" + path + "'");
  }
  ~LineReader() {
    if (file_ != nullptr) gzclose(file_);
  }
  LineReader(const LineReader&) = delete;
  LineReader& operator=(const LineReader&) = delete;

  // False at end of stream; strips the trailing newline.
  bool next_line(std::string& out) {
    out.clear();
    char chunk[1 << 16];
    bool got_any = false;
    for (;;) {
      if (gzgets(file_, chunk, sizeof(chunk)) == nullptr) {
        int errnum = 0;
        const char* msg = gzerror(file_, &errnum);
        if (errnum != Z_OK && errnum != Z_STREAM_END)
          throw io_error("read error in '" + path_ + "': " + msg);
        if (got_any) ++line_no_;
        return got_any;
      }
      got_any = true;
      out += chunk;
      if (!out.empty() && out.back() == '\n') {
        out.pop_back();
        break;
      }
      if (gzeof(file_)) break;
    }
    ++line_no_;
    return true;
  }

  // 1-based number of the last line returned.
  std::size_t line_number() const noexcept { return line_no_; }

 private:
  gzFile file_ = nullptr;
  std::string path_;
  std::size_t line_no_ = 0;
};

// Streams a libsvm file example-by-example (one line buffered at a time).
// Blank lines are skipped; parse errors carry file and line context.
template <class Fn>
void for_each_libsvm(const std::string& path, IndexBase base, Fn&& fn) {
  LineReader reader(path);
  std::string line;
  while (reader.next_line(line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(apply_index_base(parse_libsvm_line(line), base));
    } catch (const parse_error& e) {
      throw parse_error(
          path + ":" + std::to_string(reader.line_number()) + ": " + e.what(),
          e.byte_offset());
    }
  }
}

template <class Fn>
void for_each_tokens(const std::string& path, unsigned bits,
                     std::uint64_t seed, Fn&& fn) {
  LineReader reader(path);
  std::string line;
  while (reader.next_line(line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      fn(parse_token_line(line, bits, seed));
    } catch (const parse_error& e) {
      throw parse_error(
          path + ":" + std::to_string(reader.line_number()) + ": " + e.what(),
          e.byte_offset());
    }
  }
}

inline std::vector<SparseExample> load_libsvm(
    const std::string& path, IndexBase base = IndexBase::one_based) {
  std::vector<SparseExample> out;
  for_each_libsvm(path, base, [&](SparseExample ex) {
    out.push_back(std::move(ex));
  });
  return out;
}

inline std::vector<SparseExample> load_tokens(const std::string& path,
                                              unsigned bits,
                                              std::uint64_t seed) {
  std::vector<SparseExample> out;
  for_each_tokens(path, bits, seed, [&](SparseExample ex) {
    out.push_back(std::move(ex));
  });
  return out;
}

// Epoch-ordered pass over an in-memory dataset. With a shuffle seed, each
// epoch applies an independent Fisher-Yates permutation derived from
// (seed, epoch); without one, file order is preserved.
class ExampleStream {
 public:
  explicit ExampleStream(std::vector<SparseExample> data,
                         std::optional<std::uint64_t> shuffle_seed = {})
      : data_(std::move(data)), shuffle_seed_(shuffle_seed) {}

  std::size_t size() const noexcept { return data_.size(); }
  const std::vector<SparseExample>& data() const noexcept { return data_; }

  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order(data_.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    if (shuffle_seed_) {
      SplitMix64 rng(mix64(*shuffle_seed_ ^ mix64(epoch + 1)));
      for (std::size_t i = order.size(); i > 1; --i)
        std::swap(order[i - 1], order[rng.below(i)]);
    }
    return order;
  }

  template <class Fn>
  void for_epoch(std::size_t epoch, Fn&& fn) const {
    if (!shuffle_seed_) {
      for (const SparseExample& ex : data_) fn(ex);
      return;
    }
    for (std::size_t i : epoch_order(epoch)) fn(data_[i]);
  }

 private:
  std::vector<SparseExample> data_;
  std::optional<std::uint64_t> shuffle_seed_;
};

}  // namespace sketchsel
