#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <utility>
#include <vector>

#include "sketchsel/errors.hpp"
#include "sketchsel/hash.hpp"

namespace sketchsel {

enum class SketchMode : std::uint64_t { standard = 0, identity = 1 };

struct SketchGeometry {
  std::size_t depth = 3;
  std::size_t width = 0;
  SketchMode mode = SketchMode::standard;
};

// d x w grid of signed counters. Row hashes and signs are pure functions of
// (seed, row, index); identity mode is the degenerate single row with
// h(i) = i mod width and sign +1, giving per-feature cells when width >= p.
class CountSketch {
 public:
  CountSketch(SketchGeometry geometry, std::uint64_t seed)
      : depth_(geometry.depth),
        width_(geometry.width),
        mode_(geometry.mode),
        seed_(seed) {
    if (depth_ == 0 || width_ == 0)
      throw invalid_geometry_error("sketch depth and width must be positive");
    if (mode_ == SketchMode::identity && depth_ != 1)
      throw invalid_geometry_error("identity sketch requires depth 1");
    counters_.assign(depth_ * width_, 0.0);
    row_keys_.resize(depth_);
    for (std::size_t j = 0; j < depth_; ++j) row_keys_[j] = row_key(seed_, j);
  }

  std::size_t depth() const noexcept { return depth_; }
  std::size_t width() const noexcept { return width_; }
  SketchMode mode() const noexcept { return mode_; }
  std::uint64_t seed() const noexcept { return seed_; }

  // Row-major grid, row j at [j*width, (j+1)*width).
  const std::vector<double>& counters() const noexcept { return counters_; }

  std::size_t bucket(std::size_t row, std::uint64_t index) const noexcept {
    if (mode_ == SketchMode::identity)
      return static_cast<std::size_t>(index % width_);
    return bucket_of(feature_bits(row_keys_[row], index), width_);
  }

  double sign(std::size_t row, std::uint64_t index) const noexcept {
    if (mode_ == SketchMode::identity) return 1.0;
    return sign_of(feature_bits(row_keys_[row], index));
  }

  // Adds s_j(i) * delta to cell (j, h_j(i)) in every row.
  void update(std::uint64_t index, double delta) {
    if (!std::isfinite(delta))
      throw numeric_input_error("sketch update requires a finite delta");
    if (mode_ == SketchMode::identity) {
      counters_[static_cast<std::size_t>(index % width_)] += delta;
      return;
    }
    for (std::size_t j = 0; j < depth_; ++j) {
      const std::uint64_t bits = feature_bits(row_keys_[j], index);
      counters_[j * width_ + bucket_of(bits, width_)] += sign_of(bits) * delta;
    }
  }

  // Sign-corrected median over rows; even depth averages the middle pair.
  double query(std::uint64_t index) const {
    if (mode_ == SketchMode::identity)
      return counters_[static_cast<std::size_t>(index % width_)];
    std::array<double, 16> stack;
    std::vector<double> heap;
    double* vals = stack.data();
    if (depth_ > stack.size()) {
      heap.resize(depth_);
      vals = heap.data();
    }
    for (std::size_t j = 0; j < depth_; ++j) {
      const std::uint64_t bits = feature_bits(row_keys_[j], index);
      vals[j] = sign_of(bits) * counters_[j * width_ + bucket_of(bits, width_)];
    }
    std::sort(vals, vals + depth_);
    return depth_ % 2 ? vals[depth_ / 2]
                      : 0.5 * (vals[depth_ / 2 - 1] + vals[depth_ / 2]);
  }

  // Multiplies every counter by factor; all queries scale by factor.
  void scale(double factor) {
    if (!std::isfinite(factor))
      throw numeric_input_error("sketch scale requires a finite factor");
    for (double& c : counters_) c *= factor;
  }

  // Identity mode only: cells of protected features keep their value, all
  // other counters are multiplied by factor. Multi-hash sketches cannot
  // protect single features (shared cells), hence unsupported there.
  void scale_except(double factor,
                    const std::vector<std::uint64_t>& protected_ids) {
    if (mode_ != SketchMode::identity)
      throw unsupported_mode_error("scale_except requires an identity sketch");
    if (!std::isfinite(factor))
      throw numeric_input_error("sketch scale requires a finite factor");
    std::vector<std::pair<std::size_t, double>> saved;
    saved.reserve(protected_ids.size());
    for (std::uint64_t id : protected_ids) {
      const auto cell = static_cast<std::size_t>(id % width_);
      saved.emplace_back(cell, counters_[cell]);
    }
    for (double& c : counters_) c *= factor;
    for (const auto& [cell, value] : saved) counters_[cell] = value;
  }

  // Cell-wise accumulate of a same-family sketch.
  void add(const CountSketch& other) {
    if (!compatible(other))
      throw incompatible_sketch_error(
          "merge requires identical geometry, mode, and seed");
    for (std::size_t c = 0; c < counters_.size(); ++c)
      counters_[c] += other.counters_[c];
  }

  bool compatible(const CountSketch& other) const noexcept {
    return depth_ == other.depth_ && width_ == other.width_ &&
           mode_ == other.mode_ && seed_ == other.seed_;
  }

  // Flat binary layout: "CSK1", then depth/width/mode/seed as little-endian
  // u64, then depth*width f64 counters in row-major order.
  void save(std::ostream& os) const {
    os.write("CSK1", 4);
    write_u64(os, depth_);
    write_u64(os, width_);
    write_u64(os, static_cast<std::uint64_t>(mode_));
    write_u64(os, seed_);
    for (double c : counters_) write_u64(os, std::bit_cast<std::uint64_t>(c));
    if (!os) throw io_error("sketch save failed");
  }

  static CountSketch load(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "CSK1", 4) != 0)
      throw io_error("sketch load: missing CSK1 magic");
    const std::uint64_t depth = read_u64(is);
    const std::uint64_t width = read_u64(is);
    const std::uint64_t mode = read_u64(is);
    const std::uint64_t seed = read_u64(is);
    if (!is) throw io_error("sketch load: truncated header");
    if (mode > 1) throw io_error("sketch load: unknown mode");
    CountSketch out(SketchGeometry{static_cast<std::size_t>(depth),
                                   static_cast<std::size_t>(width),
                                   static_cast<SketchMode>(mode)},
                    seed);
    for (double& c : out.counters_) {
      c = std::bit_cast<double>(read_u64(is));
      if (!is) throw io_error("sketch load: truncated counters");
    }
    return out;
  }

 private:
  static void write_u64(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>(v >> (8 * i));
    os.write(bytes, 8);
  }

  static std::uint64_t read_u64(std::istream& is) {
    unsigned char bytes[8];
    is.read(reinterpret_cast<char*>(bytes), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{bytes[i]} << (8 * i);
    return v;
  }

  std::size_t depth_;
  std::size_t width_;
  SketchMode mode_;
  std::uint64_t seed_;
  std::vector<double> counters_;
  std::vector<std::uint64_t> row_keys_;
};

inline CountSketch merge(const CountSketch& a, const CountSketch& b) {
  CountSketch out = a;
  out.add(b);
  return out;
}

}  // namespace sketchsel
