#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sketchsel {

// Base for all library errors.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Sketch construction with zero depth or width.
class invalid_geometry_error : public error {
 public:
  using error::error;
};

// Non-finite delta, factor, or weight fed to a numeric op.
class numeric_input_error : public error {
 public:
  using error::error;
};

// Merge of sketches whose geometry or seed differ.
class incompatible_sketch_error : public error {
 public:
  using error::error;
};

// Operation requires a different sketch mode (e.g. per-feature protection on a multi-hash sketch).
class unsupported_mode_error : public error {
 public:
  using error::error;
};

class empty_heap_error : public error {
 public:
  using error::error;
};

// Label outside the domain of the configured loss.
class label_domain_error : public error {
 public:
  using error::error;
};

// Batch buffer budget below the top-k capacity.
class invalid_budget_error : public error {
 public:
  using error::error;
};

// Synthetic design parameters that cannot be realized.
class invalid_spec_error : public error {
 public:
  using error::error;
};

// Metric input missing a required class.
class degenerate_labels_error : public error {
 public:
  using error::error;
};

class length_mismatch_error : public error {
 public:
  using error::error;
};

class io_error : public error {
 public:
  using error::error;
};

// Text-format failure; carries the byte offset of the offending field.
class parse_error : public error {
 public:
  parse_error(const std::string& what, std::size_t byte_offset)
      : error(what + " (byte " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}

  std::size_t byte_offset() const noexcept { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

}  // namespace sketchsel
