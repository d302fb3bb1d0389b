#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

#include "sketchsel/data.hpp"
#include "sketchsel/errors.hpp"

namespace sketchsel {

enum class LossKind { squared, logistic, hinge, cross_entropy };

// Loss choice with its constant learning rate and class count. Cross-entropy
// needs C >= 2; the others are single-score (regression or binary +-1).
struct LossSpec {
  LossKind kind = LossKind::squared;
  double lambda = 0.5;
  std::size_t classes = 1;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw error("learning rate lambda must be finite and > 0");
    if (kind == LossKind::cross_entropy) {
      if (classes < 2) throw error("cross-entropy requires classes >= 2");
    } else if (classes != 1) {
      throw error("squared/logistic/hinge require classes == 1");
    }
  }
};

inline double sigmoid(double z) noexcept {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

// log(1 + e^m) without overflow.
inline double softplus(double m) noexcept {
  return m > 0.0 ? m + std::log1p(std::exp(-m)) : std::log1p(std::exp(m));
}

inline void check_label(const LossSpec& loss, double label) {
  switch (loss.kind) {
    case LossKind::squared:
      if (!std::isfinite(label))
        throw label_domain_error("squared loss requires a finite label");
      return;
    case LossKind::logistic:
    case LossKind::hinge:
      if (label != 1.0 && label != -1.0)
        throw label_domain_error("binary losses require labels in {-1,+1}");
      return;
    case LossKind::cross_entropy: {
      const double c = std::floor(label);
      if (c != label || label < 0.0 || label >= double(loss.classes))
        throw label_domain_error("class label must be an integer in [0, C)");
      return;
    }
  }
}

// Scalar g such that the lambda-scaled negative loss-gradient is g * X_i.
inline double gradient_coefficient(const LossSpec& loss, double label,
                                   double score) {
  check_label(loss, label);
  switch (loss.kind) {
    case LossKind::squared:
      return 2.0 * loss.lambda * (label - score);
    case LossKind::logistic:
      return loss.lambda * label * sigmoid(-label * score);
    case LossKind::hinge:
      return label * score < 1.0 ? loss.lambda * label : 0.0;
    case LossKind::cross_entropy:
      throw error("cross-entropy gradient requires per-class scores");
  }
  return 0.0;
}

inline std::vector<double> softmax(const std::vector<double>& scores) {
  const double top = *std::max_element(scores.begin(), scores.end());
  std::vector<double> out(scores.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < scores.size(); ++c) sum += out[c] = std::exp(scores[c] - top);
  for (double& v : out) v /= sum;
  return out;
}

// Per-class coefficients: g_c = lambda * (1{y = c} - softmax_c(scores)).
inline std::vector<double> gradient_coefficients(
    const LossSpec& loss, double label, const std::vector<double>& scores) {
  if (loss.kind != LossKind::cross_entropy)
    throw error("per-class gradients are defined for cross-entropy only");
  check_label(loss, label);
  if (scores.size() != loss.classes)
    throw length_mismatch_error("scores must have one entry per class");
  std::vector<double> out = softmax(scores);
  for (double& v : out) v = -loss.lambda * v;
  out[static_cast<std::size_t>(label)] += loss.lambda;
  return out;
}

inline double loss_value(const LossSpec& loss, double label, double score) {
  check_label(loss, label);
  switch (loss.kind) {
    case LossKind::squared: {
      const double r = label - score;
      return r * r;
    }
    case LossKind::logistic:
      return softplus(-label * score);
    case LossKind::hinge:
      return std::max(0.0, 1.0 - label * score);
    case LossKind::cross_entropy:
      throw error("cross-entropy loss requires per-class scores");
  }
  return 0.0;
}

inline double loss_value_multiclass(const LossSpec& loss, double label,
                                    const std::vector<double>& scores) {
  if (loss.kind != LossKind::cross_entropy)
    throw error("multiclass loss is defined for cross-entropy only");
  check_label(loss, label);
  const double top = *std::max_element(scores.begin(), scores.end());
  double sum = 0.0;
  for (double s : scores) sum += std::exp(s - top);
  return std::log(sum) - (scores[static_cast<std::size_t>(label)] - top);
}

// The op-level sparse gradient: support matches the example's support.
inline std::vector<std::pair<std::uint64_t, double>> sparse_gradient(
    const LossSpec& loss, const SparseExample& ex, double score) {
  const double coef = gradient_coefficient(loss, ex.label, score);
  std::vector<std::pair<std::uint64_t, double>> out;
  if (coef == 0.0) return out;
  out.reserve(ex.indices.size());
  for (std::size_t i = 0; i < ex.indices.size(); ++i)
    out.emplace_back(ex.indices[i], coef * ex.values[i]);
  return out;
}

}  // namespace sketchsel
