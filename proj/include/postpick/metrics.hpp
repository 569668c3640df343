#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "postpick/image.hpp"

namespace postpick::metrics {

/// 2x2 contingency table with particle (+) as the positive class.
struct Confusion {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  bool operator==(const Confusion&) const = default;
};

/// Ratios whose denominator is zero are left empty rather than reported as 0.
struct EvaluationReport {
  Confusion confusion;
  std::optional<double> sensitivity;
  std::optional<double> specificity;
  std::optional<double> ppv;
  std::optional<double> balanced_accuracy;
  std::optional<double> auc;

  bool operator==(const EvaluationReport&) const = default;
};

Confusion confusion(std::span<const Label> truth, std::span<const Label> predicted);

EvaluationReport summarize(const Confusion& c);

/// Mann-Whitney estimate of the ROC area: P(score+ > score-) + P(tie) / 2.
double roc_auc(std::span<const double> scores, std::span<const Label> truth);

}  // namespace postpick::metrics
