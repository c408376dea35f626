#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mtlta/task.hpp"

namespace mtlta {

struct ConfusionCounts {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

/// One-vs-rest counts for `cls`. Throws std::invalid_argument on empty or mismatched inputs.
ConfusionCounts confusion(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t cls);

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds);
/// F1 of `positive`; 0 when precision + recall is 0.
double f1_positive(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t positive);
/// Unweighted mean of per-class F1 over `num_classes` classes (default: 2).
double f1_macro(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t num_classes = 2);

/// The task's official metric.
double official_metric(const TaskSpec& task, std::span<const std::size_t> preds, std::span<const std::size_t> golds);

/// Two-sided 97.5% Student t quantile for `df` degrees of freedom: tabulated up to
/// df = 30, the normal quantile beyond.
double t_quantile_975(std::size_t df);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};

/// mean +- t(0.975, n-1) * s / sqrt(n) with the sample standard deviation s. Needs n >= 2.
Interval ci95_t(std::span<const double> samples);

}  // namespace mtlta
