#include "mtlta/metrics.hpp"

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

namespace mtlta {
namespace {

constexpr std::array<double, 30> kT975 = {
    12.706204736432095, 4.3026527296961419, 3.1824463052842629, 2.7764451051977987, 2.5705818356363141,
    2.4469118511449692, 2.3646242515927844, 2.3060041352041658, 2.2621571628540993, 2.2281388519649385,
    2.2009851600829489, 2.1788128296634177, 2.1603686564610127, 2.1447866879169273, 2.131449545559323,
    2.1199052992210112, 2.1098155778331806, 2.1009220402409601, 2.093024054408263,  2.0859634472658364,
    2.0796138447276622, 2.0738730679040147, 2.0686576104190406, 2.0638985616280205, 2.0595385527532941,
    2.0555294386428709, 2.0518305164802833, 2.0484071417952441, 2.045229642132703,  2.0422724563012373,
};
constexpr double kZ975 = 1.959963984540054;

void check_inputs(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  if (preds.size() != golds.size()) {
    throw std::invalid_argument("metric: " + std::to_string(preds.size()) + " predictions for " +
                                std::to_string(golds.size()) + " gold labels");
  }
  if (preds.empty()) throw std::invalid_argument("metric: empty input");
}

double f1_from(const ConfusionCounts& c) {
  const double p = c.tp + c.fp == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  const double r = c.tp + c.fn == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

}  // namespace

ConfusionCounts confusion(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t cls) {
  check_inputs(preds, golds);
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool p = preds[i] == cls, g = golds[i] == cls;
    if (p && g) ++c.tp;
    else if (p) ++c.fp;
    else if (g) ++c.fn;
    else ++c.tn;
  }
  return c;
}

double accuracy(std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  check_inputs(preds, golds);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hits += preds[i] == golds[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

double f1_positive(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t positive) {
  return f1_from(confusion(preds, golds, positive));
}

double f1_macro(std::span<const std::size_t> preds, std::span<const std::size_t> golds, std::size_t num_classes) {
  if (num_classes == 0) throw std::invalid_argument("f1_macro: no classes");
  double total = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) total += f1_from(confusion(preds, golds, c));
  return total / static_cast<double>(num_classes);
}

double official_metric(const TaskSpec& task, std::span<const std::size_t> preds, std::span<const std::size_t> golds) {
  switch (task.metric) {
    case Metric::accuracy:
      return accuracy(preds, golds);
    case Metric::f1_positive:
      return f1_positive(preds, golds, task.positive_index());
    case Metric::f1_macro:
      return f1_macro(preds, golds, task.num_classes());
  }
  throw std::logic_error("unhandled metric");
}

double t_quantile_975(std::size_t df) {
  if (df == 0) throw std::invalid_argument("t quantile needs df >= 1");
  return df <= kT975.size() ? kT975[df - 1] : kZ975;
}

Interval ci95_t(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 2) throw std::invalid_argument("ci95_t needs at least 2 samples, got " + std::to_string(n));
  bool constant = true;
  for (double x : samples) constant = constant && x == samples[0];
  if (constant) return {samples[0], 0.0};
  double mean = 0.0;
  for (double x : samples) mean += x;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double x : samples) ss += (x - mean) * (x - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, t_quantile_975(n - 1) * s / std::sqrt(static_cast<double>(n))};
}

}  // namespace mtlta
