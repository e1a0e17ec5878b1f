#pragma once

// Precision / recall / F1 from confusion counts, and macro averaging.

#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hce/common.hpp"

namespace hce {

/// One-vs-rest counts for a class of interest.
struct ConfusionMatrix {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t fn = 0;
  std::size_t tn = 0;

  std::size_t total() const { return tp + fp + fn + tn; }

  static ConfusionMatrix count(std::span<const int> predicted, std::span<const int> actual, int positive) {
    if (predicted.size() != actual.size()) throw DataError("prediction/target length mismatch");
    ConfusionMatrix cm;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
      const bool p = predicted[i] == positive;
      const bool a = actual[i] == positive;
      if (p && a) ++cm.tp;
      else if (p) ++cm.fp;
      else if (a) ++cm.fn;
      else ++cm.tn;
    }
    return cm;
  }

  bool operator==(const ConfusionMatrix&) const = default;
};

/// A ratio that is 0 with `undefined` set when its denominator is zero.
struct Metric {
  double value = 0.0;
  bool undefined = false;
};

inline Metric ratio(std::size_t num, std::size_t den) {
  if (den == 0) return {0.0, true};
  return {static_cast<double>(num) / static_cast<double>(den), false};
}

inline Metric precision(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fp); }
inline Metric recall(const ConfusionMatrix& cm) { return ratio(cm.tp, cm.tp + cm.fn); }

inline Metric f1(const ConfusionMatrix& cm) {
  const auto p = precision(cm);
  const auto r = recall(cm);
  if (p.value + r.value == 0.0) return {0.0, true};
  return {2.0 * p.value * r.value / (p.value + r.value), false};
}

inline double macro_f1(std::span<const double> per_class_f1) {
  if (per_class_f1.empty()) throw ConfigError("macro_f1 needs at least one class");
  return std::accumulate(per_class_f1.begin(), per_class_f1.end(), 0.0) / static_cast<double>(per_class_f1.size());
}

/// F1 of class 1 for binary predictions.
inline double f1_broken(std::span<const int> predicted, std::span<const int> actual) {
  return f1(ConfusionMatrix::count(predicted, actual, 1)).value;
}

}  // namespace hce
