#pragma once

// Benchmark metrics: MAE, Pearson correlation, Acc-7, and binary accuracy /
// F1 under the negative/non-negative and negative/positive conventions.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "misa/io.hpp"

namespace misa {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RegressionScores {
  double mae = 0.0;
  double corr = 0.0;
  bool zero_variance = false;  // corr reported as 0
};

inline RegressionScores regression_metrics(std::span<const double> preds,
                                           std::span<const double> labels) {
  if (preds.size() != labels.size()) {
    throw MetricError("regression_metrics: " + std::to_string(preds.size()) +
                      " predictions for " + std::to_string(labels.size()) +
                      " labels");
  }
  if (preds.empty()) throw MetricError("regression_metrics: empty input");
  const double n = static_cast<double>(preds.size());
  double abs_err = 0.0, mp = 0.0, ml = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    abs_err += std::abs(preds[i] - labels[i]);
    mp += preds[i];
    ml += labels[i];
  }
  mp /= n;
  ml /= n;
  double cov = 0.0, vp = 0.0, vl = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double dp = preds[i] - mp, dl = labels[i] - ml;
    cov += dp * dl;
    vp += dp * dp;
    vl += dl * dl;
  }
  RegressionScores out;
  out.mae = abs_err / n;
  if (vp == 0.0 || vl == 0.0) {
    out.zero_variance = true;
  } else {
    out.corr = std::clamp(cov / std::sqrt(vp * vl), -1.0, 1.0);
  }
  return out;
}

enum class BinaryConvention { nonneg, pos };

struct BinaryScores {
  double accuracy = 0.0;
  double f1_weighted = 0.0;
  double f1_negative = 0.0;
  double f1_positive = 0.0;
  std::size_t evaluated = 0;
};

namespace detail {

inline double f1(std::size_t tp, std::size_t fp, std::size_t fn) {
  const double denom = 2.0 * tp + fp + fn;
  return denom == 0.0 ? 0.0 : 2.0 * tp / denom;
}

}  // namespace detail

// nonneg: every example, class = (value >= 0).
// pos: examples with label == 0 are skipped, class = (value > 0).
// F1 is averaged over both classes weighted by label support.
inline BinaryScores acc2_fscore(std::span<const double> preds,
                                std::span<const double> labels,
                                BinaryConvention convention) {
  if (preds.size() != labels.size()) {
    throw MetricError("acc2_fscore: length mismatch");
  }
  if (preds.empty()) throw MetricError("acc2_fscore: empty input");
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    bool truth, guess;
    if (convention == BinaryConvention::nonneg) {
      truth = labels[i] >= 0.0;
      guess = preds[i] >= 0.0;
    } else {
      if (labels[i] == 0.0) continue;
      truth = labels[i] > 0.0;
      guess = preds[i] > 0.0;
    }
    if (truth && guess) ++tp;
    else if (!truth && !guess) ++tn;
    else if (guess) ++fp;
    else ++fn;
  }
  BinaryScores out;
  out.evaluated = tp + tn + fp + fn;
  if (out.evaluated == 0) {
    throw MetricError("acc2_fscore: no non-zero labels to evaluate");
  }
  const double n = static_cast<double>(out.evaluated);
  out.accuracy = static_cast<double>(tp + tn) / n;
  out.f1_positive = detail::f1(tp, fp, fn);
  out.f1_negative = detail::f1(tn, fn, fp);
  out.f1_weighted = (static_cast<double>(tp + fn) * out.f1_positive +
                     static_cast<double>(tn + fp) * out.f1_negative) / n;
  return out;
}

// Clamp to [-3, 3], round half away from zero.
inline int seven_class(double v) {
  return static_cast<int>(std::round(std::clamp(v, -3.0, 3.0)));
}

inline double acc7(std::span<const double> preds,
                   std::span<const double> labels) {
  if (preds.size() != labels.size()) throw MetricError("acc7: length mismatch");
  if (preds.empty()) throw MetricError("acc7: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    hits += seven_class(preds[i]) == seven_class(labels[i]);
  }
  return static_cast<double>(hits) / static_cast<double>(preds.size());
}

// Argmax accuracy over [N, 2] logits (row-major); ties go to class 0.
inline double binary_accuracy(std::span<const double> logits,
                              std::span<const double> labels,
                              std::size_t classes = 2) {
  if (classes != 2) {
    throw MetricError("binary_accuracy: expects 2 classes, got " +
                      std::to_string(classes));
  }
  if (logits.size() != 2 * labels.size()) {
    throw MetricError("binary_accuracy: logits do not match labels");
  }
  if (labels.empty()) throw MetricError("binary_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double guess = logits[2 * i + 1] > logits[2 * i] ? 1.0 : 0.0;
    hits += guess == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Argmax accuracy for any class count; ties go to the lowest index.
inline double multiclass_accuracy(std::span<const double> logits,
                                  std::span<const double> labels,
                                  std::size_t classes) {
  if (classes == 0 || logits.size() != classes * labels.size()) {
    throw MetricError("multiclass_accuracy: logits do not match labels");
  }
  if (labels.empty()) throw MetricError("multiclass_accuracy: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto row = logits.subspan(i * classes, classes);
    const auto best = std::max_element(row.begin(), row.end()) - row.begin();
    hits += static_cast<double>(best) == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// Flat, ordered name -> value report.
struct MetricBundle {
  std::map<std::string, double> values;
  std::vector<std::string> warnings;

  bool has(const std::string& key) const { return values.count(key) > 0; }
  double at(const std::string& key) const {
    auto it = values.find(key);
    if (it == values.end()) throw MetricError("no metric '" + key + "'");
    return it->second;
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values) out += k + " = " + format_double(v) + "\n";
    return out;
  }
};

inline MetricBundle regression_bundle(std::span<const double> preds,
                                      std::span<const double> labels) {
  MetricBundle b;
  const auto reg = regression_metrics(preds, labels);
  b.values["mae"] = reg.mae;
  b.values["corr"] = reg.corr;
  if (reg.zero_variance) {
    b.warnings.push_back("zero-variance input: corr reported as 0");
  }
  b.values["acc7"] = acc7(preds, labels);
  const auto nonneg = acc2_fscore(preds, labels, BinaryConvention::nonneg);
  b.values["acc2_nonneg"] = nonneg.accuracy;
  b.values["f_nonneg"] = nonneg.f1_weighted;
  b.values["f_nonneg_neg"] = nonneg.f1_negative;
  b.values["f_nonneg_pos"] = nonneg.f1_positive;
  bool any_nonzero = std::any_of(labels.begin(), labels.end(),
                                 [](double y) { return y != 0.0; });
  if (any_nonzero) {
    const auto pos = acc2_fscore(preds, labels, BinaryConvention::pos);
    b.values["acc2_pos"] = pos.accuracy;
    b.values["f_pos"] = pos.f1_weighted;
    b.values["f_pos_neg"] = pos.f1_negative;
    b.values["f_pos_pos"] = pos.f1_positive;
  } else {
    b.warnings.push_back("all labels are zero: negative/positive Acc-2 skipped");
  }
  return b;
}

inline MetricBundle classification_bundle(std::span<const double> logits,
                                          std::span<const double> labels,
                                          std::size_t classes) {
  MetricBundle b;
  if (classes == 2) {
    b.values["acc2"] = binary_accuracy(logits, labels, classes);
  } else {
    b.values["accuracy"] = multiclass_accuracy(logits, labels, classes);
  }
  return b;
}

}  // namespace misa
