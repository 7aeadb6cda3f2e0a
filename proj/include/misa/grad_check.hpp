#pragma once

// Central finite-difference verification of autodiff gradients.

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "misa/tensor.hpp"

namespace misa {

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double autodiff = 0.0;  // values at worst_index
  double numeric = 0.0;
  bool finite = true;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double tolerance = 0.0;

  bool passed() const {
    return std::all_of(entries.begin(), entries.end(),
                       [](const auto& e) { return e.passed; });
  }
  double max_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.max_rel_error);
    return m;
  }
};

// |a - b| / max(|a|, |b|, floor). The floor keeps entries whose true
// gradient is ~0 from being judged on pure rounding noise.
inline double relative_error(double a, double b, double floor = 1e-6) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

template <typename T>
using NamedTensors = std::vector<std::pair<std::string, BasicTensor<T>>>;

// `loss_fn` must rebuild the graph from the current parameter values on each
// call and be deterministic (no dropout).
template <typename T, typename LossFn>
GradCheckReport grad_check(LossFn&& loss_fn, NamedTensors<T> params,
                           double step, double tol, double floor = 1e-6) {
  GradCheckReport report;
  report.tolerance = tol;
  for (auto& [name, p] : params) p.zero_grad();
  BasicTensor<T> loss = loss_fn();
  backward(loss);

  for (auto& [name, p] : params) {
    GradCheckEntry entry;
    entry.name = name;
    std::vector<double> analytic(p.size(), 0.0);
    if (p.has_grad()) {
      auto g = p.grad();
      std::copy(g.begin(), g.end(), analytic.begin());
    }
    auto values = p.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const T saved = values[i];
      values[i] = static_cast<T>(saved + step);
      const double plus = static_cast<double>(loss_fn().item());
      values[i] = static_cast<T>(saved - step);
      const double minus = static_cast<double>(loss_fn().item());
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double err = relative_error(analytic[i], numeric, floor);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i]) ||
          !std::isfinite(err)) {
        entry.finite = false;
        entry.worst_index = i;
        entry.autodiff = analytic[i];
        entry.numeric = numeric;
        entry.max_rel_error = INFINITY;
        break;
      }
      if (err > entry.max_rel_error || i == 0) {
        entry.max_rel_error = std::max(entry.max_rel_error, err);
        if (err >= entry.max_rel_error) {
          entry.worst_index = i;
          entry.autodiff = analytic[i];
          entry.numeric = numeric;
        }
      }
    }
    entry.passed = entry.finite && entry.max_rel_error < tol;
    report.entries.push_back(std::move(entry));
  }
  for (auto& [name, p] : params) p.zero_grad();
  return report;
}

}  // namespace misa
