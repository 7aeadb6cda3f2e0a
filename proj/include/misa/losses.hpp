#pragma once

// Similarity (CMD), difference (soft orthogonality), reconstruction and task
// losses, and their weighted combination.

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "misa/config.hpp"
#include "misa/tensor.hpp"

namespace misa {

class LabelError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Per-modality N_b x d_h matrices; undefined entries are absent.
template <typename T>
struct BatchRepresentations {
  std::array<BasicTensor<T>, 3> invariant;       // H^c_m
  std::array<BasicTensor<T>, 3> specific;        // H^p_m
  std::array<BasicTensor<T>, 3> utterance;       // u_m
  std::array<BasicTensor<T>, 3> reconstruction;  // u_hat_m
};

struct LossReport {
  double task = 0.0;
  double sim = 0.0;
  double diff = 0.0;
  double recon = 0.0;
  double total = 0.0;
};

// Empirical CMD_K between row samples X [N, d] and Y [M, d]. Samples must lie
// in [lower, upper] (1e-6 slack).
template <typename T>
BasicTensor<T> cmd(const BasicTensor<T>& x, const BasicTensor<T>& y,
                   const CmdConfig& cfg) {
  cfg.validate();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) {
    throw ShapeError("cmd: sample matrices " + to_string(x.shape()) + " and " +
                     to_string(y.shape()) + " differ in feature dim");
  }
  if (x.dim(0) == 0 || y.dim(0) == 0) throw ShapeError("cmd: empty sample");
  for (const auto* s : {&x, &y}) {
    for (T v : s->data()) {
      if (!(v >= cfg.lower - 1e-6 && v <= cfg.upper + 1e-6)) {
        throw std::domain_error("cmd: sample value outside [" +
                                std::to_string(cfg.lower) + ", " +
                                std::to_string(cfg.upper) + "]");
      }
    }
  }
  const double width = cfg.scale_by_width ? cfg.upper - cfg.lower : 1.0;
  auto mean_x = mean_axis(x, 0);
  auto mean_y = mean_axis(y, 0);
  auto total = l2_norm(sub(mean_x, mean_y));
  if (width != 1.0) total = scale(total, static_cast<T>(1.0 / width));
  const auto centered_x = sub(x, mean_x);
  const auto centered_y = sub(y, mean_y);
  for (int k = 2; k <= cfg.order; ++k) {
    auto term = l2_norm(sub(mean_axis(power(centered_x, k), 0),
                            mean_axis(power(centered_y, k), 0)));
    if (width != 1.0) {
      term = scale(term, static_cast<T>(1.0 / std::pow(width, k)));
    }
    total = add(total, term);
  }
  return total;
}

// Mean CMD over the available invariant pairs among (l,a), (l,v), (a,v).
template <typename T>
BasicTensor<T> similarity_loss(const BatchRepresentations<T>& reps,
                               const CmdConfig& cfg) {
  BasicTensor<T> total;
  std::size_t pairs = 0;
  for (const auto& [m1, m2] : kModalityPairs) {
    const auto& a = reps.invariant[index(m1)];
    const auto& b = reps.invariant[index(m2)];
    if (!a.defined() || !b.defined()) continue;
    auto term = cmd(a, b, cfg);
    total = pairs == 0 ? term : add(total, term);
    ++pairs;
  }
  if (pairs == 0) {
    throw ConfigError("similarity_loss: needs invariant representations of at "
                      "least two modalities");
  }
  return scale(total, static_cast<T>(1.0 / double(pairs)));
}

// Per-column batch centering followed by per-row unit l2 scaling.
template <typename T>
BasicTensor<T> center_and_normalize(const BasicTensor<T>& h) {
  return normalize_rows(sub(h, mean_axis(h, 0)));
}

// Sum of ||H_c^T H_p||_F^2 per modality plus ||H_p1^T H_p2||_F^2 per pair of
// specific matrices, after center_and_normalize. `degenerate` is set when
// N_b < 2 (centering then annihilates every row).
template <typename T>
BasicTensor<T> difference_loss(const BatchRepresentations<T>& reps,
                               bool* degenerate = nullptr) {
  std::array<BasicTensor<T>, 3> nc, np;
  std::size_t rows = 0;
  for (Modality m : kModalities) {
    const std::size_t i = index(m);
    if (reps.invariant[i].defined()) {
      nc[i] = center_and_normalize(reps.invariant[i]);
      rows = reps.invariant[i].dim(0);
    }
    if (reps.specific[i].defined()) {
      np[i] = center_and_normalize(reps.specific[i]);
      rows = reps.specific[i].dim(0);
    }
  }
  if (degenerate) *degenerate = rows < 2;
  BasicTensor<T> total;
  auto accumulate = [&](const BasicTensor<T>& a, const BasicTensor<T>& b) {
    if (a.dim(0) != b.dim(0)) {
      throw ShapeError("difference_loss: batch sizes differ");
    }
    auto term = frobenius_sq(matmul(transpose(a), b));
    total = total.defined() ? add(total, term) : term;
  };
  for (Modality m : kModalities) {
    const std::size_t i = index(m);
    if (nc[i].defined() && np[i].defined()) accumulate(nc[i], np[i]);
  }
  for (const auto& [m1, m2] : kModalityPairs) {
    if (np[index(m1)].defined() && np[index(m2)].defined()) {
      accumulate(np[index(m1)], np[index(m2)]);
    }
  }
  if (!total.defined()) {
    throw ConfigError("difference_loss: no invariant/specific pair present");
  }
  return total;
}

// Mean over modalities of the per-coordinate squared error between u and u_hat.
template <typename T>
BasicTensor<T> reconstruction_loss(const BatchRepresentations<T>& reps) {
  BasicTensor<T> total;
  std::size_t count = 0;
  for (Modality m : kModalities) {
    const auto& u = reps.utterance[index(m)];
    const auto& r = reps.reconstruction[index(m)];
    if (!u.defined() || !r.defined()) continue;
    if (u.shape() != r.shape()) {
      throw ShapeError("reconstruction_loss: u " + to_string(u.shape()) +
                       " vs reconstruction " + to_string(r.shape()));
    }
    auto term = mean(power(sub(u, r), 2));
    total = count == 0 ? term : add(total, term);
    ++count;
  }
  if (count == 0) throw ConfigError("reconstruction_loss: nothing to compare");
  return scale(total, static_cast<T>(1.0 / double(count)));
}

// Regression: (1/N) sum ||y - y_hat||^2 over predictions [N, D].
// Classification: mean negative log-softmax of the true class over logits [N, C].
template <typename T>
BasicTensor<T> task_loss(const BasicTensor<T>& predictions,
                         std::span<const double> labels, TaskKind kind) {
  if (predictions.rank() != 2 || predictions.dim(0) != labels.size()) {
    throw ShapeError("task_loss: predictions " +
                     to_string(predictions.shape()) + " for " +
                     std::to_string(labels.size()) + " labels");
  }
  const std::size_t n = labels.size(), width = predictions.dim(1);
  if (n == 0) throw ShapeError("task_loss: empty batch");
  if (kind == TaskKind::regression) {
    std::vector<T> target(n * width);
    for (std::size_t i = 0; i < n; ++i) {
      std::fill_n(target.begin() + i * width, width, static_cast<T>(labels[i]));
    }
    BasicTensor<T> y({n, width}, std::move(target));
    return scale(sum(power(sub(y, predictions), 2)),
                 static_cast<T>(1.0 / double(n)));
  }
  std::vector<T> onehot(n * width, T(0));
  for (std::size_t i = 0; i < n; ++i) {
    const double c = labels[i];
    if (!(c >= 0.0) || c != std::floor(c) || c >= double(width)) {
      throw LabelError("task_loss: invalid class index " + std::to_string(c) +
                       " for " + std::to_string(width) + " classes");
    }
    onehot[i * width + static_cast<std::size_t>(c)] = T(1);
  }
  BasicTensor<T> target({n, width}, std::move(onehot));
  return scale(sum(mul(target, log_softmax(predictions, 1))),
               static_cast<T>(-1.0 / double(n)));
}

// total = task + alpha sim + beta diff + gamma recon, evaluated left to right
// in T so it matches the differentiable path bit for bit.
template <typename T = float>
LossReport total_loss(const LossReport& components, const LossWeights& w) {
  const std::pair<const char*, double> named[] = {{"task", components.task},
                                                  {"sim", components.sim},
                                                  {"diff", components.diff},
                                                  {"recon", components.recon}};
  for (const auto& [label, value] : named) {
    if (!std::isfinite(value)) {
      throw NumericalError(std::string("loss component '") + label +
                           "' is not finite");
    }
  }
  T total = static_cast<T>(components.task);
  const T sim = static_cast<T>(w.alpha) * static_cast<T>(components.sim);
  total = total + sim;
  const T diff = static_cast<T>(w.beta) * static_cast<T>(components.diff);
  total = total + diff;
  const T recon = static_cast<T>(w.gamma) * static_cast<T>(components.recon);
  total = total + recon;
  LossReport out = components;
  out.total = static_cast<double>(total);
  return out;
}

template <typename T>
struct LossTerms {
  BasicTensor<T> total;
  LossReport report;
  bool degenerate_difference = false;
};

// Differentiable composite loss. Components a variant does not use are
// exactly zero and stay off the graph.
template <typename T>
LossTerms<T> composite_loss(const BatchRepresentations<T>& reps,
                            const BasicTensor<T>& predictions,
                            std::span<const double> labels, TaskKind kind,
                            Variant variant, const LossWeights& w,
                            const CmdConfig& cmd_cfg) {
  LossTerms<T> out;
  auto task = task_loss(predictions, labels, kind);
  std::size_t invariant_count = 0, pair_count = 0;
  for (Modality m : kModalities) {
    invariant_count += reps.invariant[index(m)].defined();
    pair_count += reps.invariant[index(m)].defined() &&
                  reps.specific[index(m)].defined();
  }
  BasicTensor<T> sim, diff, recon;
  if (uses_similarity(variant) && invariant_count >= 2) {
    sim = similarity_loss(reps, cmd_cfg);
  }
  if (uses_difference(variant) && pair_count > 0) {
    diff = difference_loss(reps, &out.degenerate_difference);
  }
  if (uses_reconstruction(variant)) recon = reconstruction_loss(reps);

  LossReport components;
  components.task = task.item();
  components.sim = sim.defined() ? sim.item() : 0.0;
  components.diff = diff.defined() ? diff.item() : 0.0;
  components.recon = recon.defined() ? recon.item() : 0.0;
  out.report = total_loss<T>(components, w);

  auto total = task;
  if (sim.defined()) total = add(total, scale(sim, static_cast<T>(w.alpha)));
  if (diff.defined()) total = add(total, scale(diff, static_cast<T>(w.beta)));
  if (recon.defined()) total = add(total, scale(recon, static_cast<T>(w.gamma)));
  out.total = total;
  return out;
}

}  // namespace misa
