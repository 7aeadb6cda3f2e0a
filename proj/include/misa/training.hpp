#pragma once

// Adam, global-norm clipping, the epoch loop with exponential learning-rate
// decay and early stopping, and evaluation with optional exports.

#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <limits>
#include <string>
#include <vector>

#include "misa/checkpoint.hpp"
#include "misa/config.hpp"
#include "misa/data.hpp"
#include "misa/metrics.hpp"
#include "misa/model.hpp"

namespace misa {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  std::vector<std::vector<T>> first;   // per parameter, same order as store
  std::vector<std::vector<T>> second;
  std::uint64_t steps = 0;
};

// One bias-corrected Adam update. Parameters that received no gradient this
// step are treated as having a zero gradient.
template <typename T>
void adam_step(ParameterStore<T>& store, AdamState<T>& state, double lr,
               const AdamConfig& cfg = {}) {
  if (state.first.empty()) {
    for (const auto& [name, p] : store) {
      state.first.emplace_back(p.size(), T(0));
      state.second.emplace_back(p.size(), T(0));
    }
  }
  if (state.first.size() != store.size()) {
    throw ShapeError("adam_step: optimizer state does not match parameters");
  }
  for (const auto& [name, p] : store) {
    for (T g : p.grad()) {
      if (!std::isfinite(g)) {
        throw NumericalError("adam_step: non-finite gradient in '" + name + "'");
      }
    }
  }
  ++state.steps;
  const double correction1 = 1.0 - std::pow(cfg.beta1, double(state.steps));
  const double correction2 = 1.0 - std::pow(cfg.beta2, double(state.steps));
  std::size_t k = 0;
  for (const auto& [name, param] : store) {
    auto p = param;
    auto values = p.mutable_data();
    auto grad = p.grad();
    auto& m = state.first[k];
    auto& v = state.second[k];
    ++k;
    if (m.size() != values.size()) {
      throw ShapeError("adam_step: moment buffer size mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]);
      const double mi = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
      const double vi = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double update =
          lr * (mi / correction1) / (std::sqrt(vi / correction2) + cfg.epsilon);
      values[i] = static_cast<T>(values[i] - update);
    }
  }
}

// Rescales all gradients so their joint l2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(ParameterStore<T>& store, double max_norm) {
  double sq = 0.0;
  for (const auto& [name, p] : store) {
    for (T g : p.grad()) sq += double(g) * double(g);
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double factor = max_norm / norm;
    for (const auto& [name, param] : store) {
      auto p = param;
      if (!p.has_grad()) continue;
      for (T& g : p.mutable_grad()) g = static_cast<T>(g * factor);
    }
  }
  return norm;
}

template <typename T>
double grad_norm(const ParameterStore<T>& store) {
  double sq = 0.0;
  for (const auto& [name, p] : store) {
    for (T g : p.grad()) sq += double(g) * double(g);
  }
  return std::sqrt(sq);
}

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  LossReport train;
  LossReport val;
};

template <typename T>
struct TrainState {
  std::size_t epoch = 0;
  double lr = 0.0;
  double best_val_total = std::numeric_limits<double>::infinity();
  double best_val_task = std::numeric_limits<double>::infinity();
  std::size_t best_epoch = 0;        // by validation total (stopping counter)
  std::size_t checkpoint_epoch = 0;  // by validation task loss
  std::size_t epochs_since_improvement = 0;
  AdamState<T> adam;
};

template <typename T>
struct TrainResult {
  std::vector<EpochRecord> history;
  std::vector<LossReport> steps;
  std::vector<NamedArray> best_parameters;  // snapshot at checkpoint_epoch
  TrainState<T> state;
  bool early_stopped = false;
};

// Called after every epoch; returning false ends training.
template <typename T>
using EpochObserver = std::function<bool(const EpochRecord&, MisaModel<T>&)>;

namespace detail {

inline void accumulate(LossReport& acc, const LossReport& r, double weight) {
  acc.task += weight * r.task;
  acc.sim += weight * r.sim;
  acc.diff += weight * r.diff;
  acc.recon += weight * r.recon;
  acc.total += weight * r.total;
}

inline void finish(LossReport& acc, double total_weight) {
  acc.task /= total_weight;
  acc.sim /= total_weight;
  acc.diff /= total_weight;
  acc.recon /= total_weight;
  acc.total /= total_weight;
}

}  // namespace detail

// Size-weighted mean of per-batch losses in eval mode.
template <typename T>
LossReport evaluate_losses(MisaModel<T>& model,
                           const std::vector<MultimodalExample>& split,
                           const TrainConfig& cfg) {
  if (split.empty()) throw ConfigError("evaluate_losses: empty split");
  LossReport acc;
  double weight = 0.0;
  for (const auto& batch : batch_iter(split, cfg.batch_size, cfg.seed, 0, false)) {
    auto fwd = model.forward(batch, Mode::eval);
    const auto terms = model.loss(fwd, batch, cfg.weights, cfg.cmd);
    detail::accumulate(acc, terms.report, double(batch.size()));
    weight += double(batch.size());
  }
  detail::finish(acc, weight);
  return acc;
}

template <typename T>
TrainResult<T> train(MisaModel<T>& model, const DatasetSplits& data,
                     const TrainConfig& cfg, const EpochObserver<T>& observer = {},
                     std::size_t prep_threads = 1) {
  cfg.validate();
  if (data.train.empty() || data.dev.empty()) {
    throw ConfigError("train: train and dev splits must be non-empty");
  }
  TrainResult<T> result;
  auto& st = result.state;
  st.lr = cfg.learning_rate;
  model.seed_dropout(cfg.seed);
  result.best_parameters = snapshot(model.parameters());

  auto prepare = [&](std::size_t epoch) {
    return batch_iter(data.train, cfg.batch_size, cfg.seed, epoch);
  };
  std::future<std::vector<Batch>> ahead;
  if (prep_threads > 1) ahead = std::async(std::launch::async, prepare, 1);

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    st.epoch = epoch;
    auto batches = ahead.valid() ? ahead.get() : prepare(epoch);
    if (prep_threads > 1 && epoch < cfg.max_epochs) {
      ahead = std::async(std::launch::async, prepare, epoch + 1);
    }
    EpochRecord record;
    record.epoch = epoch;
    record.lr = st.lr;
    double seen = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& batch = batches[b];
      model.parameters().zero_grad();
      auto fwd = model.forward(batch, Mode::train);
      LossTerms<T> terms;
      try {
        terms = model.loss(fwd, batch, cfg.weights, cfg.cmd);
      } catch (const NumericalError& e) {
        throw NumericalError("epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(b) + ": " + e.what());
      }
      backward(terms.total);
      clip_grad_norm(model.parameters(), cfg.grad_clip);
      adam_step(model.parameters(), st.adam, st.lr);
      result.steps.push_back(terms.report);
      detail::accumulate(record.train, terms.report, double(batch.size()));
      seen += double(batch.size());
    }
    detail::finish(record.train, seen);
    model.parameters().zero_grad();
    try {
      record.val = evaluate_losses(model, data.dev, cfg);
    } catch (const NumericalError& e) {
      throw NumericalError("epoch " + std::to_string(epoch) +
                           ", validation: " + e.what());
    }
    result.history.push_back(record);

    if (record.val.total < st.best_val_total) {
      st.best_val_total = record.val.total;
      st.best_epoch = epoch;
      st.epochs_since_improvement = 0;
    } else {
      ++st.epochs_since_improvement;
    }
    if (record.val.task < st.best_val_task) {
      st.best_val_task = record.val.task;
      st.checkpoint_epoch = epoch;
      result.best_parameters = snapshot(model.parameters());
    }
    st.lr *= cfg.lr_decay;

    const bool keep_going = !observer || observer(record, model);
    if (!keep_going) break;
    if (st.epochs_since_improvement >= cfg.patience) {
      result.early_stopped = true;
      break;
    }
  }
  if (ahead.valid()) ahead.wait();
  return result;
}

struct EmbeddingRecord {
  std::string id;
  Modality modality;
  bool invariant;
  std::vector<float> vector;
};

struct AttentionRecord {
  std::string id;
  std::size_t rows = 0;
  std::vector<double> matrix;  // rows x rows, row-major
};

struct Evaluation {
  MetricBundle metrics;
  std::vector<std::string> ids;
  std::vector<double> labels;
  std::vector<double> outputs;  // N x output_dim
  std::vector<std::string> row_labels;
  std::vector<EmbeddingRecord> embeddings;
  std::vector<AttentionRecord> attention;
  std::vector<double> mean_attention;  // rows x rows
};

// Deterministic (dropout off) evaluation over one split.
template <typename T>
Evaluation evaluate(MisaModel<T>& model, const std::vector<MultimodalExample>& split,
                    std::size_t batch_size, bool collect_exports = false) {
  if (split.empty()) throw ConfigError("evaluate: empty split");
  const auto& cfg = model.config();
  Evaluation ev;
  for (const auto& row : model.fusion_layout()) ev.row_labels.push_back(row.label());
  const std::size_t rows = ev.row_labels.size();
  ev.mean_attention.assign(rows * rows, 0.0);

  for (const auto& batch : batch_iter(split, batch_size, 0, 0, false)) {
    if (cfg.task == TaskKind::classification) {
      for (double y : batch.labels) {
        if (!(y >= 0.0) || y != std::floor(y) || y >= double(cfg.num_classes)) {
          throw LabelError("evaluate: label " + std::to_string(y) +
                           " is not a class index for this model");
        }
      }
    }
    auto fwd = model.forward(batch, Mode::eval);
    ev.ids.insert(ev.ids.end(), batch.ids.begin(), batch.ids.end());
    ev.labels.insert(ev.labels.end(), batch.labels.begin(), batch.labels.end());
    for (T v : fwd.prediction.data()) ev.outputs.push_back(static_cast<double>(v));
    auto att = fwd.attention.data();
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (std::size_t j = 0; j < rows * rows; ++j) {
        ev.mean_attention[j] += att[i * rows * rows + j];
      }
    }
    if (!collect_exports) continue;
    const std::size_t h = cfg.hidden;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (bool inv : {true, false}) {
        for (Modality m : kModalities) {
          const auto& t = inv ? fwd.reps.invariant[index(m)] : fwd.reps.specific[index(m)];
          if (!t.defined()) continue;
          auto d = t.data().subspan(i * h, h);
          ev.embeddings.push_back({batch.ids[i], m, inv, std::vector<float>(d.begin(), d.end())});
        }
      }
      AttentionRecord rec{batch.ids[i], rows, {}};
      for (std::size_t j = 0; j < rows * rows; ++j) {
        rec.matrix.push_back(att[i * rows * rows + j]);
      }
      ev.attention.push_back(std::move(rec));
    }
  }
  for (double& v : ev.mean_attention) v /= double(split.size());

  if (cfg.task == TaskKind::regression) {
    ev.metrics = regression_bundle(ev.outputs, ev.labels);
  } else {
    ev.metrics = classification_bundle(ev.outputs, ev.labels, cfg.num_classes);
  }
  return ev;
}

}  // namespace misa
