#pragma once

// Utterance encoders (stacked bidirectional LSTM or pooled projection),
// subspace encoders, the shared decoder and the prediction head.

#include <array>
#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "misa/config.hpp"
#include "misa/data.hpp"
#include "misa/grad_check.hpp"
#include "misa/tensor.hpp"

namespace misa {

enum class Mode { train, eval };

// Named, ordered parameter tensors. Handles returned by add() alias the
// stored tensors, so layers and the store always see the same values.
template <typename T>
class ParameterStore {
 public:
  using Entry = std::pair<std::string, BasicTensor<T>>;

  BasicTensor<T> add(std::string name, Shape shape, std::vector<T> values) {
    if (index_.count(name)) {
      throw ConfigError("duplicate parameter '" + name + "'");
    }
    index_.emplace(name, entries_.size());
    entries_.emplace_back(std::move(name),
                          BasicTensor<T>(std::move(shape), std::move(values),
                                         /*requires_grad=*/true));
    return entries_.back().second;
  }

  bool contains(std::string_view name) const {
    return index_.count(std::string(name)) > 0;
  }
  const BasicTensor<T>& at(std::string_view name) const {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) {
      throw ConfigError("no parameter named '" + std::string(name) + "'");
    }
    return entries_[it->second].second;
  }

  std::size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // Total scalar count of parameters whose names start with `prefix`.
  std::size_t scalar_count(std::string_view prefix = {}) const {
    std::size_t n = 0;
    for (const auto& [name, t] : entries_) {
      if (std::string_view(name).substr(0, prefix.size()) == prefix) {
        n += t.size();
      }
    }
    return n;
  }

  void zero_grad() {
    for (auto& [name, t] : entries_) t.zero_grad();
  }

  NamedTensors<T> named() const { return {entries_.begin(), entries_.end()}; }

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T, typename Rng>
std::vector<T> uniform_init(std::size_t count, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<T> v(count);
  for (T& x : v) x = static_cast<T>(dist(rng));
  return v;
}

template <typename T>
BasicTensor<T> activate(const BasicTensor<T>& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x);
    default: return tanh(x);
  }
}

// y = x W + b, with W stored as [in, out].
template <typename T>
struct Linear {
  BasicTensor<T> weight;
  BasicTensor<T> bias;

  template <typename Rng>
  static Linear create(ParameterStore<T>& store, const std::string& prefix,
                       std::size_t in, std::size_t out, Rng& rng) {
    Linear l;
    l.weight = store.add(prefix + ".w", {in, out}, uniform_init<T>(in * out, in, rng));
    l.bias = store.add(prefix + ".b", {1, out}, std::vector<T>(out, T(0)));
    return l;
  }

  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }

  BasicTensor<T> operator()(const BasicTensor<T>& x) const {
    return add(matmul(x, weight), bias);
  }
};

// One direction of one LSTM layer; gate blocks ordered i, f, g, o.
template <typename T>
struct LstmDirection {
  BasicTensor<T> input_weight;      // [in, 4h]
  BasicTensor<T> recurrent_weight;  // [h, 4h]
  BasicTensor<T> bias;              // [1, 4h]

  template <typename Rng>
  static LstmDirection create(ParameterStore<T>& store,
                              const std::string& prefix, std::size_t in,
                              std::size_t hidden, Rng& rng) {
    LstmDirection d;
    d.input_weight = store.add(prefix + ".wx", {in, 4 * hidden},
                               uniform_init<T>(in * 4 * hidden, in, rng));
    d.recurrent_weight =
        store.add(prefix + ".wh", {hidden, 4 * hidden},
                  uniform_init<T>(hidden * 4 * hidden, hidden, rng));
    std::vector<T> b(4 * hidden, T(0));
    std::fill(b.begin() + hidden, b.begin() + 2 * hidden, T(1));  // forget
    d.bias = store.add(prefix + ".b", {1, 4 * hidden}, std::move(b));
    return d;
  }

  std::size_t hidden() const { return recurrent_weight.dim(0); }
};

namespace detail {

// Runs one direction over per-step inputs [N, in]. Steps at or beyond an
// example's length leave that example's state untouched, so padding never
// reaches the end states.
template <typename T>
std::vector<BasicTensor<T>> run_lstm(const std::vector<BasicTensor<T>>& xs,
                                     const LstmDirection<T>& p,
                                     std::span<const std::size_t> lengths,
                                     bool reverse,
                                     BasicTensor<T>& final_hidden) {
  const std::size_t steps = xs.size();
  const std::size_t n = lengths.size();
  const std::size_t h = p.hidden();
  auto state = BasicTensor<T>::zeros({n, h});
  auto cell = BasicTensor<T>::zeros({n, h});
  std::vector<BasicTensor<T>> outputs(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    auto gates = add(add(matmul(xs[t], p.input_weight),
                         matmul(state, p.recurrent_weight)),
                     p.bias);
    auto in_gate = sigmoid(slice(gates, 1, 0, h));
    auto forget_gate = sigmoid(slice(gates, 1, h, h));
    auto candidate = tanh(slice(gates, 1, 2 * h, h));
    auto out_gate = sigmoid(slice(gates, 1, 3 * h, h));
    auto next_cell = add(mul(forget_gate, cell), mul(in_gate, candidate));
    auto next_state = mul(out_gate, tanh(next_cell));

    bool all_live = true;
    std::vector<T> keep(n), hold(n);
    for (std::size_t i = 0; i < n; ++i) {
      const bool live = t < lengths[i];
      all_live = all_live && live;
      keep[i] = live ? T(1) : T(0);
      hold[i] = live ? T(0) : T(1);
    }
    if (all_live) {
      cell = next_cell;
      state = next_state;
    } else {
      BasicTensor<T> keep_mask({n, 1}, std::move(keep));
      BasicTensor<T> hold_mask({n, 1}, std::move(hold));
      cell = add(mul(keep_mask, next_cell), mul(hold_mask, cell));
      state = add(mul(keep_mask, next_state), mul(hold_mask, state));
    }
    outputs[t] = state;
  }
  final_hidden = state;
  return outputs;
}

template <typename T>
BasicTensor<T> step_input(const PaddedSequence& seq, std::size_t t) {
  auto v = seq.step(t);
  return BasicTensor<T>({seq.batch, seq.dim}, std::vector<T>(v.begin(), v.end()));
}

}  // namespace detail

// sLSTM: stacked bidirectional LSTM, then a dense layer over the top layer's
// forward and backward end states.
template <typename T>
struct SequenceEncoder {
  std::size_t input_dim = 0;
  std::vector<std::array<LstmDirection<T>, 2>> layers;
  Linear<T> projection;  // [2h, h]

  template <typename Rng>
  static SequenceEncoder create(ParameterStore<T>& store,
                                const std::string& prefix,
                                std::size_t input_dim, std::size_t hidden,
                                std::size_t depth, Rng& rng) {
    SequenceEncoder e;
    e.input_dim = input_dim;
    for (std::size_t l = 0; l < depth; ++l) {
      const std::size_t in = l == 0 ? input_dim : 2 * hidden;
      const std::string base = prefix + "." + std::to_string(l);
      e.layers.push_back({LstmDirection<T>::create(store, base + ".fwd", in, hidden, rng),
                          LstmDirection<T>::create(store, base + ".bwd", in, hidden, rng)});
    }
    e.projection = Linear<T>::create(store, prefix + ".proj", 2 * hidden, hidden, rng);
    return e;
  }
};

template <typename T, typename Rng>
BasicTensor<T> encode_sequence(const PaddedSequence& seq,
                               const SequenceEncoder<T>& enc,
                               Activation activation, double dropout_p,
                               Rng& rng, Mode mode) {
  if (seq.dim != enc.input_dim) {
    throw ShapeError("encode_sequence: feature dim " + std::to_string(seq.dim) +
                     " does not match encoder input dim " +
                     std::to_string(enc.input_dim));
  }
  if (seq.steps == 0 || seq.batch == 0) {
    throw ShapeError("encode_sequence: empty sequence batch");
  }
  for (std::size_t len : seq.lengths) {
    if (len == 0 || len > seq.steps) {
      throw ShapeError("encode_sequence: invalid sequence length");
    }
  }
  std::vector<BasicTensor<T>> inputs(seq.steps);
  for (std::size_t t = 0; t < seq.steps; ++t) {
    inputs[t] = detail::step_input<T>(seq, t);
  }
  BasicTensor<T> fwd_end, bwd_end;
  for (const auto& layer : enc.layers) {
    auto fwd = detail::run_lstm(inputs, layer[0], seq.lengths, false, fwd_end);
    auto bwd = detail::run_lstm(inputs, layer[1], seq.lengths, true, bwd_end);
    for (std::size_t t = 0; t < seq.steps; ++t) {
      inputs[t] = concat<T>({fwd[t], bwd[t]}, 1);
    }
  }
  auto u = activate(enc.projection(concat<T>({fwd_end, bwd_end}, 1)), activation);
  return dropout(u, dropout_p, rng, mode == Mode::train);
}

// Mean over each example's true time steps; [N, d].
template <typename T>
BasicTensor<T> pooled_features(const PaddedSequence& seq) {
  std::vector<T> out(seq.batch * seq.dim, T(0));
  for (std::size_t i = 0; i < seq.batch; ++i) {
    const std::size_t len = seq.lengths[i];
    for (std::size_t k = 0; k < seq.dim; ++k) {
      double acc = 0.0;
      for (std::size_t t = 0; t < len; ++t) {
        acc += seq.values[(t * seq.batch + i) * seq.dim + k];
      }
      out[i * seq.dim + k] = static_cast<T>(acc / double(len));
    }
  }
  return BasicTensor<T>({seq.batch, seq.dim}, std::move(out));
}

// Dense path for features that arrive already aggregated per utterance.
template <typename T, typename Rng>
BasicTensor<T> encode_pooled(const BasicTensor<T>& features,
                             const Linear<T>& projection,
                             Activation activation, double dropout_p, Rng& rng,
                             Mode mode) {
  if (features.rank() != 2 || features.dim(1) != projection.in_features()) {
    throw ShapeError("encode_pooled: expected [N, " +
                     std::to_string(projection.in_features()) + "], got " +
                     to_string(features.shape()));
  }
  auto u = activate(projection(features), activation);
  return dropout(u, dropout_p, rng, mode == Mode::train);
}

template <typename T>
struct SubspacePair {
  Modality modality = Modality::language;
  BasicTensor<T> invariant;  // undefined when the variant has no E_c
  BasicTensor<T> specific;   // undefined when the variant has no E_p
};

// D(h^c + h^p). A missing half contributes nothing.
template <typename T>
BasicTensor<T> decode(const SubspacePair<T>& pair, const Linear<T>& decoder) {
  BasicTensor<T> input;
  if (pair.invariant.defined() && pair.specific.defined()) {
    if (pair.invariant.shape() != pair.specific.shape()) {
      throw ShapeError("decode: subspace shapes differ");
    }
    input = add(pair.invariant, pair.specific);
  } else if (pair.invariant.defined()) {
    input = pair.invariant;
  } else if (pair.specific.defined()) {
    input = pair.specific;
  } else {
    throw ShapeError("decode: empty subspace pair");
  }
  return decoder(input);
}

// G: dense -> activation -> dropout -> dense.
template <typename T>
struct PredictionHead {
  Linear<T> hidden;
  Linear<T> output;

  template <typename Rng>
  static PredictionHead create(ParameterStore<T>& store, std::size_t in,
                               std::size_t width, std::size_t out, Rng& rng) {
    PredictionHead h;
    h.hidden = Linear<T>::create(store, "head.0", in, width, rng);
    h.output = Linear<T>::create(store, "head.1", width, out, rng);
    return h;
  }
};

template <typename T, typename Rng>
BasicTensor<T> predict(const BasicTensor<T>& joint,
                       const PredictionHead<T>& head, Activation activation,
                       double dropout_p, Rng& rng, Mode mode) {
  if (joint.rank() != 2 || joint.dim(1) != head.hidden.in_features()) {
    throw ShapeError("predict: joint vector has shape " +
                     to_string(joint.shape()) + ", head expects width " +
                     std::to_string(head.hidden.in_features()));
  }
  auto hidden = dropout(activate(head.hidden(joint), activation), dropout_p,
                        rng, mode == Mode::train);
  return head.output(hidden);
}

}  // namespace misa
