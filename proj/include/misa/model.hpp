#pragma once

// Variant-aware model: utterance encoders, subspace encoders, decoder,
// attention fusion and prediction head over one shared ParameterStore.

#include <array>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "misa/config.hpp"
#include "misa/data.hpp"
#include "misa/encoders.hpp"
#include "misa/fusion.hpp"
#include "misa/losses.hpp"
#include "misa/tensor.hpp"

namespace misa {

// One row of the fusion matrix.
struct FusionRow {
  Modality modality;
  bool invariant;

  std::string label() const {
    return std::string(invariant ? "c_" : "p_") + tag(modality);
  }
};

template <typename T>
struct ForwardResult {
  BatchRepresentations<T> reps;
  std::vector<FusionRow> rows;
  BasicTensor<T> fusion_input;  // M, [N, rows, d_h]
  BasicTensor<T> fused;         // M-bar
  BasicTensor<T> attention;     // head-averaged weights [N, rows, rows]
  BasicTensor<T> joint;         // h_out, [N, rows * d_h]
  BasicTensor<T> prediction;    // [N, 1] or [N, C]
};

template <typename T>
class MisaModel {
 public:
  MisaModel(ModelConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), dropout_rng_(seed ^ 0x9e3779b97f4a7c15ull) {
    cfg_.validate();
    std::mt19937_64 init(seed);
    const std::size_t h = cfg_.hidden;
    for (Modality m : kModalities) {
      if (!cfg_.is_active(m)) continue;
      const std::size_t i = index(m);
      const std::string t(1, tag(m));
      if (m == Modality::language && cfg_.pooled_language) {
        pooled_[i] = Linear<T>::create(store_, "pooled." + t, cfg_.input_dims[i], h, init);
      } else {
        sequence_[i] = SequenceEncoder<T>::create(store_, "lstm." + t, cfg_.input_dims[i],
                                                  h, cfg_.lstm_layers, init);
      }
    }
    if (learns_invariant(cfg_.variant)) {
      shared_ = Linear<T>::create(store_, "shared", h, h, init);
    }
    if (learns_specific(cfg_.variant)) {
      for (Modality m : kModalities) {
        if (!cfg_.is_active(m)) continue;
        private_[index(m)] =
            Linear<T>::create(store_, std::string("private.") + tag(m), h, h, init);
      }
    }
    if (uses_reconstruction(cfg_.variant)) {
      decoder_ = Linear<T>::create(store_, "decoder", h, h, init);
    }
    attention_ = AttentionParams<T>::create(store_, h, cfg_.heads, init);
    head_ = PredictionHead<T>::create(store_, cfg_.fusion_rows() * h, h,
                                      cfg_.output_dim(), init);
  }

  MisaModel(const MisaModel&) = delete;
  MisaModel& operator=(const MisaModel&) = delete;
  MisaModel(MisaModel&&) = default;
  MisaModel& operator=(MisaModel&&) = default;

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& parameters() { return store_; }
  const ParameterStore<T>& parameters() const { return store_; }
  const AttentionParams<T>& attention_params() const { return attention_; }

  void seed_dropout(std::uint64_t seed) { dropout_rng_.seed(seed); }

  // Canonical order: invariant rows (l, v, a) then specific rows (l, v, a),
  // restricted to the variant and the active modalities.
  std::vector<FusionRow> fusion_layout() const {
    std::vector<FusionRow> rows;
    for (bool inv : {true, false}) {
      if (inv ? !fuses_invariant(cfg_.variant) : !fuses_specific(cfg_.variant)) {
        continue;
      }
      for (Modality m : kModalities) {
        if (cfg_.is_active(m)) rows.push_back({m, inv});
      }
    }
    return rows;
  }

  BasicTensor<T> encode_utterance(const Batch& batch, Modality m, Mode mode) {
    require_active(m);
    const std::size_t i = index(m);
    const auto& input = batch.input(m);
    if (input.dim != cfg_.input_dims[i]) {
      throw ShapeError(std::string("modality ") + tag(m) + ": feature dim " +
                       std::to_string(input.dim) + ", model expects " +
                       std::to_string(cfg_.input_dims[i]));
    }
    if (pooled_[i]) {
      return encode_pooled(pooled_features<T>(input), *pooled_[i],
                           cfg_.activation, cfg_.dropout, dropout_rng_, mode);
    }
    return encode_sequence(input, *sequence_[i], cfg_.activation, cfg_.dropout,
                           dropout_rng_, mode);
  }

  SubspacePair<T> encode_subspaces(const BasicTensor<T>& u, Modality m, Mode mode) {
    require_active(m);
    if (u.rank() != 2 || u.dim(1) != cfg_.hidden) {
      throw ShapeError("encode_subspaces: expected [N, " +
                       std::to_string(cfg_.hidden) + "], got " +
                       to_string(u.shape()));
    }
    SubspacePair<T> pair;
    pair.modality = m;
    if (shared_) pair.invariant = sigmoid((*shared_)(u));
    if (const auto& p = private_[index(m)]) {
      pair.specific = dropout(activate((*p)(u), cfg_.activation), cfg_.dropout,
                              dropout_rng_, mode == Mode::train);
    }
    return pair;
  }

  ForwardResult<T> forward(const Batch& batch, Mode mode) {
    if (batch.size() == 0) throw ShapeError("forward: empty batch");
    ForwardResult<T> out;
    for (Modality m : kModalities) {
      if (!cfg_.is_active(m)) continue;
      const std::size_t i = index(m);
      auto u = encode_utterance(batch, m, mode);
      auto pair = encode_subspaces(u, m, mode);
      out.reps.utterance[i] = u;
      out.reps.invariant[i] = pair.invariant;
      out.reps.specific[i] = pair.specific;
      if (decoder_) out.reps.reconstruction[i] = decode(pair, *decoder_);
    }
    out.rows = fusion_layout();
    std::vector<BasicTensor<T>> stacked;
    for (const auto& row : out.rows) {
      const std::size_t i = index(row.modality);
      stacked.push_back(row.invariant ? out.reps.invariant[i] : out.reps.specific[i]);
    }
    out.fusion_input = stack_rows(stacked);
    auto attended = multihead_self_attention(out.fusion_input, attention_);
    out.fused = attended.output;
    out.attention = attended.mean_weights;
    out.joint = fuse(out.fused);
    out.prediction = predict(out.joint, head_, cfg_.activation, cfg_.dropout,
                             dropout_rng_, mode);
    return out;
  }

  LossTerms<T> loss(const ForwardResult<T>& fwd, const Batch& batch,
                    const LossWeights& w, const CmdConfig& cmd_cfg) const {
    return composite_loss(fwd.reps, fwd.prediction, batch.labels, cfg_.task,
                          cfg_.variant, w, cmd_cfg);
  }

 private:
  void require_active(Modality m) const {
    if (!cfg_.is_active(m)) {
      throw ConfigError(std::string("modality ") + tag(m) +
                        " is not part of this model");
    }
  }

  ModelConfig cfg_;
  ParameterStore<T> store_;
  std::array<std::optional<SequenceEncoder<T>>, 3> sequence_;
  std::array<std::optional<Linear<T>>, 3> pooled_;
  std::optional<Linear<T>> shared_;
  std::array<std::optional<Linear<T>>, 3> private_;
  std::optional<Linear<T>> decoder_;
  AttentionParams<T> attention_;
  PredictionHead<T> head_;
  std::mt19937_64 dropout_rng_;
};

// Builds the architecture for cfg.variant.
template <typename T = float>
MisaModel<T> build_variant(const ModelConfig& cfg, std::uint64_t seed) {
  return MisaModel<T>(cfg, seed);
}

}  // namespace misa
