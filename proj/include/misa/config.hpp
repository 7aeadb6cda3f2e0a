#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace misa {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Modality : std::size_t { language = 0, visual = 1, acoustic = 2 };

inline constexpr std::array<Modality, 3> kModalities = {
    Modality::language, Modality::visual, Modality::acoustic};

inline constexpr std::size_t index(Modality m) {
  return static_cast<std::size_t>(m);
}

inline constexpr char tag(Modality m) {
  constexpr char tags[] = {'l', 'v', 'a'};
  return tags[index(m)];
}

inline Modality modality_from_tag(std::string_view t) {
  if (t == "l" || t == "language") return Modality::language;
  if (t == "v" || t == "visual") return Modality::visual;
  if (t == "a" || t == "acoustic") return Modality::acoustic;
  throw ConfigError("unknown modality '" + std::string(t) + "'");
}

// Unordered pairs in the order the pairwise losses enumerate them.
inline constexpr std::array<std::array<Modality, 2>, 3> kModalityPairs = {{
    {Modality::language, Modality::acoustic},
    {Modality::language, Modality::visual},
    {Modality::acoustic, Modality::visual},
}};

enum class Activation { relu, leaky_relu, tanh };

inline std::string_view name(Activation a) {
  switch (a) {
    case Activation::relu: return "relu";
    case Activation::leaky_relu: return "leaky_relu";
    default: return "tanh";
  }
}

inline Activation activation_from_name(std::string_view s) {
  if (s == "relu" || s == "ReLU") return Activation::relu;
  if (s == "leaky_relu" || s == "leakyrelu" || s == "LeakyReLU") {
    return Activation::leaky_relu;
  }
  if (s == "tanh" || s == "Tanh") return Activation::tanh;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

enum class TaskKind { regression, classification };

inline std::string_view name(TaskKind k) {
  return k == TaskKind::regression ? "regression" : "classification";
}

inline TaskKind task_from_name(std::string_view s) {
  if (s == "regression") return TaskKind::regression;
  if (s == "classification") return TaskKind::classification;
  throw ConfigError("unknown task kind '" + std::string(s) + "'");
}

// full: shared + private encoders, six-row fusion.
// base: one private encoder per modality, no subspace losses.
// inv: shared encoder only. sfusion/ifusion: full learning, fuse one subspace.
enum class Variant { full, base, inv, sfusion, ifusion };

inline std::string_view name(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::base: return "base";
    case Variant::inv: return "inv";
    case Variant::sfusion: return "sFusion";
    default: return "iFusion";
  }
}

inline Variant variant_from_name(std::string_view s) {
  if (s == "full" || s == "misa") return Variant::full;
  if (s == "base") return Variant::base;
  if (s == "inv") return Variant::inv;
  if (s == "sFusion" || s == "sfusion") return Variant::sfusion;
  if (s == "iFusion" || s == "ifusion") return Variant::ifusion;
  throw ConfigError("unknown variant '" + std::string(s) + "'");
}

inline bool learns_invariant(Variant v) { return v != Variant::base; }
inline bool learns_specific(Variant v) { return v != Variant::inv; }
inline bool fuses_invariant(Variant v) {
  return v == Variant::full || v == Variant::inv || v == Variant::ifusion;
}
inline bool fuses_specific(Variant v) {
  return v == Variant::full || v == Variant::base || v == Variant::sfusion;
}
inline bool uses_similarity(Variant v) { return learns_invariant(v); }
inline bool uses_difference(Variant v) {
  return learns_invariant(v) && learns_specific(v);
}
inline bool uses_reconstruction(Variant v) { return v != Variant::base; }

struct LossWeights {
  double alpha = 1.0;
  double beta = 0.3;
  double gamma = 1.0;

  void validate() const {
    for (double w : {alpha, beta, gamma}) {
      if (!std::isfinite(w) || w < 0.0) {
        throw ConfigError("loss weights must be finite and non-negative");
      }
    }
  }
};

struct CmdConfig {
  int order = 5;  // K
  double lower = 0.0;
  double upper = 1.0;
  bool scale_by_width = true;

  void validate() const {
    if (order < 1) throw ConfigError("cmd order K must be >= 1");
    if (!(upper > lower)) throw ConfigError("cmd interval must be non-empty");
  }
};

struct ModelConfig {
  std::size_t hidden = 128;  // d_h
  std::array<std::size_t, 3> input_dims = {768, 47, 74};
  std::array<bool, 3> active = {true, true, true};
  std::size_t heads = 2;
  std::size_t lstm_layers = 2;
  Activation activation = Activation::relu;
  double dropout = 0.5;
  TaskKind task = TaskKind::regression;
  std::size_t num_classes = 2;
  Variant variant = Variant::full;
  bool pooled_language = false;

  bool is_active(Modality m) const { return active[index(m)]; }
  std::size_t active_count() const {
    return std::size_t(active[0]) + active[1] + active[2];
  }
  std::size_t output_dim() const {
    return task == TaskKind::regression ? 1 : num_classes;
  }
  std::size_t fusion_rows() const {
    return active_count() *
           (std::size_t(fuses_invariant(variant)) + fuses_specific(variant));
  }

  void validate() const {
    if (hidden == 0) throw ConfigError("d_h must be >= 1");
    if (heads == 0) throw ConfigError("head count must be >= 1");
    if (lstm_layers == 0) throw ConfigError("lstm_layers must be >= 1");
    if (!(dropout >= 0.0 && dropout < 1.0)) {
      throw ConfigError("dropout must lie in [0, 1)");
    }
    if (active_count() == 0) throw ConfigError("no active modality");
    for (Modality m : kModalities) {
      if (is_active(m) && input_dims[index(m)] == 0) {
        throw ConfigError(std::string("input dim of modality ") + tag(m) +
                          " must be >= 1");
      }
    }
    if (task == TaskKind::classification && num_classes < 2) {
      throw ConfigError("classification needs at least 2 classes");
    }
  }
};

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 64;
  double grad_clip = 1.0;
  std::size_t patience = 6;
  std::size_t max_epochs = 50;
  double lr_decay = 0.96;
  std::uint64_t seed = 0;
  LossWeights weights;
  CmdConfig cmd;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
    if (batch_size == 0) throw ConfigError("batch size must be >= 1");
    if (!(grad_clip > 0.0)) throw ConfigError("gradient clip must be > 0");
    if (patience == 0) throw ConfigError("patience must be >= 1");
    if (max_epochs == 0) throw ConfigError("max_epochs must be >= 1");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) {
      throw ConfigError("lr_decay must lie in (0, 1]");
    }
    weights.validate();
    cmd.validate();
  }
};

}  // namespace misa
