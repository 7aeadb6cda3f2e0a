#pragma once

// Resolved run configuration: preset values, then a key-value file, then
// explicit overrides. The echo lists every key so that feeding it back with
// `--config` reproduces the run exactly.

#include <array>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "misa/config.hpp"
#include "misa/data.hpp"
#include "misa/io.hpp"

namespace misa {

struct RunConfig {
  std::string preset = "mosi";
  ModelConfig model;
  TrainConfig train;
  std::filesystem::path dataset;  // empty: synthetic data
  SynthConfig synth;

  bool synthetic() const { return dataset.empty(); }
};

// Keys of the per-dataset hyper-parameter table; preset `none` must set all.
inline const std::array<std::string_view, 10> kTableKeys = {
    "cmd_k", "activation", "batch_size", "gradient_clip", "alpha",
    "beta",  "gamma",      "dropout",    "d_h",           "learning_rate"};

inline KeyValues preset_values(std::string_view preset) {
  if (preset == "mosi") {
    return {{"cmd_k", "5"},       {"activation", "relu"}, {"batch_size", "64"},
            {"gradient_clip", "1"}, {"alpha", "1"},       {"beta", "0.3"},
            {"gamma", "1"},       {"dropout", "0.5"},     {"d_h", "128"},
            {"learning_rate", "0.0001"}, {"task", "regression"}};
  }
  if (preset == "mosei") {
    return {{"cmd_k", "5"},       {"activation", "leaky_relu"}, {"batch_size", "16"},
            {"gradient_clip", "1"}, {"alpha", "0.7"},           {"beta", "0.3"},
            {"gamma", "0.7"},     {"dropout", "0.1"},           {"d_h", "128"},
            {"learning_rate", "0.0001"}, {"task", "regression"}};
  }
  if (preset == "urfunny") {
    return {{"cmd_k", "5"},       {"activation", "tanh"}, {"batch_size", "32"},
            {"gradient_clip", "1"}, {"alpha", "0.7"},     {"beta", "1"},
            {"gamma", "1"},       {"dropout", "0.1"},     {"d_h", "128"},
            {"learning_rate", "0.0001"}, {"task", "classification"},
            {"num_classes", "2"}};
  }
  if (preset == "none") return {};
  throw ConfigError("unknown preset '" + std::string(preset) +
                    "' (expected mosi, mosei, urfunny or none)");
}

namespace detail {

inline double parse_real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || !std::isfinite(x)) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a finite number");
  }
  return x;
}

template <typename U>
U parse_uint(const std::string& key, const std::string& v) {
  U x{};
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), x);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key '" + key + "': '" + v + "' is not a non-negative integer");
  }
  return x;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

inline std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto end = comma == std::string::npos ? v.size() : comma;
    auto item = trim(v.substr(start, end - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename U, typename Parse>
std::array<U, 3> parse_triple(const std::string& key, const std::string& v, Parse parse) {
  const auto items = split_list(v);
  if (items.size() != 3) {
    throw ConfigError("key '" + key + "': expected three comma-separated values (l,v,a)");
  }
  return {parse(key, items[0]), parse(key, items[1]), parse(key, items[2])};
}

template <typename U>
std::string join_triple(const std::array<U, 3>& v) {
  auto fmt = [](U x) {
    if constexpr (std::is_floating_point_v<U>) return format_double(x);
    else return std::to_string(x);
  };
  return fmt(v[0]) + "," + fmt(v[1]) + "," + fmt(v[2]);
}

}  // namespace detail

// `kv` holds everything above the preset layer, optionally including
// `preset` itself. Unknown keys are rejected.
inline RunConfig resolve_run_config(const KeyValues& overrides) {
  RunConfig rc;
  if (auto it = overrides.find("preset"); it != overrides.end()) rc.preset = it->second;
  KeyValues kv = preset_values(rc.preset);
  if (rc.preset == "none") {
    std::string missing;
    for (auto key : kTableKeys) {
      if (!overrides.count(std::string(key))) {
        missing += (missing.empty() ? "" : ", ") + std::string(key);
      }
    }
    if (!missing.empty()) {
      throw ConfigError("preset 'none' needs explicit values for: " + missing);
    }
  }
  for (const auto& [k, v] : overrides) kv[k] = v;

  using detail::parse_real;
  auto size = [](const std::string& k, const std::string& v) {
    return detail::parse_uint<std::size_t>(k, v);
  };
  bool synth_seed_set = false;
  auto& m = rc.model;
  auto& t = rc.train;
  auto& s = rc.synth;
  for (const auto& [k, v] : kv) {
    if (k == "preset") continue;
    else if (k == "seed") t.seed = detail::parse_uint<std::uint64_t>(k, v);
    else if (k == "variant") m.variant = variant_from_name(v);
    else if (k == "drop_modality") {
      m.active = {true, true, true};
      if (v != "none" && !v.empty()) {
        for (const auto& item : detail::split_list(v)) {
          m.active[index(modality_from_tag(item))] = false;
        }
      }
    }
    else if (k == "task") m.task = task_from_name(v);
    else if (k == "num_classes") m.num_classes = size(k, v);
    else if (k == "cmd_k") t.cmd.order = static_cast<int>(size(k, v));
    else if (k == "cmd_lower") t.cmd.lower = parse_real(k, v);
    else if (k == "cmd_upper") t.cmd.upper = parse_real(k, v);
    else if (k == "cmd_scale_by_width") t.cmd.scale_by_width = detail::parse_bool(k, v);
    else if (k == "activation") m.activation = activation_from_name(v);
    else if (k == "batch_size") t.batch_size = size(k, v);
    else if (k == "gradient_clip") t.grad_clip = parse_real(k, v);
    else if (k == "alpha") t.weights.alpha = parse_real(k, v);
    else if (k == "beta") t.weights.beta = parse_real(k, v);
    else if (k == "gamma") t.weights.gamma = parse_real(k, v);
    else if (k == "dropout") m.dropout = parse_real(k, v);
    else if (k == "d_h") m.hidden = size(k, v);
    else if (k == "learning_rate") t.learning_rate = parse_real(k, v);
    else if (k == "heads") m.heads = size(k, v);
    else if (k == "lstm_layers") m.lstm_layers = size(k, v);
    else if (k == "pooled_language") m.pooled_language = detail::parse_bool(k, v);
    else if (k == "patience") t.patience = size(k, v);
    else if (k == "max_epochs") t.max_epochs = size(k, v);
    else if (k == "lr_decay") t.lr_decay = parse_real(k, v);
    else if (k == "dataset") rc.dataset = v;
    else if (k == "synth_n_train") s.n_train = size(k, v);
    else if (k == "synth_n_dev") s.n_dev = size(k, v);
    else if (k == "synth_n_test") s.n_test = size(k, v);
    else if (k == "synth_min_steps") s.min_steps = size(k, v);
    else if (k == "synth_max_steps") s.max_steps = size(k, v);
    else if (k == "synth_dims") s.dims = detail::parse_triple<std::size_t>(k, v, size);
    else if (k == "synth_shared") s.shared_strength = detail::parse_triple<double>(k, v, parse_real);
    else if (k == "synth_private") s.private_strength = detail::parse_triple<double>(k, v, parse_real);
    else if (k == "synth_private_dim") s.private_dim = size(k, v);
    else if (k == "synth_noise") s.noise = parse_real(k, v);
    else if (k == "synth_jitter") s.jitter = parse_real(k, v);
    else if (k == "synth_seed") {
      s.seed = detail::parse_uint<std::uint64_t>(k, v);
      synth_seed_set = true;
    }
    else throw ConfigError("unknown config key '" + k + "'");
  }
  if (!synth_seed_set) s.seed = t.seed;
  s.task = m.task;
  s.num_classes = m.num_classes;
  if (t.cmd.order < 1) throw ConfigError("cmd_k must be >= 1");
  m.validate();
  t.validate();
  if (rc.synthetic()) {
    s.validate();
    m.input_dims = s.dims;
  }
  return rc;
}

inline KeyValues echo_values(const RunConfig& rc) {
  const auto& m = rc.model;
  const auto& t = rc.train;
  const auto& s = rc.synth;
  std::string dropped;
  for (Modality mod : kModalities) {
    if (!m.is_active(mod)) dropped += (dropped.empty() ? "" : ",") + std::string(1, tag(mod));
  }
  KeyValues kv{
      {"preset", rc.preset},
      {"seed", std::to_string(t.seed)},
      {"variant", std::string(name(m.variant))},
      {"drop_modality", dropped.empty() ? "none" : dropped},
      {"task", std::string(name(m.task))},
      {"num_classes", std::to_string(m.num_classes)},
      {"cmd_k", std::to_string(t.cmd.order)},
      {"cmd_lower", format_double(t.cmd.lower)},
      {"cmd_upper", format_double(t.cmd.upper)},
      {"cmd_scale_by_width", t.cmd.scale_by_width ? "true" : "false"},
      {"activation", std::string(name(m.activation))},
      {"batch_size", std::to_string(t.batch_size)},
      {"gradient_clip", format_double(t.grad_clip)},
      {"alpha", format_double(t.weights.alpha)},
      {"beta", format_double(t.weights.beta)},
      {"gamma", format_double(t.weights.gamma)},
      {"dropout", format_double(m.dropout)},
      {"d_h", std::to_string(m.hidden)},
      {"learning_rate", format_double(t.learning_rate)},
      {"heads", std::to_string(m.heads)},
      {"lstm_layers", std::to_string(m.lstm_layers)},
      {"pooled_language", m.pooled_language ? "true" : "false"},
      {"patience", std::to_string(t.patience)},
      {"max_epochs", std::to_string(t.max_epochs)},
      {"lr_decay", format_double(t.lr_decay)},
      {"dataset", rc.dataset.string()},
  };
  if (rc.synthetic()) {
    kv["synth_n_train"] = std::to_string(s.n_train);
    kv["synth_n_dev"] = std::to_string(s.n_dev);
    kv["synth_n_test"] = std::to_string(s.n_test);
    kv["synth_min_steps"] = std::to_string(s.min_steps);
    kv["synth_max_steps"] = std::to_string(s.max_steps);
    kv["synth_dims"] = detail::join_triple(s.dims);
    kv["synth_shared"] = detail::join_triple(s.shared_strength);
    kv["synth_private"] = detail::join_triple(s.private_strength);
    kv["synth_private_dim"] = std::to_string(s.private_dim);
    kv["synth_noise"] = format_double(s.noise);
    kv["synth_jitter"] = format_double(s.jitter);
    kv["synth_seed"] = std::to_string(s.seed);
  }
  return kv;
}

inline std::string echo_text(const RunConfig& rc) {
  return format_key_values(echo_values(rc));
}

// Loads or generates the data and fixes the model's input dims to match.
inline DatasetSplits load_run_data(RunConfig& rc) {
  if (rc.synthetic()) {
    auto data = generate_synthetic(rc.synth);
    rc.model.input_dims = data.manifest.dims;
    return data;
  }
  auto data = load_dataset(rc.dataset);
  if (data.manifest.task != rc.model.task) {
    throw ConfigError("dataset task is " + std::string(name(data.manifest.task)) +
                      " but the run is configured for " +
                      std::string(name(rc.model.task)));
  }
  if (rc.model.task == TaskKind::classification &&
      data.manifest.num_classes != rc.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.manifest.num_classes) +
                      " classes, run expects " + std::to_string(rc.model.num_classes));
  }
  rc.model.input_dims = data.manifest.dims;
  return data;
}

}  // namespace misa
