#pragma once

// Multimodal examples, the synthetic generator, the on-disk interchange
// format, and padded batching.
//
// Dataset directory layout:
//   manifest.json   {"format":"misa-dataset-v1","task":..,"num_classes":..,
//                    "dims":{"l":..,"v":..,"a":..},"label_range":[lo,hi]}
//   train.jsonl, dev.jsonl, test.jsonl
//                   one record per line:
//                   {"id":"..","label":x,"l":[[..],..],"v":[[..]],"a":[[..]]}
// Feature rows are time steps. NaN/Infinity tokens are accepted by the parser
// so that such records can be rejected by id rather than as syntax errors.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "misa/config.hpp"
#include "misa/io.hpp"

namespace misa {

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// T x d feature matrix, row-major.
struct Sequence {
  std::size_t steps = 0;
  std::size_t dim = 0;
  std::vector<float> values;

  float at(std::size_t t, std::size_t k) const { return values[t * dim + k]; }
};

struct MultimodalExample {
  std::string id;
  double label = 0.0;  // score, or class index for classification
  std::array<Sequence, 3> sequences;

  const Sequence& sequence(Modality m) const { return sequences[index(m)]; }
};

struct DatasetManifest {
  TaskKind task = TaskKind::regression;
  std::size_t num_classes = 2;
  std::array<std::size_t, 3> dims = {0, 0, 0};
  double label_min = -3.0;
  double label_max = 3.0;
};

struct DatasetSplits {
  DatasetManifest manifest;
  std::vector<MultimodalExample> train, dev, test;

  const std::vector<MultimodalExample>& split(std::string_view name) const {
    if (name == "train") return train;
    if (name == "dev" || name == "valid" || name == "val") return dev;
    if (name == "test") return test;
    throw DatasetError("unknown split '" + std::string(name) + "'");
  }
};

// Latent model: each example draws an affect scalar z and per-modality style
// vectors s_m. Modality m observes A_m [shared_m * z' (+) s_m] + b_m with
// per-step latent jitter and additive Gaussian noise, where z' is z rescaled
// to [-1, 1] and A_m, b_m are fixed per dataset.
struct SynthConfig {
  std::size_t n_train = 256;
  std::size_t n_dev = 64;
  std::size_t n_test = 64;
  std::size_t min_steps = 4;
  std::size_t max_steps = 8;
  std::array<std::size_t, 3> dims = {16, 8, 8};
  std::array<double, 3> shared_strength = {1.0, 1.0, 1.0};
  std::array<double, 3> private_strength = {1.0, 1.0, 1.0};
  std::size_t private_dim = 3;
  double noise = 0.1;
  double jitter = 0.05;
  TaskKind task = TaskKind::regression;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  void validate() const {
    if (min_steps < 1 || max_steps < min_steps) {
      throw ConfigError("synthetic step range must satisfy 1 <= min <= max");
    }
    for (std::size_t i = 0; i < 3; ++i) {
      if (dims[i] < 1) throw ConfigError("synthetic dims must be >= 1");
      if (!(shared_strength[i] >= 0.0) || !(private_strength[i] >= 0.0)) {
        throw ConfigError("synthetic strengths must be >= 0");
      }
    }
    if (!(noise >= 0.0) || !(jitter >= 0.0)) {
      throw ConfigError("synthetic noise scales must be >= 0");
    }
    if (task == TaskKind::classification && num_classes < 2) {
      throw ConfigError("classification needs at least 2 classes");
    }
  }
};

inline DatasetSplits generate_synthetic(const SynthConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const std::size_t latent = 1 + cfg.private_dim;

  std::array<std::vector<double>, 3> maps;
  std::array<std::vector<double>, 3> offsets;
  for (std::size_t m = 0; m < 3; ++m) {
    maps[m].resize(cfg.dims[m] * latent);
    for (double& a : maps[m]) a = gauss(rng) / std::sqrt(double(latent));
    offsets[m].resize(cfg.dims[m]);
    for (double& b : offsets[m]) b = 0.1 * gauss(rng);
  }

  DatasetSplits out;
  out.manifest.task = cfg.task;
  out.manifest.num_classes = cfg.num_classes;
  out.manifest.dims = cfg.dims;
  if (cfg.task == TaskKind::regression) {
    out.manifest.label_min = -3.0;
    out.manifest.label_max = 3.0;
  } else {
    out.manifest.label_min = 0.0;
    out.manifest.label_max = double(cfg.num_classes - 1);
  }

  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_int_distribution<std::size_t> steps(cfg.min_steps,
                                                   cfg.max_steps);
  auto draw = [&](const std::string& prefix, std::size_t n) {
    std::vector<MultimodalExample> split;
    split.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      MultimodalExample ex;
      char id[64];
      std::snprintf(id, sizeof id, "%s-%05zu", prefix.c_str(), i);
      ex.id = id;
      const double z = unit(rng);
      if (cfg.task == TaskKind::regression) {
        ex.label = 3.0 * z;
      } else {
        auto cls = static_cast<std::size_t>((z + 1.0) / 2.0 * cfg.num_classes);
        ex.label = double(std::min(cls, cfg.num_classes - 1));
      }
      for (std::size_t m = 0; m < 3; ++m) {
        std::vector<double> base(latent);
        base[0] = cfg.shared_strength[m] * z;
        for (std::size_t k = 1; k < latent; ++k) {
          base[k] = cfg.private_strength[m] * gauss(rng);
        }
        Sequence& seq = ex.sequences[m];
        seq.dim = cfg.dims[m];
        seq.steps = steps(rng);
        seq.values.resize(seq.steps * seq.dim);
        std::vector<double> lat(latent);
        for (std::size_t t = 0; t < seq.steps; ++t) {
          for (std::size_t k = 0; k < latent; ++k) {
            lat[k] = base[k] + cfg.jitter * gauss(rng);
          }
          for (std::size_t d = 0; d < seq.dim; ++d) {
            double v = offsets[m][d];
            for (std::size_t k = 0; k < latent; ++k) {
              v += maps[m][d * latent + k] * lat[k];
            }
            v += cfg.noise * gauss(rng);
            seq.values[t * seq.dim + d] = static_cast<float>(v);
          }
        }
      }
      split.push_back(std::move(ex));
    }
    return split;
  };
  out.train = draw("train", cfg.n_train);
  out.dev = draw("dev", cfg.n_dev);
  out.test = draw("test", cfg.n_test);
  return out;
}

// ---------------------------------------------------------------------------
// Interchange format

namespace detail {

// Rewrites bare NaN / Infinity / -Infinity tokens to null outside strings.
inline std::string neutralize_nonfinite(const std::string& line) {
  std::string out;
  out.reserve(line.size());
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (in_string) {
      out += c;
      if (c == '\\' && i + 1 < line.size()) out += line[++i];
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') {
      in_string = true;
      out += c;
    } else if (line.compare(i, 3, "NaN") == 0) {
      out += "null";
      i += 2;
    } else if (line.compare(i, 9, "-Infinity") == 0) {
      out += "null";
      i += 8;
    } else if (line.compare(i, 8, "Infinity") == 0) {
      out += "null";
      i += 7;
    } else {
      out += c;
    }
  }
  return out;
}

inline void validate_example(const MultimodalExample& ex,
                             const DatasetManifest& manifest) {
  if (!std::isfinite(ex.label)) {
    throw DatasetError("example '" + ex.id + "': non-finite label");
  }
  if (manifest.task == TaskKind::classification) {
    if (ex.label != std::floor(ex.label) || ex.label < 0 ||
        ex.label >= double(manifest.num_classes)) {
      throw DatasetError("example '" + ex.id + "': invalid class label");
    }
  }
  for (Modality m : kModalities) {
    const Sequence& s = ex.sequence(m);
    if (s.steps < 1) {
      throw DatasetError("example '" + ex.id + "': modality " +
                         std::string(1, tag(m)) + " has no time steps");
    }
    if (s.dim != manifest.dims[index(m)]) {
      throw DatasetError("example '" + ex.id + "': modality " +
                         std::string(1, tag(m)) + " has dim " +
                         std::to_string(s.dim) + ", manifest says " +
                         std::to_string(manifest.dims[index(m)]));
    }
    for (float v : s.values) {
      if (!std::isfinite(v)) {
        throw DatasetError("example '" + ex.id + "': non-finite feature in " +
                           std::string(1, tag(m)));
      }
    }
  }
}

inline MultimodalExample parse_record(const std::string& line,
                                      const DatasetManifest& manifest) {
  const auto j = nlohmann::json::parse(neutralize_nonfinite(line));
  MultimodalExample ex;
  ex.id = j.at("id").get<std::string>();
  const auto& label = j.at("label");
  ex.label = label.is_null() ? NAN : label.get<double>();
  for (Modality m : kModalities) {
    const auto key = std::string(1, tag(m));
    if (!j.contains(key)) {
      throw DatasetError("example '" + ex.id + "': missing modality " + key);
    }
    const auto& rows = j.at(key);
    if (!rows.is_array()) {
      throw DatasetError("example '" + ex.id + "': modality " + key +
                         " is not a list of rows");
    }
    Sequence& seq = ex.sequences[index(m)];
    seq.steps = rows.size();
    seq.dim = rows.empty() ? manifest.dims[index(m)] : rows.front().size();
    for (const auto& row : rows) {
      if (!row.is_array() || row.size() != seq.dim) {
        throw DatasetError("example '" + ex.id + "': ragged rows in " + key);
      }
      for (const auto& v : row) {
        seq.values.push_back(v.is_null() ? NAN : v.get<float>());
      }
    }
  }
  return ex;
}

inline void append_float(std::string& out, double v, const char* fmt) {
  char buf[40];
  std::snprintf(buf, sizeof buf, fmt, v);
  out += buf;
}

inline std::string format_record(const MultimodalExample& ex) {
  std::string out = "{\"id\":" + nlohmann::json(ex.id).dump() + ",\"label\":";
  append_float(out, ex.label, "%.17g");
  for (Modality m : kModalities) {
    const Sequence& s = ex.sequence(m);
    out += ",\"";
    out += tag(m);
    out += "\":[";
    for (std::size_t t = 0; t < s.steps; ++t) {
      out += t ? ",[" : "[";
      for (std::size_t k = 0; k < s.dim; ++k) {
        if (k) out += ',';
        append_float(out, s.at(t, k), "%.9g");
      }
      out += ']';
    }
    out += ']';
  }
  out += '}';
  return out;
}

}  // namespace detail

inline void save_dataset(const DatasetSplits& data,
                         const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest = {
      {"format", "misa-dataset-v1"},
      {"task", std::string(name(data.manifest.task))},
      {"num_classes", data.manifest.num_classes},
      {"dims",
       {{"l", data.manifest.dims[0]},
        {"v", data.manifest.dims[1]},
        {"a", data.manifest.dims[2]}}},
      {"label_range", {data.manifest.label_min, data.manifest.label_max}},
  };
  write_file_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
  const std::pair<const char*, const std::vector<MultimodalExample>*> splits[] =
      {{"train", &data.train}, {"dev", &data.dev}, {"test", &data.test}};
  for (const auto& [split, examples] : splits) {
    std::string text;
    for (const auto& ex : *examples) {
      text += detail::format_record(ex);
      text += '\n';
    }
    write_file_atomic(dir / (std::string(split) + ".jsonl"), text);
  }
}

inline DatasetSplits load_dataset(const std::filesystem::path& dir) {
  DatasetSplits data;
  const auto manifest_path = dir / "manifest.json";
  std::ifstream mf(manifest_path);
  if (!mf) throw DatasetError("cannot open " + manifest_path.string());
  try {
    const auto j = nlohmann::json::parse(mf);
    data.manifest.task = task_from_name(j.at("task").get<std::string>());
    data.manifest.num_classes = j.value("num_classes", std::size_t{2});
    const auto& dims = j.at("dims");
    for (Modality m : kModalities) {
      data.manifest.dims[index(m)] =
          dims.at(std::string(1, tag(m))).get<std::size_t>();
    }
    if (j.contains("label_range")) {
      data.manifest.label_min = j["label_range"].at(0).get<double>();
      data.manifest.label_max = j["label_range"].at(1).get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw DatasetError(manifest_path.string() + ": " + e.what());
  }

  std::unordered_set<std::string> ids;
  auto read = [&](const char* split, std::vector<MultimodalExample>& out) {
    const auto path = dir / (std::string(split) + ".jsonl");
    std::ifstream in(path);
    if (!in) throw DatasetError("cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      MultimodalExample ex;
      const std::string where = path.string() + ":" + std::to_string(line_no);
      try {
        ex = detail::parse_record(line, data.manifest);
      } catch (const nlohmann::json::exception& e) {
        throw DatasetError(where + ": malformed record: " + e.what());
      } catch (const DatasetError& e) {
        throw DatasetError(where + ": " + e.what());
      }
      try {
        detail::validate_example(ex, data.manifest);
      } catch (const DatasetError& e) {
        throw DatasetError(where + ": " + e.what());
      }
      if (!ids.insert(ex.id).second) {
        throw DatasetError(where + ": duplicate id '" + ex.id + "'");
      }
      out.push_back(std::move(ex));
    }
  };
  read("train", data.train);
  read("dev", data.dev);
  read("test", data.test);
  return data;
}

// ---------------------------------------------------------------------------
// Batching

// Zero-padded [steps][batch][dim] block with true lengths per example.
struct PaddedSequence {
  std::size_t steps = 0;
  std::size_t batch = 0;
  std::size_t dim = 0;
  std::vector<float> values;
  std::vector<std::size_t> lengths;

  std::span<const float> step(std::size_t t) const {
    return std::span<const float>(values).subspan(t * batch * dim, batch * dim);
  }
};

struct Batch {
  std::vector<std::string> ids;
  std::vector<double> labels;
  std::array<PaddedSequence, 3> inputs;

  std::size_t size() const { return ids.size(); }
  const PaddedSequence& input(Modality m) const { return inputs[index(m)]; }
};

inline Batch make_batch(std::span<const MultimodalExample* const> examples) {
  Batch batch;
  const std::size_t n = examples.size();
  for (const auto* ex : examples) {
    batch.ids.push_back(ex->id);
    batch.labels.push_back(ex->label);
  }
  for (Modality m : kModalities) {
    PaddedSequence& p = batch.inputs[index(m)];
    p.batch = n;
    p.dim = n ? examples.front()->sequence(m).dim : 0;
    for (const auto* ex : examples) {
      p.steps = std::max(p.steps, ex->sequence(m).steps);
      p.lengths.push_back(ex->sequence(m).steps);
    }
    p.values.assign(p.steps * n * p.dim, 0.0f);
    for (std::size_t i = 0; i < n; ++i) {
      const Sequence& s = examples[i]->sequence(m);
      if (s.dim != p.dim) {
        throw DatasetError("example '" + examples[i]->id +
                           "': inconsistent dim for modality " + tag(m));
      }
      for (std::size_t t = 0; t < s.steps; ++t) {
        std::copy_n(s.values.data() + t * s.dim, s.dim,
                    p.values.data() + (t * n + i) * p.dim);
      }
    }
  }
  return batch;
}

inline Batch make_batch(const MultimodalExample& example) {
  const MultimodalExample* one[] = {&example};
  return make_batch(one);
}

// Deterministic per (seed, epoch); the final batch may be partial.
inline std::vector<Batch> batch_iter(
    const std::vector<MultimodalExample>& split, std::size_t batch_size,
    std::uint64_t seed, std::size_t epoch, bool shuffle = true) {
  if (batch_size == 0) throw ConfigError("batch size must be >= 1");
  std::vector<const MultimodalExample*> order;
  order.reserve(split.size());
  for (const auto& ex : split) order.push_back(&ex);
  if (shuffle) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed),
                      static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(epoch), 0x5eedu};
    std::mt19937_64 rng(seq);
    std::shuffle(order.begin(), order.end(), rng);
  }
  std::vector<Batch> batches;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const std::size_t count = std::min(batch_size, order.size() - start);
    batches.push_back(make_batch(
        std::span<const MultimodalExample* const>(order).subspan(start, count)));
  }
  return batches;
}

}  // namespace misa
