#pragma once

// Small helpers shared by the test binaries.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "misa.hpp"

namespace misa::testing {

template <typename T = double>
BasicTensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0,
                             double hi = 1.0, bool requires_grad = false) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> v(numel(shape));
  for (T& x : v) x = static_cast<T>(dist(rng));
  return BasicTensor<T>(std::move(shape), std::move(v), requires_grad);
}

inline std::vector<std::vector<double>> random_matrix(std::size_t rows, std::size_t cols,
                                                      std::mt19937_64& rng,
                                                      double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<std::vector<double>> m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (double& x : r) x = dist(rng);
  return m;
}

template <typename T = double>
BasicTensor<T> to_tensor(const std::vector<std::vector<double>>& m) {
  std::vector<T> v;
  for (const auto& r : m) v.insert(v.end(), r.begin(), r.end());
  return BasicTensor<T>({m.size(), m.empty() ? 0 : m[0].size()}, std::move(v));
}

// Small synthetic configuration that trains in well under a second per epoch.
inline SynthConfig tiny_synth(TaskKind task = TaskKind::regression, std::uint64_t seed = 1) {
  SynthConfig s;
  s.n_train = 32;
  s.n_dev = 16;
  s.n_test = 16;
  s.min_steps = 2;
  s.max_steps = 5;
  s.dims = {6, 4, 5};
  s.task = task;
  s.seed = seed;
  return s;
}

inline ModelConfig tiny_model(const SynthConfig& s, Variant v = Variant::full) {
  ModelConfig m;
  m.hidden = 8;
  m.input_dims = s.dims;
  m.heads = 2;
  m.lstm_layers = 2;
  m.dropout = 0.0;
  m.task = s.task;
  m.num_classes = s.num_classes;
  m.variant = v;
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("misa_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace misa::testing
