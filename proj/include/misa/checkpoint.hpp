#pragma once

// Binary checkpoint, little-endian throughout:
//   "MISAv1"                      6 bytes
//   u32 config_len, config text   resolved key = value echo
//   u32 tensor_count
//   per tensor: u32 name_len, name, u32 rank, u64 dims[rank], f32 values
// Values are row-major.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "misa/encoders.hpp"
#include "misa/io.hpp"

namespace misa {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct Checkpoint {
  std::string config_text;
  std::vector<NamedArray> tensors;
};

inline constexpr std::string_view kCheckpointMagic = "MISAv1";

template <typename T>
std::vector<NamedArray> snapshot(const ParameterStore<T>& store) {
  std::vector<NamedArray> out;
  for (const auto& [name, t] : store) {
    out.push_back({name, t.shape(),
                   std::vector<float>(t.data().begin(), t.data().end())});
  }
  return out;
}

// Copies values into an existing store; names and shapes must match exactly.
template <typename T>
void restore(ParameterStore<T>& store, const std::vector<NamedArray>& tensors) {
  if (tensors.size() != store.size()) {
    throw CheckpointError("checkpoint holds " + std::to_string(tensors.size()) +
                          " tensors, model has " + std::to_string(store.size()));
  }
  for (const auto& arr : tensors) {
    if (!store.contains(arr.name)) {
      throw CheckpointError("model has no parameter '" + arr.name + "'");
    }
    auto t = store.at(arr.name);
    if (t.shape() != arr.shape) {
      throw CheckpointError("parameter '" + arr.name + "' has shape " +
                            to_string(t.shape()) + ", checkpoint has " +
                            to_string(arr.shape));
    }
    auto dst = t.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(arr.values[i]);
  }
}

namespace detail {

template <typename U>
void put_le(std::string& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    out += static_cast<char>((static_cast<std::uint64_t>(value) >> (8 * i)) & 0xff);
  }
}

class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    }
    pos_ += sizeof(U);
    return static_cast<U>(v);
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& ckpt) {
  std::string out(kCheckpointMagic);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.config_text.size()));
  out += ckpt.config_text;
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& t : ckpt.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) detail::put_le<std::uint64_t>(out, d);
    for (float v : t.values) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  detail::ByteReader in(bytes);
  if (in.take(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw CheckpointError("not a MISAv1 checkpoint");
  }
  Checkpoint ckpt;
  ckpt.config_text = std::string(in.take(in.get<std::uint32_t>()));
  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray t;
    t.name = std::string(in.take(in.get<std::uint32_t>()));
    const auto rank = in.get<std::uint32_t>();
    std::size_t count_left = in.remaining() / sizeof(float);
    for (std::uint32_t r = 0; r < rank; ++r) {
      const auto d = static_cast<std::size_t>(in.get<std::uint64_t>());
      // Reject shapes that could not fit in the remaining bytes.
      if (d != 0 && d > count_left) throw CheckpointError("truncated checkpoint");
      if (d != 0) count_left /= d;
      t.shape.push_back(d);
    }
    t.values.resize(numel(t.shape));
    for (float& v : t.values) v = std::bit_cast<float>(in.get<std::uint32_t>());
    ckpt.tensors.push_back(std::move(t));
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint");
  return ckpt;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt), /*binary=*/true);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  try {
    return decode_checkpoint(read_file(path, /*binary=*/true));
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
}

}  // namespace misa
