#pragma once

// Binary checkpoint container.
//
//   magic "CHGNCKPT" | u32 version | u64 config length | config JSON bytes
//   then per tensor until EOF:
//   u32 name length | name | u8 dtype (0 = f64, 1 = f32) | u32 rank | u64 dims[rank] | data
//
// All integers and floats are little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "chordgen/autograd.hpp"

namespace chordgen {

inline constexpr char kCheckpointMagic[8] = {'C', 'H', 'G', 'N', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f64 = 0, f32 = 1 };

template <class T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, double> || std::is_same_v<T, float>);
  return std::is_same_v<T, double> ? DType::f64 : DType::f32;
}

struct StoredTensor {
  std::string name;
  DType dtype = DType::f64;
  Tensor<double> value;  // f32 payloads are widened exactly
};

struct CheckpointFile {
  nlohmann::json config;
  std::vector<StoredTensor> tensors;

  const StoredTensor* find(const std::string& name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

namespace detail {

template <class U>
void put_le(std::string& out, U value) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  const Bits bits = std::bit_cast<Bits>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t& pos) {
  using Bits = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint8_t>>;
  if (pos + sizeof(U) > in.size()) throw Error(ErrorCode::format_error, "checkpoint truncated");
  Bits bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<Bits>(static_cast<Bits>(static_cast<unsigned char>(in[pos + i])) << (8 * i));
  }
  pos += sizeof(U);
  return std::bit_cast<U>(bits);
}

}  // namespace detail

inline std::string serialize_checkpoint(const CheckpointFile& file) {
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  const std::string config = file.config.dump();
  detail::put_le<std::uint64_t>(out, config.size());
  out += config;
  for (const auto& t : file.tensors) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    detail::put_le<std::uint8_t>(out, static_cast<std::uint8_t>(t.dtype));
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rank()));
    for (auto d : t.value.shape()) detail::put_le<std::uint64_t>(out, d);
    for (double v : t.value.values()) {
      if (t.dtype == DType::f64) {
        detail::put_le<double>(out, v);
      } else {
        detail::put_le<float>(out, static_cast<float>(v));
      }
    }
  }
  return out;
}

inline CheckpointFile parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) || std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw Error(ErrorCode::format_error, "not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::format_error, "unsupported checkpoint version " + std::to_string(version));
  }
  const auto config_len = detail::get_le<std::uint64_t>(bytes, pos);
  if (pos + config_len > bytes.size()) throw Error(ErrorCode::format_error, "checkpoint truncated in config");
  CheckpointFile file;
  try {
    file.config = nlohmann::json::parse(bytes.substr(pos, config_len));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format_error, std::string("checkpoint config: ") + e.what());
  }
  pos += config_len;
  while (pos < bytes.size()) {
    StoredTensor t;
    const auto name_len = detail::get_le<std::uint32_t>(bytes, pos);
    if (pos + name_len > bytes.size()) throw Error(ErrorCode::format_error, "checkpoint truncated in name");
    t.name = bytes.substr(pos, name_len);
    pos += name_len;
    const auto dtype = detail::get_le<std::uint8_t>(bytes, pos);
    if (dtype > 1) throw Error(ErrorCode::format_error, "unknown dtype for " + t.name);
    t.dtype = static_cast<DType>(dtype);
    const auto rank = detail::get_le<std::uint32_t>(bytes, pos);
    Shape shape;
    for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(detail::get_le<std::uint64_t>(bytes, pos));
    const std::size_t n = shape_size(shape);
    const std::size_t width = t.dtype == DType::f64 ? 8 : 4;
    if (n > (bytes.size() - pos) / width) throw Error(ErrorCode::format_error, "checkpoint truncated in " + t.name);
    std::vector<double> data(n);
    for (auto& v : data) v = t.dtype == DType::f64 ? detail::get_le<double>(bytes, pos) : detail::get_le<float>(bytes, pos);
    t.value = Tensor<double>(std::move(shape), std::move(data));
    file.tensors.push_back(std::move(t));
  }
  return file;
}

inline void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::io_failure, "cannot write checkpoint " + path.string());
  const auto bytes = serialize_checkpoint(file);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::io_failure, "write failed for " + path.string());
}

inline CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io_failure, "cannot open checkpoint " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(bytes);
}

template <class T>
StoredTensor store_parameter(const Parameter<T>& p) {
  return StoredTensor{p.name, dtype_of<T>(), p.value.template cast<double>()};
}

}  // namespace chordgen
