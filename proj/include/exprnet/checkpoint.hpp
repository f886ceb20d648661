#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "exprnet/tensor.hpp"

namespace exprnet {

// EXPR1 checkpoint layout:
//
//   EXPR1 <format_version>\n
//   # <key>=<value>\n                 zero or more metadata lines, keys sorted
//   <name> <dtype> <d0> <d1> ...\n    one line per tensor, dtype f32 | f64
//   \n
//   <payloads>                        header order, row-major, little-endian
//
// Tensor names under the reserved "optim." prefix hold optimizer state and
// are ignored when loading model weights.

inline constexpr std::string_view kCheckpointMagic = "EXPR1";
inline constexpr int kCheckpointFormatVersion = 1;

enum class DType { f32, f64 };

inline std::size_t dtype_size(DType d) { return d == DType::f32 ? 4 : 8; }
inline const char* dtype_str(DType d) { return d == DType::f32 ? "f32" : "f64"; }

template <typename T>
constexpr DType dtype_of() {
  return std::is_same_v<T, float> ? DType::f32 : DType::f64;
}

namespace detail {

template <typename U>
void store_le(U value, unsigned char* out) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  const Bits bits = std::bit_cast<Bits>(value);
  for (std::size_t b = 0; b < sizeof(U); ++b) out[b] = static_cast<unsigned char>(bits >> (8 * b));
}

template <typename U>
U load_le(const unsigned char* in) {
  using Bits = std::conditional_t<sizeof(U) == 4, std::uint32_t, std::uint64_t>;
  Bits bits = 0;
  for (std::size_t b = 0; b < sizeof(U); ++b) bits |= static_cast<Bits>(in[b]) << (8 * b);
  return std::bit_cast<U>(bits);
}

inline bool valid_metadata_key(std::string_view key) {
  if (key.empty()) return false;
  for (char c : key) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '.' || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

}  // namespace detail

struct CheckpointTensor {
  std::string name;
  DType dtype = DType::f32;
  Shape shape;
  std::vector<unsigned char> payload;

  template <typename T>
  static CheckpointTensor from(std::string name, const Tensor<T>& t) {
    CheckpointTensor out{std::move(name), dtype_of<T>(), t.shape(), {}};
    out.payload.resize(t.numel() * sizeof(T));
    for (std::size_t i = 0; i < t.numel(); ++i) detail::store_le<T>(t[i], out.payload.data() + i * sizeof(T));
    return out;
  }

  std::size_t numel() const { return shape_numel(shape); }

  /// Values converted to T (widening f32 -> f64 is exact).
  template <typename T>
  std::vector<T> values() const {
    std::vector<T> out(numel());
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i] = dtype == DType::f32 ? static_cast<T>(detail::load_le<float>(payload.data() + i * 4))
                                   : static_cast<T>(detail::load_le<double>(payload.data() + i * 8));
    }
    return out;
  }
};

struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  std::map<std::string, std::string> metadata;
  std::vector<CheckpointTensor> tensors;

  const CheckpointTensor* find(std::string_view name) const {
    for (const auto& t : tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  }
};

inline std::string serialize_checkpoint(const Checkpoint& ckpt) {
  std::string out;
  out += kCheckpointMagic;
  out += ' ' + std::to_string(ckpt.format_version) + '\n';
  for (const auto& [key, value] : ckpt.metadata) {
    if (!detail::valid_metadata_key(key)) throw CheckpointError("invalid metadata key '" + key + "'");
    if (value.find('\n') != std::string::npos) throw CheckpointError("metadata value for '" + key + "' contains a newline");
    out += "# " + key + "=" + value + '\n';
  }
  std::size_t payload_bytes = 0;
  for (const auto& t : ckpt.tensors) {
    if (!valid_parameter_name(t.name)) throw CheckpointError("invalid tensor name '" + t.name + "'");
    if (t.payload.size() != t.numel() * dtype_size(t.dtype)) {
      throw CheckpointError("payload size mismatch for '" + t.name + "'");
    }
    out += t.name + ' ' + dtype_str(t.dtype);
    for (std::size_t d : t.shape) out += ' ' + std::to_string(d);
    out += '\n';
    payload_bytes += t.payload.size();
  }
  out += '\n';
  out.reserve(out.size() + payload_bytes);
  for (const auto& t : ckpt.tensors) out.append(reinterpret_cast<const char*>(t.payload.data()), t.payload.size());
  return out;
}

inline Checkpoint parse_checkpoint(std::string_view bytes) {
  auto fail = [](const std::string& what) -> CheckpointError { return CheckpointError("malformed checkpoint: " + what); };
  std::size_t pos = 0;
  auto next_line = [&]() -> std::string_view {
    const auto end = bytes.find('\n', pos);
    if (end == std::string_view::npos) throw fail("truncated header");
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    return line;
  };

  if (bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic) throw fail("bad magic (not an EXPR1 file)");
  Checkpoint ckpt;
  {
    std::string_view first = next_line();
    first.remove_prefix(kCheckpointMagic.size());
    if (first.empty() || first.front() != ' ') throw fail("missing format version");
    try {
      ckpt.format_version = std::stoi(std::string(first.substr(1)));
    } catch (const std::exception&) {
      throw fail("bad format version");
    }
    if (ckpt.format_version != kCheckpointFormatVersion) {
      throw CheckpointError("unsupported checkpoint format version " + std::to_string(ckpt.format_version));
    }
  }

  std::size_t payload_bytes = 0;
  for (;;) {
    const std::string_view line = next_line();
    if (line.empty()) break;
    if (line.starts_with("# ")) {
      const auto body = line.substr(2);
      const auto eq = body.find('=');
      if (eq == std::string_view::npos) throw fail("metadata line without '='");
      ckpt.metadata[std::string(body.substr(0, eq))] = std::string(body.substr(eq + 1));
      continue;
    }
    std::istringstream is{std::string(line)};
    CheckpointTensor t;
    std::string dtype;
    if (!(is >> t.name >> dtype)) throw fail("bad tensor line '" + std::string(line) + "'");
    if (!valid_parameter_name(t.name)) throw fail("invalid tensor name '" + t.name + "'");
    if (dtype == "f32") t.dtype = DType::f32;
    else if (dtype == "f64") t.dtype = DType::f64;
    else throw fail("unknown dtype '" + dtype + "' for '" + t.name + "'");
    long long extent;
    while (is >> extent) {
      if (extent <= 0) throw fail("non-positive extent for '" + t.name + "'");
      t.shape.push_back(static_cast<std::size_t>(extent));
    }
    if (!is.eof()) throw fail("bad shape for '" + t.name + "'");
    if (ckpt.find(t.name)) throw fail("duplicate tensor '" + t.name + "'");
    payload_bytes += t.numel() * dtype_size(t.dtype);
    ckpt.tensors.push_back(std::move(t));
  }

  if (bytes.size() - pos != payload_bytes) {
    throw fail("payload is " + std::to_string(bytes.size() - pos) + " bytes, header describes " +
               std::to_string(payload_bytes));
  }
  for (auto& t : ckpt.tensors) {
    const std::size_t size = t.numel() * dtype_size(t.dtype);
    const auto* begin = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
    t.payload.assign(begin, begin + size);
    pos += size;
  }
  return ckpt;
}

inline void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return parse_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

}  // namespace exprnet
