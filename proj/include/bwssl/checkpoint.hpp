#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "bwssl/nn.hpp"

namespace bwssl {

// Checkpoint layout (all integers little-endian):
//   "BWSSLCK1"                      8-byte magic
//   u32 count
//   count x { u32 name_len, name bytes,
//             u32 rank, rank x u32 dims,
//             numel x f32 values }
inline constexpr char kCheckpointMagic[9] = "BWSSLCK1";

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

class ByteReader {
 public:
  explicit ByteReader(const std::string& bytes) : bytes_(bytes) {}

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t offset() const { return pos_; }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (pos_ + n > bytes_.size()) throw ParseError(std::string("truncated checkpoint reading ") + what, pos_);
  }
  const std::string& bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace detail

template <typename T>
std::string encode_checkpoint(const NamedTensors<T>& tensors) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(nt.name.size()));
    out += nt.name;
    detail::put_u32(out, static_cast<std::uint32_t>(nt.tensor.rank()));
    for (auto d : nt.tensor.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (auto v : nt.tensor.data()) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline std::vector<CheckpointEntry> decode_checkpoint(const std::string& bytes) {
  detail::ByteReader r(bytes);
  if (r.str(8, "magic") != std::string(kCheckpointMagic, 8)) throw ParseError("bad checkpoint magic", 0);
  const auto count = r.u32("entry count");
  std::vector<CheckpointEntry> entries;
  for (std::uint32_t e = 0; e < count; ++e) {
    CheckpointEntry ce;
    const auto len = r.u32("name length");
    ce.name = r.str(len, "name");
    const auto rank = r.u32("rank");
    if (rank > 8) throw ParseError("implausible tensor rank " + std::to_string(rank), r.offset() - 4);
    for (std::uint32_t i = 0; i < rank; ++i) ce.shape.push_back(r.u32("dimension"));
    const auto n = numel(ce.shape);
    ce.values.reserve(n);
    for (std::size_t i = 0; i < n; ++i) ce.values.push_back(r.f32("values"));
    entries.push_back(std::move(ce));
  }
  if (!r.done()) throw ParseError("trailing bytes after checkpoint", r.offset());
  return entries;
}

template <typename T>
void save_checkpoint(const std::string& path, const NamedTensors<T>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path);
  const auto bytes = encode_checkpoint(tensors);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

/// Copies values from `entries` into every tensor of `targets` whose name
/// matches. With `require_all`, a missing or mis-shaped entry is an error.
template <typename T>
std::size_t load_into(const std::vector<CheckpointEntry>& entries, NamedTensors<T>& targets,
                      bool require_all = true) {
  std::map<std::string, const CheckpointEntry*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e;
  std::size_t loaded = 0;
  for (auto& t : targets) {
    auto it = by_name.find(t.name);
    if (it == by_name.end()) {
      if (require_all) throw ConfigError("checkpoint lacks tensor '" + t.name + "'");
      continue;
    }
    if (it->second->shape != t.tensor.shape()) {
      throw ShapeError("checkpoint tensor '" + t.name + "' has shape " + to_string(it->second->shape) +
                       ", model expects " + to_string(t.tensor.shape()));
    }
    auto dst = t.tensor.mutable_data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(it->second->values[i]);
    ++loaded;
  }
  return loaded;
}

template <typename T>
std::size_t load_checkpoint(const std::string& path, NamedTensors<T>& targets, bool require_all = true) {
  return load_into(decode_checkpoint(detail::read_file(path)), targets, require_all);
}

/// Order-sensitive FNV-1a over the raw bytes of every tensor; used to assert
/// that evaluation leaves a model untouched.
template <typename T>
std::uint64_t checksum(const NamedTensors<T>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& nt : tensors) {
    for (char c : nt.name) {
      h ^= static_cast<unsigned char>(c);
      h *= 0x100000001b3ULL;
    }
    for (auto v : nt.tensor.data()) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (auto x : b) {
        h ^= x;
        h *= 0x100000001b3ULL;
      }
    }
  }
  return h;
}

}  // namespace bwssl
