#pragma once

#include <cstdint>
#include <cstring>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tcs/model.hpp"

namespace tcs {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Container layout (all integers little-endian):
///   8 bytes   magic "TCSCKPT\0"
///   u32       format version
///   u32       scalar size in bytes (4 or 8)
///   u64 + ..  model config text (ModelConfig::to_text)
///   u64       tensor count, then per tensor:
///               u64 + ..  name
///               u32       rank, then rank x i64 extents
///               raw values
///   u64       FNV-1a hash of every preceding byte
inline constexpr char kCheckpointMagic[8] = {'T', 'C', 'S', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 1099511628211ull;
  }
  return h;
}

template <class V>
void put(std::string& out, V v) {
  static_assert(std::is_trivially_copyable_v<V>);
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

inline void put_string(std::string& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out += s;
}

struct Reader {
  const std::string& bytes;
  std::size_t pos = 0;
  std::size_t end;
  std::string origin;

  void need(std::size_t n) const {
    if (n > end - pos) throw CheckpointError(origin + ": truncated checkpoint");
  }
  template <class V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes.data() + pos, sizeof(V));
    pos += sizeof(V);
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s = bytes.substr(pos, n);
    pos += n;
    return s;
  }
};

}  // namespace detail

template <class T>
std::string serialize_checkpoint(const Model<T>& m) {
  std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(T));
  detail::put_string(out, m.config.to_text());
  detail::put<std::uint64_t>(out, m.params.size());
  for (const auto& [name, t] : m.params.items()) {
    detail::put_string(out, name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.ndim()));
    for (Index d : t.shape()) detail::put<std::int64_t>(out, d);
    out.append(reinterpret_cast<const char*>(t.data().data()), t.data().size_bytes());
  }
  detail::put<std::uint64_t>(out, detail::fnv1a(out, out.size()));
  return out;
}

/// Rebuilds a model from bytes. When `expected` is given its config must
/// match the stored one exactly.
template <class T>
Model<T> deserialize_checkpoint(const std::string& bytes, const std::optional<ModelConfig>& expected = std::nullopt,
                                const std::string& origin = "<checkpoint>") {
  if (bytes.size() < sizeof kCheckpointMagic + 8 ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
    throw CheckpointError(origin + ": not a checkpoint (bad magic)");
  }
  detail::Reader r{bytes, sizeof kCheckpointMagic, bytes.size() - 8, origin};
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError(origin + ": checkpoint format version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  std::uint64_t stored_hash;
  std::memcpy(&stored_hash, bytes.data() + bytes.size() - 8, 8);
  if (stored_hash != detail::fnv1a(bytes, bytes.size() - 8)) throw CheckpointError(origin + ": checksum mismatch (corrupt file)");
  const auto scalar = r.get<std::uint32_t>();
  if (scalar != sizeof(T)) {
    throw CheckpointError(origin + ": stored scalar size " + std::to_string(scalar) + " bytes, expected " +
                          std::to_string(sizeof(T)));
  }
  ModelConfig cfg;
  try {
    cfg = ModelConfig::from_text(r.get_string(), origin);
  } catch (const ConfigError& e) {
    throw CheckpointError(e.what());
  }
  if (expected && !(*expected == cfg)) {
    throw CheckpointError(origin + ": model config mismatch; checkpoint has\n" + cfg.to_text() + "requested\n" +
                          expected->to_text());
  }
  // Shapes and names come from a fresh init of the stored config.
  Model<T> m = init_model<T>(cfg, 0);
  const auto count = r.get<std::uint64_t>();
  if (count != m.params.size()) {
    throw CheckpointError(origin + ": " + std::to_string(count) + " tensors, config implies " +
                          std::to_string(m.params.size()));
  }
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = r.get_string();
    if (!m.params.contains(name)) throw CheckpointError(origin + ": unexpected tensor '" + name + "'");
    auto& t = m.params.items().at(name);
    const auto rank = r.get<std::uint32_t>();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.get<std::int64_t>());
    if (shape != t.shape()) {
      throw CheckpointError(origin + ": tensor '" + name + "' has shape " + to_string(shape) + ", expected " +
                            to_string(t.shape()));
    }
    auto dst = t.mutable_data();
    r.need(dst.size_bytes());
    std::memcpy(dst.data(), bytes.data() + r.pos, dst.size_bytes());
    r.pos += dst.size_bytes();
  }
  if (r.pos != r.end) throw CheckpointError(origin + ": trailing bytes after the last tensor");
  return m;
}

template <class T>
void save_checkpoint(const Model<T>& m, const std::string& path) {
  write_file(path, serialize_checkpoint(m));
}

template <class T>
Model<T> load_checkpoint(const std::string& path, const std::optional<ModelConfig>& expected = std::nullopt) {
  return deserialize_checkpoint<T>(read_file(path), expected, path);
}

}  // namespace tcs
