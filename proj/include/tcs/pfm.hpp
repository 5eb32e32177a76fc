#pragma once

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tcs {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Single-channel float map, rows stored top-to-bottom in memory.
struct FloatMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + x]; }
};

namespace detail {

inline std::string next_token(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  const std::size_t start = pos;
  while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
  return bytes.substr(start, pos - start);
}

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

}  // namespace detail

/// Decodes a "Pf" (grayscale) PFM. The sign of the scale line selects the
/// payload byte order (negative = little-endian); rows are stored bottom-up.
inline FloatMap read_pfm(const std::string& bytes) {
  std::size_t pos = 0;
  const std::string magic = detail::next_token(bytes, pos);
  if (magic == "PF") throw FormatError("pfm: 3-channel PF files are not supported");
  if (magic != "Pf") throw FormatError("pfm: bad magic '" + magic.substr(0, 8) + "'");
  const std::string ws = detail::next_token(bytes, pos);
  const std::string hs = detail::next_token(bytes, pos);
  const std::string ss = detail::next_token(bytes, pos);
  FloatMap m;
  double scale = 0;
  try {
    std::size_t used = 0;
    m.width = std::stoi(ws, &used);
    if (used != ws.size()) throw FormatError("width");
    m.height = std::stoi(hs, &used);
    if (used != hs.size()) throw FormatError("height");
    scale = std::stod(ss, &used);
    if (used != ss.size()) throw FormatError("scale");
  } catch (const std::exception&) {
    throw FormatError("pfm: malformed header");
  }
  if (m.width <= 0 || m.height <= 0) throw FormatError("pfm: non-positive dimensions");
  if (scale == 0.0 || !std::isfinite(scale)) throw FormatError("pfm: scale must be finite and nonzero");
  // Exactly one whitespace byte separates the header from the payload.
  if (pos >= bytes.size()) throw FormatError("pfm: truncated payload");
  ++pos;
  const std::size_t count = static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height);
  if (bytes.size() - pos < count * 4) {
    throw FormatError("pfm: truncated payload (" + std::to_string(bytes.size() - pos) + " of " +
                      std::to_string(count * 4) + " bytes)");
  }
  const bool file_le = scale < 0;
  const bool host_le = std::endian::native == std::endian::little;
  m.data.resize(count);
  for (int row = 0; row < m.height; ++row) {
    const int y = m.height - 1 - row;
    for (int x = 0; x < m.width; ++x) {
      std::uint32_t raw;
      std::memcpy(&raw, bytes.data() + pos + (static_cast<std::size_t>(row) * m.width + x) * 4, 4);
      if (file_le != host_le) raw = detail::byteswap32(raw);
      m.data[static_cast<std::size_t>(y) * m.width + x] = std::bit_cast<float>(raw);
    }
  }
  return m;
}

/// Encodes as little-endian "Pf" (scale -1).
inline std::string write_pfm(const FloatMap& m) {
  if (m.data.size() != static_cast<std::size_t>(m.width) * static_cast<std::size_t>(m.height)) {
    throw std::invalid_argument("write_pfm: data size does not match dimensions");
  }
  std::ostringstream out;
  out << "Pf\n" << m.width << ' ' << m.height << "\n-1\n";
  std::string bytes = out.str();
  const std::size_t head = bytes.size();
  bytes.resize(head + m.data.size() * 4);
  const bool host_le = std::endian::native == std::endian::little;
  for (int row = 0; row < m.height; ++row) {
    const int y = m.height - 1 - row;
    for (int x = 0; x < m.width; ++x) {
      std::uint32_t raw = std::bit_cast<std::uint32_t>(m.data[static_cast<std::size_t>(y) * m.width + x]);
      if (!host_le) raw = detail::byteswap32(raw);
      std::memcpy(bytes.data() + head + (static_cast<std::size_t>(row) * m.width + x) * 4, &raw, 4);
    }
  }
  return bytes;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

inline FloatMap load_pfm(const std::string& path) {
  try {
    return read_pfm(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

inline void save_pfm(const std::string& path, const FloatMap& m) { write_file(path, write_pfm(m)); }

}  // namespace tcs
