#pragma once

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tcs/pfm.hpp"

namespace tcs {

/// Interleaved RGB, values in [0,1], row-major.
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // size height*width*3

  Image() = default;
  Image(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0.0f) {}

  float& at(int y, int x, int c) { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int y, int x, int c) const { return data[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
};

inline std::uint8_t quantize8(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

inline Image from_bytes8(int h, int w, const std::uint8_t* rgb) {
  Image img(h, w);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(rgb[i]) / 255.0f;
  return img;
}

inline Image read_png(const std::string& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    throw FormatError(path + ": " + png.message);
  }
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, buf.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw FormatError(path + ": " + msg);
  }
  return from_bytes8(static_cast<int>(png.height), static_cast<int>(png.width), buf.data());
}

inline void write_png(const std::string& path, const Image& img) {
  std::vector<std::uint8_t> buf(img.data.size());
  std::transform(img.data.begin(), img.data.end(), buf.begin(), quantize8);
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error(path + ": " + png.message);
  }
}

/// Binary PPM (P6) or PGM (P5, expanded to gray RGB), maxval <= 255.
inline Image read_ppm(const std::string& path) {
  const std::string bytes = read_file(path);
  std::size_t pos = 0;
  auto token = [&]() {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    return bytes.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic != "P6" && magic != "P5") throw FormatError(path + ": not a binary PPM/PGM");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed PPM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw FormatError(path + ": unsupported PPM header");
  ++pos;
  const int ch = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w) * h * ch;
  if (pos > bytes.size() || bytes.size() - pos < need) throw FormatError(path + ": truncated PPM payload");
  Image img(h, w);
  const auto* src = reinterpret_cast<const std::uint8_t*>(bytes.data() + pos);
  for (std::size_t p = 0; p < static_cast<std::size_t>(w) * h; ++p) {
    for (int c = 0; c < 3; ++c) {
      img.data[p * 3 + c] = static_cast<float>(src[p * ch + (ch == 3 ? c : 0)]) / static_cast<float>(maxval);
    }
  }
  return img;
}

inline void write_ppm(const std::string& path, const Image& img) {
  std::string bytes = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  for (float v : img.data) bytes.push_back(static_cast<char>(quantize8(v)));
  write_file(path, bytes);
}

inline bool has_suffix(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                    [](char a, char b) { return std::tolower(static_cast<unsigned char>(a)) == b; });
}

inline Image read_image(const std::string& path) {
  if (has_suffix(path, ".png")) return read_png(path);
  if (has_suffix(path, ".ppm") || has_suffix(path, ".pgm")) return read_ppm(path);
  throw FormatError(path + ": unsupported image extension (expected .png/.ppm/.pgm)");
}

}  // namespace tcs
