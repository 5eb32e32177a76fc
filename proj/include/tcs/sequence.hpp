#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "tcs/image_io.hpp"
#include "tcs/keyvalue.hpp"
#include "tcs/pfm.hpp"

namespace tcs {

/// T x H x W disparities (pixels, left-view aligned) with per-pixel validity.
struct DisparityVideo {
  int frames = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;
  std::vector<std::uint8_t> valid;

  DisparityVideo() = default;
  DisparityVideo(int t, int h, int w)
      : frames(t), height(h), width(w),
        values(static_cast<std::size_t>(t) * h * w, 0.0f), valid(values.size(), 1) {}

  std::size_t index(int t, int y, int x) const {
    return (static_cast<std::size_t>(t) * height + y) * width + x;
  }
  float& at(int t, int y, int x) { return values[index(t, y, x)]; }
  float at(int t, int y, int x) const { return values[index(t, y, x)]; }
  bool is_valid(int t, int y, int x) const { return valid[index(t, y, x)] != 0; }
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

  std::size_t valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }
};

struct StereoSequence {
  std::vector<Image> left;
  std::vector<Image> right;
  double focal_px = 0.0;
  double baseline_m = 0.0;
  std::optional<DisparityVideo> gt;

  int frames() const { return static_cast<int>(left.size()); }
  int height() const { return left.empty() ? 0 : left.front().height; }
  int width() const { return left.empty() ? 0 : left.front().width; }

  void validate() const {
    if (left.size() != right.size()) {
      throw std::invalid_argument("sequence: " + std::to_string(left.size()) + " left frames vs " +
                                  std::to_string(right.size()) + " right frames");
    }
    for (std::size_t t = 0; t < left.size(); ++t) {
      if (left[t].height != height() || left[t].width != width() || right[t].height != height() ||
          right[t].width != width()) {
        throw std::invalid_argument("sequence: frame " + std::to_string(t) + " size differs from frame 0");
      }
    }
    if (gt && (gt->frames != frames() || gt->height != height() || gt->width != width())) {
      throw std::invalid_argument("sequence: ground truth shape does not match frames");
    }
  }
};

namespace fs = std::filesystem;

namespace detail {

inline std::string frame_name(int t, const char* ext) {
  std::ostringstream s;
  s << std::setw(6) << std::setfill('0') << t << ext;
  return s.str();
}

// Files in `dir` whose stem ends in digits, with an accepted extension,
// sorted by that numeric index.
inline std::vector<std::pair<long, fs::path>> numbered_files(const fs::path& dir, const std::vector<std::string>& exts) {
  std::vector<std::pair<long, fs::path>> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (std::none_of(exts.begin(), exts.end(), [&](const std::string& e) { return has_suffix(name, e); })) continue;
    const std::string stem = entry.path().stem().string();
    std::size_t k = stem.size();
    while (k > 0 && std::isdigit(static_cast<unsigned char>(stem[k - 1]))) --k;
    if (k == stem.size()) continue;
    out.emplace_back(std::stol(stem.substr(k)), entry.path());
  }
  std::sort(out.begin(), out.end());
  for (std::size_t i = 1; i < out.size(); ++i) {
    if (out[i].first == out[i - 1].first) {
      throw std::runtime_error(dir.string() + ": duplicate frame index " + std::to_string(out[i].first));
    }
  }
  return out;
}

}  // namespace detail

struct Calibration {
  double focal_px = 0.0;
  double baseline_m = 0.0;
};

/// Layout written by save_sequence and read by load_sequence:
///   manifest.txt           frames, height, width, focal_px, baseline_m, has_gt
///   left/000000.png ...    8-bit RGB (PPM also accepted on load)
///   right/000000.png ...
///   disp/000000.pfm ...    optional; invalid pixels stored as +inf
inline void save_sequence(const std::string& dir, const StereoSequence& seq) {
  seq.validate();
  const fs::path root(dir);
  std::error_code ec;
  for (const char* sub : {"left", "right"}) {
    fs::create_directories(root / sub, ec);
    if (ec) throw std::runtime_error("cannot create '" + (root / sub).string() + "': " + ec.message());
  }
  if (seq.gt) fs::create_directories(root / "disp", ec);
  if (ec) throw std::runtime_error("cannot create '" + (root / "disp").string() + "': " + ec.message());
  for (int t = 0; t < seq.frames(); ++t) {
    write_png((root / "left" / detail::frame_name(t, ".png")).string(), seq.left[static_cast<std::size_t>(t)]);
    write_png((root / "right" / detail::frame_name(t, ".png")).string(), seq.right[static_cast<std::size_t>(t)]);
    if (seq.gt) {
      FloatMap m{seq.height(), seq.width(), {}};
      m.data.resize(seq.gt->plane());
      for (std::size_t p = 0; p < m.data.size(); ++p) {
        const std::size_t i = static_cast<std::size_t>(t) * seq.gt->plane() + p;
        m.data[p] = seq.gt->valid[i] ? seq.gt->values[i] : std::numeric_limits<float>::infinity();
      }
      save_pfm((root / "disp" / detail::frame_name(t, ".pfm")).string(), m);
    }
  }
  std::ostringstream man;
  man << std::setprecision(17);
  man << "frames = " << seq.frames() << "\nheight = " << seq.height() << "\nwidth = " << seq.width()
      << "\nfocal_px = " << seq.focal_px << "\nbaseline_m = " << seq.baseline_m
      << "\nhas_gt = " << (seq.gt ? "true" : "false") << "\n";
  write_file((root / "manifest.txt").string(), man.str());
}

/// Loads a directory in the layout above. `calib` overrides (or replaces a
/// missing) manifest.
inline StereoSequence load_sequence(const std::string& dir, std::optional<Calibration> calib = std::nullopt) {
  const fs::path root(dir);
  if (!fs::is_directory(root)) throw std::runtime_error("'" + dir + "' is not a directory");
  StereoSequence seq;
  int manifest_frames = -1;
  if (fs::exists(root / "manifest.txt")) {
    const std::string origin = (root / "manifest.txt").string();
    auto sections = parse_kv(read_file(origin), origin);
    KvReader r(sections.front(), origin);
    int frames = 0, height = 0, width = 0;
    bool has_gt = false;
    r.get("frames", frames);
    r.get("height", height);
    r.get("width", width);
    r.get("focal_px", seq.focal_px);
    r.get("baseline_m", seq.baseline_m);
    r.get("has_gt", has_gt);
    r.finish();
    manifest_frames = frames;
  }
  if (calib) {
    seq.focal_px = calib->focal_px;
    seq.baseline_m = calib->baseline_m;
  }
  const std::vector<std::string> image_ext{".png", ".ppm", ".pgm"};
  if (!fs::is_directory(root / "left") || !fs::is_directory(root / "right")) {
    throw std::runtime_error("'" + dir + "' must contain left/ and right/ frame directories");
  }
  const auto lefts = detail::numbered_files(root / "left", image_ext);
  const auto rights = detail::numbered_files(root / "right", image_ext);
  if (lefts.size() != rights.size()) {
    throw std::runtime_error("'" + dir + "': " + std::to_string(lefts.size()) + " left frames but " +
                             std::to_string(rights.size()) + " right frames");
  }
  if (lefts.empty()) throw std::runtime_error("'" + dir + "': no numbered frames found");
  if (manifest_frames >= 0 && static_cast<std::size_t>(manifest_frames) != lefts.size()) {
    throw std::runtime_error("'" + dir + "': manifest lists " + std::to_string(manifest_frames) + " frames, found " +
                             std::to_string(lefts.size()));
  }
  for (std::size_t i = 0; i < lefts.size(); ++i) {
    if (lefts[i].first != rights[i].first) {
      throw std::runtime_error("'" + dir + "': left frame " + std::to_string(lefts[i].first) +
                               " has no right partner");
    }
    seq.left.push_back(read_image(lefts[i].second.string()));
    seq.right.push_back(read_image(rights[i].second.string()));
  }
  if (fs::is_directory(root / "disp")) {
    const auto disps = detail::numbered_files(root / "disp", {".pfm"});
    if (disps.size() != lefts.size()) {
      throw std::runtime_error("'" + dir + "': " + std::to_string(disps.size()) + " disparity files for " +
                               std::to_string(lefts.size()) + " frames");
    }
    DisparityVideo gt(seq.frames(), seq.height(), seq.width());
    for (std::size_t t = 0; t < disps.size(); ++t) {
      const FloatMap m = load_pfm(disps[t].second.string());
      if (m.height != seq.height() || m.width != seq.width()) {
        throw std::runtime_error(disps[t].second.string() + ": size does not match the frames");
      }
      for (std::size_t p = 0; p < m.data.size(); ++p) {
        const std::size_t i = t * gt.plane() + p;
        const float v = m.data[p];
        gt.valid[i] = std::isfinite(v) && v >= 0.0f;
        gt.values[i] = gt.valid[i] ? v : 0.0f;
      }
    }
    seq.gt = std::move(gt);
  }
  seq.validate();
  return seq;
}

}  // namespace tcs
