#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcs/image_io.hpp"

namespace tcs {

struct PointXYZRGB {
  double x, y, z;
  std::uint8_t r, g, b;
};

/// Back-projects valid pixels: Z = f B / d, X = (x - cx) Z / f, Y = (y - cy) Z / f.
inline std::vector<PointXYZRGB> back_project(const Image& frame, const float* disparity, const std::uint8_t* valid,
                                             double focal_px, double baseline_m, double cx, double cy) {
  if (!(focal_px > 0) || !(baseline_m > 0)) throw std::invalid_argument("point cloud: focal_px and baseline_m must be positive");
  std::vector<PointXYZRGB> pts;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * frame.width + x;
      if (!valid[i]) continue;
      const double d = disparity[i];
      if (!(d > 0) || !std::isfinite(d)) {
        throw std::invalid_argument("point cloud: non-positive disparity " + std::to_string(d) + " at valid pixel (" +
                                    std::to_string(x) + "," + std::to_string(y) + ")");
      }
      const double z = focal_px * baseline_m / d;
      pts.push_back({(x - cx) * z / focal_px, (y - cy) * z / focal_px, z, quantize8(frame.at(y, x, 0)),
                     quantize8(frame.at(y, x, 1)), quantize8(frame.at(y, x, 2))});
    }
  }
  return pts;
}

inline std::string export_pointcloud(const Image& frame, const float* disparity, const std::uint8_t* valid,
                                     double focal_px, double baseline_m, double cx, double cy) {
  const auto pts = back_project(frame, disparity, valid, focal_px, baseline_m, cx, cy);
  std::ostringstream o;
  o << "ply\nformat ascii 1.0\nelement vertex " << pts.size()
    << "\nproperty float x\nproperty float y\nproperty float z\n"
       "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  o.precision(9);
  for (const auto& p : pts) {
    o << p.x << ' ' << p.y << ' ' << p.z << ' ' << int(p.r) << ' ' << int(p.g) << ' ' << int(p.b) << '\n';
  }
  return o.str();
}

}  // namespace tcs
