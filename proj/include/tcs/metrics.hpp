#pragma once

#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "tcs/sequence.hpp"

namespace tcs {

class MetricError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

inline void check_same_shape(const char* op, const DisparityVideo& a, const DisparityVideo& b) {
  if (a.frames != b.frames || a.height != b.height || a.width != b.width) {
    throw MetricError(std::string(op) + ": prediction is " + std::to_string(a.frames) + "x" +
                      std::to_string(a.height) + "x" + std::to_string(a.width) + ", ground truth " +
                      std::to_string(b.frames) + "x" + std::to_string(b.height) + "x" + std::to_string(b.width));
  }
}

// Calls f(err) for every counted transition: pixel valid in gt at t and t+1,
// err = |(p[t+1]-p[t]) - (g[t+1]-g[t])|.
template <class F>
std::size_t for_each_transition(const char* op, const DisparityVideo& pred, const DisparityVideo& gt, F&& f) {
  check_same_shape(op, pred, gt);
  if (gt.frames < 2) throw MetricError(std::string(op) + ": needs at least 2 frames");
  std::size_t n = 0;
  const std::size_t plane = gt.plane();
  for (int t = 0; t + 1 < gt.frames; ++t) {
    for (std::size_t p = 0; p < plane; ++p) {
      const std::size_t a = t * plane + p, b = a + plane;
      if (!gt.valid[a] || !gt.valid[b]) continue;
      const double dp = static_cast<double>(pred.values[b]) - pred.values[a];
      const double dg = static_cast<double>(gt.values[b]) - gt.values[a];
      f(std::abs(dp - dg));
      ++n;
    }
  }
  if (n == 0) throw MetricError(std::string(op) + ": no pixel is valid in two consecutive frames");
  return n;
}

}  // namespace detail

/// Mean |pred - gt| over valid gt pixels.
inline double epe(const DisparityVideo& pred, const DisparityVideo& gt) {
  detail::check_same_shape("epe", pred, gt);
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < gt.values.size(); ++i) {
    if (!gt.valid[i]) continue;
    s += std::abs(static_cast<double>(pred.values[i]) - gt.values[i]);
    ++n;
  }
  if (n == 0) throw MetricError("epe: no valid ground-truth pixels");
  return s / static_cast<double>(n);
}

/// Temporal EPE at fixed pixel coordinates.
inline double tepe(const DisparityVideo& pred, const DisparityVideo& gt) {
  double s = 0.0;
  const auto n = detail::for_each_transition("tepe", pred, gt, [&](double e) { s += e; });
  return s / static_cast<double>(n);
}

/// Fraction of counted transitions whose temporal error exceeds `threshold` px.
inline double delta_t(const DisparityVideo& pred, const DisparityVideo& gt, double threshold) {
  std::size_t above = 0;
  const auto n = detail::for_each_transition("delta_t", pred, gt, [&](double e) { above += e > threshold; });
  return static_cast<double>(above) / static_cast<double>(n);
}

struct Alignment {
  double scale = 0.0;
  double shift = 0.0;
  std::vector<float> aligned;  // s * rel + b at every pixel
};

/// Least-squares (s, b) minimizing sum over valid ref pixels of (s rel + b - ref)^2.
inline Alignment align_scale_shift(const std::vector<float>& rel, const DisparityVideo& ref) {
  if (rel.size() != ref.values.size()) {
    throw MetricError("align_scale_shift: " + std::to_string(rel.size()) + " relative values for " +
                      std::to_string(ref.values.size()) + " reference pixels");
  }
  double n = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (!ref.valid[i]) continue;
    n += 1;
    sx += rel[i];
    sy += ref.values[i];
  }
  if (n < 2) throw MetricError("align_scale_shift: needs at least 2 valid pixels");
  // Centred sums keep the normal equations well conditioned.
  const double mx = sx / n, my = sy / n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < rel.size(); ++i) {
    if (!ref.valid[i]) continue;
    const double dx = rel[i] - mx;
    sxx += dx * dx;
    sxy += dx * (ref.values[i] - my);
  }
  if (!(sxx > 0)) throw MetricError("align_scale_shift: relative values are constant over the valid pixels");
  Alignment a;
  a.scale = sxy / sxx;
  a.shift = my - a.scale * mx;
  a.aligned.resize(rel.size());
  for (std::size_t i = 0; i < rel.size(); ++i) a.aligned[i] = static_cast<float>(a.scale * rel[i] + a.shift);
  return a;
}

/// Sums that merge across sequences; finish() turns them into a report.
struct EvalReport {
  double epe = 0.0;
  double tepe = 0.0;
  std::map<double, double> delta_t;  // threshold px -> fraction
  std::vector<double> frame_epe;
  std::size_t valid_pixels = 0;
  std::size_t valid_transitions = 0;

  std::string to_csv() const {
    std::ostringstream o;
    o.precision(9);
    o << "metric,value\nepe," << epe << "\ntepe," << tepe << "\n";
    for (const auto& [n, v] : delta_t) o << "delta_" << format_threshold(n) << "px," << v << "\n";
    o << "valid_pixels," << valid_pixels << "\nvalid_transitions," << valid_transitions << "\n";
    for (std::size_t t = 0; t < frame_epe.size(); ++t) o << "epe_frame_" << t << "," << frame_epe[t] << "\n";
    return o.str();
  }

  std::string to_table() const {
    std::ostringstream o;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%-18s %12s\n", "metric", "value");
    o << buf;
    auto row = [&](const std::string& k, double v) {
      std::snprintf(buf, sizeof buf, "%-18s %12.6f\n", k.c_str(), v);
      o << buf;
    };
    row("EPE (px)", epe);
    row("TEPE (px)", tepe);
    for (const auto& [n, v] : delta_t) row("delta_" + format_threshold(n) + "px", v);
    std::snprintf(buf, sizeof buf, "%-18s %12zu\n%-18s %12zu\n", "valid pixels", valid_pixels, "transitions",
                  valid_transitions);
    o << buf;
    return o.str();
  }

  static std::string format_threshold(double n) {
    std::ostringstream s;
    s << n;
    return s.str();
  }
};

/// Accumulates pixel-weighted metrics over several sequences.
class EvalAccumulator {
 public:
  explicit EvalAccumulator(std::vector<double> thresholds = {1.0, 3.0}) : thresholds_(std::move(thresholds)) {
    above_.assign(thresholds_.size(), 0);
  }

  void add(const DisparityVideo& pred, const DisparityVideo& gt) {
    detail::check_same_shape("evaluate", pred, gt);
    for (int t = 0; t < gt.frames; ++t) {
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t p = 0; p < gt.plane(); ++p) {
        const std::size_t i = t * gt.plane() + p;
        if (!gt.valid[i]) continue;
        s += std::abs(static_cast<double>(pred.values[i]) - gt.values[i]);
        ++n;
      }
      epe_sum_ += s;
      pixels_ += n;
      frame_epe_.push_back(n ? s / static_cast<double>(n) : 0.0);
    }
    if (gt.frames >= 2) {
      transitions_ += detail::for_each_transition("evaluate", pred, gt, [&](double e) {
        tepe_sum_ += e;
        for (std::size_t k = 0; k < thresholds_.size(); ++k) above_[k] += e > thresholds_[k];
      });
    }
  }

  EvalReport finish() const {
    if (pixels_ == 0) throw MetricError("evaluate: no valid ground-truth pixels");
    if (transitions_ == 0) throw MetricError("evaluate: no temporal transitions (need T >= 2)");
    EvalReport r;
    r.epe = epe_sum_ / static_cast<double>(pixels_);
    r.tepe = tepe_sum_ / static_cast<double>(transitions_);
    for (std::size_t k = 0; k < thresholds_.size(); ++k) {
      r.delta_t[thresholds_[k]] = static_cast<double>(above_[k]) / static_cast<double>(transitions_);
    }
    r.frame_epe = frame_epe_;
    r.valid_pixels = pixels_;
    r.valid_transitions = transitions_;
    return r;
  }

 private:
  std::vector<double> thresholds_;
  std::vector<std::size_t> above_;
  double epe_sum_ = 0.0, tepe_sum_ = 0.0;
  std::size_t pixels_ = 0, transitions_ = 0;
  std::vector<double> frame_epe_;
};

inline EvalReport evaluate(const DisparityVideo& pred, const DisparityVideo& gt,
                           std::vector<double> thresholds = {1.0, 3.0}) {
  EvalAccumulator acc(std::move(thresholds));
  acc.add(pred, gt);
  return acc.finish();
}

}  // namespace tcs
