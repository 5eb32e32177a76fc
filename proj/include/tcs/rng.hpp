#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

#include "tcs/tensor.hpp"

namespace tcs {

/// Seeded generator with platform-independent conversions (the standard
/// distributions are implementation-defined, so they are not used here).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

  double normal() {
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  // Child generator for an independent stream (e.g. one per scene).
  Rng split() { return Rng(engine_() ^ 0x9E3779B97F4A7C15ULL); }

 private:
  std::mt19937_64 engine_;
};

template <class T>
Tensor<T> uniform_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = false) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

template <class T>
Tensor<T> normal_tensor(Shape shape, Rng& rng, double stddev = 1.0, bool requires_grad = false) {
  std::vector<T> data(static_cast<std::size_t>(numel(shape)));
  for (auto& v : data) v = static_cast<T>(stddev * rng.normal());
  return Tensor<T>(std::move(shape), std::move(data), requires_grad);
}

}  // namespace tcs
