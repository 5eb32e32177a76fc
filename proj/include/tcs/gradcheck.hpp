#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "tcs/tensor.hpp"

namespace tcs {

struct GradCheckResult {
  double max_relative_error = 0.0;
  double max_absolute_error = 0.0;
  std::size_t worst_input = 0;
  Index worst_index = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Relative error per coordinate is
/// |analytic - numeric| / max(1e-8, |numeric|).
inline GradCheckResult grad_check(const std::function<Tensor<double>(const std::vector<Tensor<double>>&)>& f,
                                  std::vector<Tensor<double>> inputs, double step = 1e-5) {
  for (auto& in : inputs) {
    in = in.clone_leaf();
    in.set_requires_grad(true);
  }
  auto eval = [&]() {
    const double v = f(inputs).item();
    if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
    return v;
  };
  auto out = f(inputs);
  if (!std::isfinite(out.item())) throw NumericError("grad_check: function value is not finite");
  out.backward();

  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    std::vector<double> analytic(in.grad().begin(), in.grad().end());
    if (analytic.empty()) analytic.assign(static_cast<std::size_t>(in.numel()), 0.0);
    auto values = in.mutable_data();
    for (Index i = 0; i < in.numel(); ++i) {
      const double saved = values[static_cast<std::size_t>(i)];
      values[static_cast<std::size_t>(i)] = saved + step;
      const double up = eval();
      values[static_cast<std::size_t>(i)] = saved - step;
      const double down = eval();
      values[static_cast<std::size_t>(i)] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double abs_err = std::abs(analytic[static_cast<std::size_t>(i)] - numeric);
      const double rel_err = abs_err / std::max(1e-8, std::abs(numeric));
      result.max_absolute_error = std::max(result.max_absolute_error, abs_err);
      if (rel_err > result.max_relative_error) {
        result.max_relative_error = rel_err;
        result.worst_input = k;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace tcs
