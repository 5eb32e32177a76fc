#pragma once

#include <cmath>
#include <map>
#include <stdexcept>
#include <string>

#include "tcs/conv.hpp"
#include "tcs/rng.hpp"

namespace tcs {

/// Named trainable tensors. Ordered by name so iteration (initialization,
/// checkpoints, optimizer state) is deterministic.
template <class T>
class ParamStore {
 public:
  Tensor<T>& add(const std::string& name, Tensor<T> value) {
    if (tensors_.count(name)) throw std::invalid_argument("duplicate parameter '" + name + "'");
    value.set_requires_grad(true);
    return tensors_.emplace(name, std::move(value)).first->second;
  }

  const Tensor<T>& get(const std::string& name) const {
    auto it = tensors_.find(name);
    if (it == tensors_.end()) throw std::out_of_range("missing parameter '" + name + "'");
    return it->second;
  }

  bool contains(const std::string& name) const { return tensors_.count(name) > 0; }
  std::size_t size() const { return tensors_.size(); }

  Index total_elements() const {
    Index n = 0;
    for (const auto& [_, t] : tensors_) n += t.numel();
    return n;
  }

  std::map<std::string, Tensor<T>>& items() { return tensors_; }
  const std::map<std::string, Tensor<T>>& items() const { return tensors_; }

  void zero_grad() {
    for (auto& [_, t] : tensors_) t.zero_grad();
  }

 private:
  std::map<std::string, Tensor<T>> tensors_;
};

enum class Init { fan_in, he, zero };

/// Registers `<name>.weight` [co,ci,kt,kh,kw] and `<name>.bias` [co].
template <class T>
void add_conv(ParamStore<T>& ps, const std::string& name, Index co, Index ci, Triple k, Rng& rng,
              Init init = Init::fan_in) {
  const Index fan_in = ci * k[0] * k[1] * k[2];
  double bound = 0.0;
  if (init == Init::fan_in) bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  if (init == Init::he) bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  Shape ws{co, ci, k[0], k[1], k[2]};
  if (init == Init::zero) {
    ps.add(name + ".weight", Tensor<T>::zeros(ws));
    ps.add(name + ".bias", Tensor<T>::zeros({co}));
    return;
  }
  ps.add(name + ".weight", uniform_tensor<T>(ws, rng, -bound, bound));
  const double bias_bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  ps.add(name + ".bias", uniform_tensor<T>({co}, rng, -bias_bound, bias_bound));
}

/// Repeats the first and last frame `pad` times along T (axis 2).
template <class T>
Tensor<T> pad_time_replicate(const Tensor<T>& x, Index pad) {
  if (pad == 0) return x;
  const Index nt = x.dim(2);
  std::vector<Tensor<T>> parts;
  const auto first = slice(x, 2, 0, 1), last = slice(x, 2, nt - 1, 1);
  for (Index i = 0; i < pad; ++i) parts.push_back(first);
  parts.push_back(x);
  for (Index i = 0; i < pad; ++i) parts.push_back(last);
  return concat<T>(parts, 2);
}

/// Applies a registered conv with the given stride. Space is zero-padded by
/// k/2; time is replicate-padded so identical frames give identical outputs.
template <class T>
Tensor<T> apply_conv(const ParamStore<T>& ps, const std::string& name, const Tensor<T>& x,
                     Triple stride = {1, 1, 1}) {
  const auto& w = ps.get(name + ".weight");
  return conv3d(pad_time_replicate(x, w.dim(2) / 2), w, ps.get(name + ".bias"), stride,
                {0, w.dim(3) / 2, w.dim(4) / 2});
}

}  // namespace tcs
