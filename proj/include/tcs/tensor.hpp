#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace tcs {

using Index = std::int64_t;
using Shape = std::vector<Index>;

inline Index numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), Index{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream oss;
  oss << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) oss << ',';
    oss << shape[i];
  }
  oss << ']';
  return oss.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class T>
class Tensor;

namespace detail {

template <class T>
struct TensorImpl;

template <class T>
using ImplPtr = std::shared_ptr<TensorImpl<T>>;

// One recorded primitive. The output owns its node; the node owns its inputs,
// so the graph is a DAG of shared pointers with no cycles.
template <class T>
struct Node {
  std::uint64_t seq = 0;
  const char* name = "";
  std::vector<ImplPtr<T>> inputs;
  std::function<void(TensorImpl<T>& out)> backward;
};

template <class T>
struct TensorImpl {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<Node<T>> node;

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
  }
};

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// Disables graph recording on the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

/// Dense row-major tensor with reverse-mode differentiation.
///
/// A Tensor is a cheap handle: copies share storage and graph position.
/// Operations in ops.hpp / conv.hpp record a node whenever grad mode is on and
/// at least one input requires a gradient.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    validate(shape);
    impl_->data.assign(static_cast<std::size_t>(tcs::numel(shape)), fill);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false)
      : impl_(std::make_shared<Impl>()) {
    validate(shape);
    if (static_cast<Index>(data.size()) != tcs::numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(data.size()) +
                       " does not match shape " + to_string(shape));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::move(data);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), T(0)); }
  static Tensor full(Shape shape, T value) { return Tensor(std::move(shape), value); }
  static Tensor scalar(T value) { return Tensor(Shape{}, value); }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int ndim() const { return static_cast<int>(impl_->shape.size()); }
  Index numel() const { return static_cast<Index>(impl_->data.size()); }

  Index dim(int axis) const {
    const int n = ndim();
    if (axis < 0) axis += n;
    if (axis < 0 || axis >= n) {
      throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " +
                       to_string(shape()));
    }
    return impl_->shape[static_cast<std::size_t>(axis)];
  }

  std::span<const T> data() const { return impl_->data; }
  // Writable view. Only valid on tensors that are not yet part of a recorded graph
  // (leaves, fresh outputs, or parameters between optimizer steps).
  std::span<T> mutable_data() { return impl_->data; }

  bool has_grad() const { return impl_->grad.size() == impl_->data.size() && !impl_->data.empty(); }
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() {
    impl_->ensure_grad();
    return impl_->grad;
  }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool value) {
    impl_->requires_grad = value;
    return *this;
  }
  bool is_leaf() const { return !impl_->node; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return impl_->data[0];
  }

  T at(std::initializer_list<Index> index) const { return impl_->data[offset(index)]; }

  Index offset(std::initializer_list<Index> index) const {
    if (static_cast<int>(index.size()) != ndim()) {
      throw ShapeError("index rank mismatch for shape " + to_string(shape()));
    }
    Index off = 0;
    std::size_t axis = 0;
    for (Index i : index) {
      const Index extent = impl_->shape[axis++];
      if (i < 0 || i >= extent) throw ShapeError("index out of range for shape " + to_string(shape()));
      off = off * extent + i;
    }
    return off;
  }

  /// New leaf holding a copy of the values, cut from the graph.
  Tensor detach() const { return Tensor(shape(), impl_->data, false); }

  /// Deep copy keeping requires_grad, as a new leaf.
  Tensor clone_leaf() const { return Tensor(shape(), impl_->data, impl_->requires_grad); }

  /// Reverse pass from a single-element tensor. Gradients accumulate into every
  /// reachable tensor that requires them; each node runs exactly once, in reverse
  /// recording order.
  void backward() const {
    if (numel() != 1) throw ShapeError("backward() requires a scalar, got " + to_string(shape()));
    if (!impl_->requires_grad) return;
    impl_->ensure_grad();
    impl_->grad[0] += T(1);

    std::vector<Impl*> order;
    std::unordered_set<const Impl*> seen;
    std::vector<Impl*> stack{impl_.get()};
    seen.insert(impl_.get());
    while (!stack.empty()) {
      Impl* cur = stack.back();
      stack.pop_back();
      if (!cur->node) continue;
      order.push_back(cur);
      for (const auto& in : cur->node->inputs) {
        if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in.get());
      }
    }
    std::sort(order.begin(), order.end(),
              [](const Impl* a, const Impl* b) { return a->node->seq > b->node->seq; });
    for (Impl* cur : order) {
      cur->ensure_grad();
      cur->node->backward(*cur);
    }
  }

  const std::shared_ptr<Impl>& impl() const { return impl_; }

  /// Builds an op output. Records `backward` only when grad mode is on and an
  /// input requires a gradient.
  static Tensor make_result(Shape shape, std::vector<T> data, std::vector<Tensor> inputs,
                            const char* name, std::function<void(Impl& out)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    if (!grad_enabled()) return out;
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    if (!needs) return out;
    auto node = std::make_shared<detail::Node<T>>();
    node->seq = detail::node_counter().fetch_add(1);
    node->name = name;
    node->inputs.reserve(inputs.size());
    for (auto& in : inputs) node->inputs.push_back(in.impl_);
    node->backward = std::move(backward);
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
    return out;
  }

 private:
  static void validate(const Shape& shape) {
    for (Index d : shape) {
      if (d < 0) throw ShapeError("negative extent in shape " + to_string(shape));
    }
  }

  std::shared_ptr<Impl> impl_;
};

// Gradient buffer of input `i` of a node, or nullptr when that input does not
// take a gradient.
template <class T>
T* input_grad(detail::TensorImpl<T>& out, std::size_t i) {
  auto& in = out.node->inputs[i];
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return in->grad.data();
}

template <class T>
const T* input_data(detail::TensorImpl<T>& out, std::size_t i) {
  return out.node->inputs[i]->data.data();
}

}  // namespace tcs
