#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "bwssl/common.hpp"

namespace bwssl {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
class Tensor;

// A recorded operation: its inputs and the rule that pushes the output
// gradient back into them.
template <typename T>
struct GradFn {
  std::string op;
  std::vector<Tensor<T>> inputs;
  std::function<void(std::span<const T> grad_out)> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::shared_ptr<std::vector<T>> data;
  std::vector<T> grad;
  bool requires_grad = false;
  std::shared_ptr<GradFn<T>> grad_fn;
};

/// Dense row-major array with an optional link into the differentiation
/// graph. Copies are shallow handles; values produced by operations are never
/// modified afterwards. Leaves (parameters) may be updated in place by an
/// optimizer between steps.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() : impl_(std::make_shared<TensorImpl<T>>()) {
    impl_->data = std::make_shared<std::vector<T>>();
  }

  explicit Tensor(Shape shape, T fill = T(0)) : impl_(std::make_shared<TensorImpl<T>>()) {
    const auto n = bwssl::numel(shape);
    impl_->shape = std::move(shape);
    impl_->data = std::make_shared<std::vector<T>>(n, fill);
  }

  Tensor(Shape shape, std::vector<T> values) : impl_(std::make_shared<TensorImpl<T>>()) {
    if (bwssl::numel(shape) != values.size()) {
      throw ShapeError(detail::concat("tensor of shape ", to_string(shape), " given ",
                                      values.size(), " values"));
    }
    impl_->shape = std::move(shape);
    impl_->data = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }
  static Tensor vector(std::vector<T> v) {
    const auto n = v.size();
    return Tensor(Shape{n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<T> v) {
    return Tensor(Shape{rows, cols}, std::move(v));
  }

  // Shares storage with `data`; used for views that do not copy.
  static Tensor alias(Shape shape, std::shared_ptr<std::vector<T>> data) {
    Tensor t;
    t.impl_->shape = std::move(shape);
    t.impl_->data = std::move(data);
    return t;
  }

  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape.at(i); }
  std::size_t numel() const { return impl_->data->size(); }

  std::span<const T> data() const { return *impl_->data; }
  // Mutable access is for leaves only (initialisation, optimizer, loading).
  std::span<T> mutable_data() { return *impl_->data; }
  const std::shared_ptr<std::vector<T>>& storage() const { return impl_->data; }

  T operator[](std::size_t i) const { return (*impl_->data)[i]; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return (*impl_->data)[0];
  }

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool on) {
    impl_->requires_grad = on;
    return *this;
  }

  bool is_leaf() const { return !impl_->grad_fn; }
  const std::shared_ptr<GradFn<T>>& grad_fn() const { return impl_->grad_fn; }
  void set_grad_fn(std::shared_ptr<GradFn<T>> fn) { impl_->grad_fn = std::move(fn); }

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient view; empty if nothing has been accumulated yet.
  std::span<const T> grad() const { return impl_->grad; }
  std::span<T> mutable_grad() { return impl_->grad; }
  // Gradient storage, allocated as zeros on first use.
  std::vector<T>& grad_buffer() const {
    if (impl_->grad.size() != numel()) impl_->grad.assign(numel(), T(0));
    return impl_->grad;
  }
  void zero_grad() {
    if (!impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), T(0));
  }
  void release_grad() {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
  // Gradient values, zeros if never touched.
  std::vector<T> grad_or_zero() const {
    return has_grad() ? impl_->grad : std::vector<T>(numel(), T(0));
  }

  // New leaf sharing this tensor's values, cut from the graph.
  Tensor detach() const { return alias(shape(), impl_->data); }

  // Deep copy of the values (no graph link).
  Tensor clone() const { return Tensor(shape(), *impl_->data); }

  const TensorImpl<T>* id() const { return impl_.get(); }
  bool same(const Tensor& other) const { return impl_ == other.impl_; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> v(numel());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<U>((*impl_->data)[i]);
    return Tensor<U>(shape(), std::move(v));
  }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

/// Graph recording switch; off inside a NoGradGuard scope (per thread).
inline bool& grad_enabled() {
  thread_local bool on = true;
  return on;
}

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { grad_enabled() = false; }
  ~NoGradGuard() { grad_enabled() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// ---------------------------------------------------------------------------
// Tape: the operations reachable from a loss, in topological order.
// ---------------------------------------------------------------------------

template <typename T>
class Tape {
 public:
  /// Records every differentiable node reachable from `root` such that each
  /// node's inputs appear before it.
  static Tape record(const Tensor<T>& root) {
    Tape tape;
    if (!root.requires_grad()) return tape;
    std::unordered_set<const TensorImpl<T>*> seen;
    // Iterative post-order DFS; graphs can be hundreds of nodes deep.
    std::vector<std::pair<Tensor<T>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    seen.insert(root.id());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      const auto& fn = node.grad_fn();
      if (fn && next < fn->inputs.size()) {
        const Tensor<T> child = fn->inputs[next++];
        if (child.requires_grad() && seen.insert(child.id()).second) stack.emplace_back(child, 0);
        continue;
      }
      tape.nodes_.push_back(node);
      stack.pop_back();
    }
    return tape;
  }

  const std::vector<Tensor<T>>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

  /// Seeds d(root)/d(root) = seed and replays backward rules in reverse order.
  /// Leaf gradients accumulate; interior gradients are scratch and released.
  void replay(T seed = T(1)) {
    if (nodes_.empty()) return;
    for (auto& n : nodes_) {
      if (!n.is_leaf()) n.release_grad();
    }
    auto& root = nodes_.back();
    root.grad_buffer()[0] += seed;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      auto& n = *it;
      if (n.is_leaf() || !n.has_grad()) continue;
      n.grad_fn()->backward(n.grad());
      n.release_grad();
    }
  }

 private:
  std::vector<Tensor<T>> nodes_;
};

/// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
template <typename T>
void backward(const Tensor<T>& loss, T seed = T(1)) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar loss, got shape " + to_string(loss.shape()));
  }
  auto tape = Tape<T>::record(loss);
  tape.replay(seed);
}

}  // namespace bwssl
