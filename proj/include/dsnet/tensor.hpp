#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "dsnet/common.hpp"
#include "dsnet/rng.hpp"

namespace dsnet {

namespace detail {

template <typename S>
struct TensorNode {
  Shape shape;
  std::vector<S> value;
  std::vector<S> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  bool leaf = true;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backprop;  // scatters this->grad to parents

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), S(0));
  }
};

/// Thread-local switch: when disabled, ops produce detached leaves.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII guard that disables graph construction (evaluation / inference).
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_flag()) {
    detail::grad_mode_flag() = false;
  }
  ~NoGradGuard() { detail::grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major tensor with optional gradient tracking. Copying a Tensor
/// copies the handle, not the storage; ops return fresh tensors.
template <typename S>
class Tensor {
 public:
  using Node = detail::TensorNode<S>;

  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return full(std::move(shape), S(0), requires_grad);
  }

  static Tensor full(Shape shape, S v, bool requires_grad = false) {
    auto node = std::make_shared<Node>();
    node->value.assign(static_cast<std::size_t>(numel(shape)), v);
    node->shape = std::move(shape);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  static Tensor from(Shape shape, std::vector<S> data,
                     bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != numel(shape)) {
      throw ShapeError("tensor data size " + std::to_string(data.size()) +
                       " does not match shape " + shape_str(shape));
    }
    auto node = std::make_shared<Node>();
    node->shape = std::move(shape);
    node->value = std::move(data);
    node->requires_grad = requires_grad;
    if (requires_grad) node->ensure_grad();
    return Tensor(std::move(node));
  }

  /// Uniform(-bound, bound) fill, the fan-in scaled init used by all layers.
  static Tensor uniform(Shape shape, S bound, Rng& rng,
                        bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    for (auto& x : t.node_->value) {
      x = static_cast<S>(rng.uniform(-static_cast<double>(bound),
                                     static_cast<double>(bound)));
    }
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(node_->value.size());
  }
  std::int64_t dim(std::size_t axis) const { return node_->shape[axis]; }
  std::size_t ndim() const { return node_->shape.size(); }

  S* data() { return node_->value.data(); }
  const S* data() const { return node_->value.data(); }
  std::vector<S>& values() { return node_->value; }
  const std::vector<S>& values() const { return node_->value; }

  S item() const {
    if (size() != 1) {
      throw ShapeError("item() requires a scalar tensor, got shape " +
                       shape_str(shape()));
    }
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }

  const std::vector<S>& grad() const {
    if (!node_->requires_grad) {
      throw Error("tensor does not track gradients");
    }
    const_cast<Node*>(node_.get())->ensure_grad();
    return node_->grad;
  }

  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), S(0));
  }

  std::shared_ptr<Node> node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

namespace detail {

/// Builds a non-leaf node. Drops the graph edges when grad mode is off or no
/// parent tracks gradients.
template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> value,
                  std::vector<std::shared_ptr<TensorNode<S>>> parents,
                  std::function<void(TensorNode<S>&)> backprop) {
  auto node = std::make_shared<TensorNode<S>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool track = grad_mode_flag();
  if (track) {
    track = false;
    for (const auto& p : parents) track = track || p->requires_grad;
  }
  if (track) {
    node->requires_grad = true;
    node->leaf = false;
    node->parents = std::move(parents);
    node->backprop = std::move(backprop);
  }
  return Tensor<S>(std::move(node));
}

}  // namespace detail

/// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate across
/// calls; interior gradients are reset each sweep.
template <typename S>
void backward(const Tensor<S>& loss) {
  using Node = detail::TensorNode<S>;
  if (loss.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " +
                     shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) {
    throw Error("backward called on a loss that is not connected to any "
                "gradient-tracking tensor");
  }

  // Iterative post-order DFS.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(loss.node().get(), 0);
  visited.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next_child] = stack.back();
    if (next_child < node->parents.size()) {
      Node* child = node->parents[next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) {
    n->ensure_grad();
    if (!n->leaf) std::fill(n->grad.begin(), n->grad.end(), S(0));
  }
  loss.node()->grad[0] += S(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

}  // namespace dsnet
