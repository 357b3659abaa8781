#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <unordered_set>
#include <utility>
#include <vector>

#include "sdmg/errors.hpp"

namespace sdmg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

namespace detail {

// One vertex of the computation tape. Results of differentiable ops keep
// their operands alive through `parents`; `backward` reads `grad` of this
// node and accumulates into the parents' grads.
template <class T>
struct Node {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    return grad;
  }
};

}  // namespace detail

/// Dense row-major array with optional gradient tracking.
///
/// Copies are shallow: two handles to the same tensor observe the same data
/// and gradient. Values of op results are never modified after creation;
/// only leaves (parameters) are updated in place by the optimizer.
template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : Tensor(shape, std::vector<T>(numel_of(shape), T(0)), requires_grad) {}

  Tensor(Shape shape, std::vector<T> data, bool requires_grad = false) : node_(std::make_shared<detail::Node<T>>()) {
    for (auto e : shape) {
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    }
    if (numel_of(shape) != data.size()) {
      throw DimensionError("shape " + shape_str(shape) + " does not match data length " + std::to_string(data.size()));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) { return Tensor({1}, {v}, requires_grad); }
  static Tensor vec(std::vector<T> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v), requires_grad);
  }
  static Tensor mat(std::size_t rows, std::size_t cols, std::vector<T> v, bool requires_grad = false) {
    return Tensor({rows, cols}, std::move(v), requires_grad);
  }
  static Tensor from_node(NodePtr node) {
    Tensor t;
    t.node_ = std::move(node);
    return t;
  }

  bool defined() const noexcept { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t extent(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<const T> data() const { return node_->value; }
  /// In-place access for parameter updates and finite-difference probes.
  std::span<T> mutable_data() { return node_->value; }
  T operator[](std::size_t i) const { return node_->value[i]; }
  T at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape.back() + c]; }
  T item() const {
    if (numel() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  std::vector<T> to_vector() const { return node_->value; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->grad.size() == node_->value.size(); }
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() {
    if (node_->requires_grad) node_->grad.assign(node_->value.size(), T(0));
    else node_->grad.clear();
  }

  /// Value copy detached from the tape.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

namespace detail {

template <class T>
bool all_finite(std::span<const T> v) {
  for (T x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

// Creates the result of an op. The backward closure is recorded only when
// some operand participates in differentiation.
template <class T>
Tensor<T> make_result(const char* op, Shape shape, std::vector<T> value, std::initializer_list<const Tensor<T>*> parents,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  node->is_leaf = false;
#ifndef NDEBUG
  bool inputs_finite = true;
  for (const Tensor<T>* p : parents) inputs_finite = inputs_finite && all_finite<T>(p->data());
  if (inputs_finite && !all_finite<T>(node->value)) {
    throw NumericError(std::string("non-finite output from ") + op);
  }
#endif
  bool track = false;
  for (const Tensor<T>* p : parents) track = track || p->requires_grad();
  if (track) {
    node->requires_grad = true;
    for (const Tensor<T>* p : parents) node->parents.push_back(p->node());
    node->backward = std::move(backward);
  }
  return Tensor<T>::from_node(std::move(node));
}

// Nodes reachable from `root` through differentiable edges, each after all
// of its parents (forward execution order).
template <class T>
std::vector<Node<T>*> tape_order(Node<T>* root) {
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{root, 0}};
  seen.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace detail

/// Reverse-mode pass from a scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are recomputed from scratch each time.
template <class T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ValidationError("backward() needs a scalar loss, got " + (loss.defined() ? shape_str(loss.shape()) : "undefined"));
  }
  if (!loss.requires_grad()) return;
  auto order = detail::tape_order(loss.node().get());
  for (auto* n : order) {
    if (!n->is_leaf) n->grad.assign(n->value.size(), T(0));
  }
  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

}  // namespace sdmg
