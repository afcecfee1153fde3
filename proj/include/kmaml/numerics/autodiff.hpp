#pragma once

// Tape-free reverse-mode differentiation. Every recorded operation keeps its
// inputs alive through shared ownership; `grad` walks the resulting DAG.
//
// Backward rules are themselves written with differentiable operations, so a
// gradient computed with `create_graph = true` can be differentiated again
// (used by the unrolled bi-level mode).

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "kmaml/numerics/tensor.hpp"

namespace kmaml::ad {

template <typename T>
class Var;

template <typename T>
using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad_out, const std::vector<bool>& needs)>;

template <typename T>
struct Node {
  Tensor<T> value;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<Var<T>> inputs;
  BackwardFn<T> backward;
};

/// Shared handle to a value in the differentiation graph.
template <typename T>
class Var {
 public:
  Var() = default;

  /// A value that never receives a gradient (data, masks).
  static Var constant(Tensor<T> value);
  /// A trainable leaf.
  static Var leaf(Tensor<T> value, bool requires_grad = true);

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const char* op() const { return node_->op; }

  /// New leaf holding a copy of this value, cut from the graph.
  Var detach(bool requires_grad = false) const { return leaf(node_->value, requires_grad); }

  const Node<T>* node() const { return node_.get(); }

  /// Records a new operation node. Inputs and backward are kept only when
  /// grad mode is on and at least one input requires a gradient.
  static Var record(Tensor<T> value, const char* op, std::vector<Var> inputs, BackwardFn<T> backward);

 private:
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}
  std::shared_ptr<Node<T>> node_;
};

template <typename T>
using VarMap = std::map<std::string, Var<T>>;

bool grad_enabled();

/// Disables recording within its scope.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Sets recording to an explicit state within its scope.
class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled);
  ~GradModeGuard();
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool previous_;
};

/// Labels operations created in scope; non-finite errors report the label.
class ScopedLabel {
 public:
  explicit ScopedLabel(std::string label);
  ~ScopedLabel();
  ScopedLabel(const ScopedLabel&) = delete;
  ScopedLabel& operator=(const ScopedLabel&) = delete;
};

std::string current_label();

/// Gradients of a scalar (single element) `output` with respect to each of
/// `wrt`. Unreachable targets get zero gradients. With `create_graph` the
/// returned gradients are themselves differentiable.
template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt, bool create_graph = false);

/// Convenience wrapper over named variables.
template <typename T>
VarMap<T> grad(const Var<T>& output, const VarMap<T>& wrt, bool create_graph = false);

template <typename T>
VarMap<T> make_leaves(const TensorMap<T>& values, bool requires_grad);

template <typename T>
VarMap<T> make_constants(const TensorMap<T>& values);

template <typename T>
TensorMap<T> values_of(const VarMap<T>& vars);

}  // namespace kmaml::ad
