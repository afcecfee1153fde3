#include "kmaml/numerics/autodiff.hpp"

#include <unordered_map>
#include <unordered_set>
#include <utility>

#include "kmaml/numerics/errors.hpp"
#include "kmaml/numerics/ops.hpp"

namespace kmaml::ad {

namespace {

thread_local bool g_grad_enabled = true;
thread_local std::vector<std::string> g_labels;

}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

ScopedLabel::ScopedLabel(std::string label) { g_labels.push_back(std::move(label)); }
ScopedLabel::~ScopedLabel() { g_labels.pop_back(); }

std::string current_label() {
  std::string out;
  for (const auto& l : g_labels) {
    if (!out.empty()) out += '/';
    out += l;
  }
  return out;
}

template <typename T>
Var<T> Var<T>::constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::leaf(Tensor<T> value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = requires_grad;
  return Var(std::move(node));
}

template <typename T>
Var<T> Var<T>::record(Tensor<T> value, const char* op, std::vector<Var> inputs, BackwardFn<T> backward) {
  if (!value.all_finite()) {
    const std::string label = current_label();
    throw NumericError(std::string("non-finite result of ") + op + (label.empty() ? "" : " in " + label));
  }
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  if (g_grad_enabled) {
    for (const auto& in : inputs) any = any || in.requires_grad();
  }
  if (any) {
    node->requires_grad = true;
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
  }
  return Var(std::move(node));
}

template <typename T>
std::vector<Var<T>> grad(const Var<T>& output, const std::vector<Var<T>>& wrt, bool create_graph) {
  if (!output.defined() || output.value().numel() != 1) {
    throw DimensionError("grad: output must be a single-element tensor");
  }
  using NodePtr = const Node<T>*;
  std::unordered_set<NodePtr> targets;
  for (const auto& w : wrt) {
    if (w.defined()) targets.insert(w.node());
  }

  // Post-order DFS over nodes that require grad; `relevant` marks nodes from
  // which some target is reachable.
  std::vector<NodePtr> order;
  std::unordered_map<NodePtr, bool> relevant;
  if (output.requires_grad()) {
    std::vector<std::pair<NodePtr, std::size_t>> stack{{output.node(), 0}};
    relevant[output.node()] = false;
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const Var<T>& in = node->inputs[next++];
        if (in.requires_grad() && !relevant.contains(in.node())) {
          relevant[in.node()] = false;
          stack.emplace_back(in.node(), 0);
        }
        continue;
      }
      bool r = targets.contains(node);
      for (const auto& in : node->inputs) {
        if (in.requires_grad() && relevant[in.node()]) r = true;
      }
      relevant[node] = r;
      order.push_back(node);
      stack.pop_back();
    }
  }

  std::unordered_map<NodePtr, Var<T>> grads;
  {
    GradModeGuard mode(create_graph);
    if (output.requires_grad()) {
      grads[output.node()] = Var<T>::constant(Tensor<T>(output.shape(), T(1)));
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      NodePtr node = *it;
      if (!relevant[node] || !node->backward) continue;
      auto g = grads.find(node);
      if (g == grads.end()) continue;
      std::vector<bool> needs(node->inputs.size(), false);
      bool any = false;
      for (std::size_t i = 0; i < needs.size(); ++i) {
        const auto& in = node->inputs[i];
        needs[i] = in.requires_grad() && relevant[in.node()];
        any = any || needs[i];
      }
      if (!any) continue;
      const Var<T> upstream = g->second;
      std::vector<Var<T>> in_grads = node->backward(upstream, needs);
      for (std::size_t i = 0; i < needs.size(); ++i) {
        if (!needs[i] || !in_grads[i].defined()) continue;
        NodePtr in = node->inputs[i].node();
        auto existing = grads.find(in);
        if (existing == grads.end()) {
          grads.emplace(in, std::move(in_grads[i]));
        } else {
          existing->second = add(existing->second, in_grads[i]);
        }
      }
    }
  }

  std::vector<Var<T>> result;
  result.reserve(wrt.size());
  for (const auto& w : wrt) {
    auto g = w.defined() ? grads.find(w.node()) : grads.end();
    if (g != grads.end()) {
      result.push_back(g->second);
    } else {
      result.push_back(Var<T>::constant(Tensor<T>(w.shape(), T(0))));
    }
  }
  return result;
}

template <typename T>
VarMap<T> grad(const Var<T>& output, const VarMap<T>& wrt, bool create_graph) {
  std::vector<Var<T>> vars;
  vars.reserve(wrt.size());
  for (const auto& [name, v] : wrt) vars.push_back(v);
  auto gs = grad(output, vars, create_graph);
  VarMap<T> out;
  std::size_t i = 0;
  for (const auto& [name, v] : wrt) out.emplace(name, std::move(gs[i++]));
  return out;
}

template <typename T>
VarMap<T> make_leaves(const TensorMap<T>& values, bool requires_grad) {
  VarMap<T> out;
  for (const auto& [name, t] : values) out.emplace(name, Var<T>::leaf(t, requires_grad));
  return out;
}

template <typename T>
VarMap<T> make_constants(const TensorMap<T>& values) {
  return make_leaves(values, false);
}

template <typename T>
TensorMap<T> values_of(const VarMap<T>& vars) {
  TensorMap<T> out;
  for (const auto& [name, v] : vars) out.emplace(name, v.value());
  return out;
}

#define KMAML_INSTANTIATE_AD(T)                                                                   \
  template class Var<T>;                                                                          \
  template std::vector<Var<T>> grad(const Var<T>&, const std::vector<Var<T>>&, bool);             \
  template VarMap<T> grad(const Var<T>&, const VarMap<T>&, bool);                                 \
  template VarMap<T> make_leaves(const TensorMap<T>&, bool);                                      \
  template VarMap<T> make_constants(const TensorMap<T>&);                                         \
  template TensorMap<T> values_of(const VarMap<T>&);

KMAML_INSTANTIATE_AD(float)
KMAML_INSTANTIATE_AD(double)

}  // namespace kmaml::ad
