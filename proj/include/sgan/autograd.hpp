#pragma once

// Minimal reverse-mode automatic differentiation over Tensor<T>.
//
// Every backward rule is written in terms of differentiable ops, so
// `grad(..., create_graph=true)` yields gradients that can themselves be
// differentiated (needed for the R1 penalty).

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "sgan/tensor.hpp"

namespace sgan::ag {

template <class T>
class Var;

template <class T>
struct Node {
  using BackwardFn = std::function<std::vector<Var<T>>(const Var<T>& grad, std::span<const bool> needs)>;

  Tensor<T> value;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  bool requires_grad = false;
  const char* op = "leaf";
};

template <class T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  /// In-place access for optimizers and EMA; never use while a graph that
  /// reads this node is still alive.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
  const char* op() const noexcept { return node_ ? node_->op : "undefined"; }

  /// Same value, cut from the graph.
  Var detach() const { return Var(node_->value, false); }

  Node<T>* node() const noexcept { return node_.get(); }
  const std::shared_ptr<Node<T>>& node_ptr() const noexcept { return node_; }

  static Var from_node(std::shared_ptr<Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

 private:
  std::shared_ptr<Node<T>> node_;
};

/// Graph recording is thread-local and on by default.
bool grad_enabled() noexcept;

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class EnableGradGuard {
 public:
  EnableGradGuard();
  ~EnableGradGuard();
  EnableGradGuard(const EnableGradGuard&) = delete;
  EnableGradGuard& operator=(const EnableGradGuard&) = delete;

 private:
  bool prev_;
};

/// Wraps an op result. Records a graph node only when recording is on and
/// some input requires a gradient.
template <class T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<Var<T>> inputs,
                   typename Node<T>::BackwardFn backward);

/// Gradients of sum(output) with respect to each of `inputs`. Inputs the
/// output does not depend on get zero tensors. With `create_graph` the
/// returned gradients are differentiable.
template <class T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph = false);

extern template class Var<float>;
extern template class Var<double>;

}  // namespace sgan::ag
