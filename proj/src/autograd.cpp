#include "sgan/autograd.hpp"

#include <unordered_map>
#include <unordered_set>

#include "sgan/ops.hpp"

namespace sgan::ag {
namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }
EnableGradGuard::EnableGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = true; }
EnableGradGuard::~EnableGradGuard() { g_grad_enabled = prev_; }

template <class T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <class T>
Var<T> make_result(Tensor<T> value, const char* op, std::vector<Var<T>> inputs,
                   typename Node<T>::BackwardFn backward) {
  bool any = false;
  if (g_grad_enabled)
    for (const auto& in : inputs) any = any || in.requires_grad();
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    for (auto& in : inputs) node->parents.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Var<T>::from_node(std::move(node));
}

template <class T>
std::vector<Var<T>> grad(const Var<T>& output, std::span<const Var<T>> inputs, bool create_graph) {
  std::vector<Var<T>> result(inputs.size());
  std::unordered_set<const Node<T>*> input_set;
  for (const auto& in : inputs) input_set.insert(in.node());

  // Post-order DFS: parents appear before children.
  std::vector<Node<T>*> order;
  std::unordered_set<const Node<T>*> visited;
  if (output.requires_grad()) {
    std::vector<std::pair<Node<T>*, size_t>> stack{{output.node(), 0}};
    visited.insert(output.node());
    while (!stack.empty()) {
      auto& [n, idx] = stack.back();
      if (idx < n->parents.size()) {
        Node<T>* p = n->parents[idx++].get();
        if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
  }

  std::unordered_set<const Node<T>*> needed;
  for (Node<T>* n : order) {
    bool need = input_set.count(n) > 0;
    for (const auto& p : n->parents) need = need || needed.count(p.get()) > 0;
    if (need) needed.insert(n);
  }

  std::unordered_map<const Node<T>*, Var<T>> grads;
  {
    std::unique_ptr<NoGradGuard> off;
    std::unique_ptr<EnableGradGuard> on;
    if (create_graph)
      on = std::make_unique<EnableGradGuard>();
    else
      off = std::make_unique<NoGradGuard>();

    if (needed.count(output.node())) grads[output.node()] = Var<T>(Tensor<T>::ones(output.shape()));

    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      Node<T>* n = *it;
      auto git = grads.find(n);
      if (git == grads.end() || !n->backward) continue;
      const size_t np = n->parents.size();
      std::unique_ptr<bool[]> flags(new bool[np]);
      bool any = false;
      for (size_t i = 0; i < np; ++i) {
        flags[i] = needed.count(n->parents[i].get()) > 0;
        any = any || flags[i];
      }
      if (!any) continue;
      const Var<T> g = git->second;
      if (!input_set.count(n)) grads.erase(git);
      std::vector<Var<T>> pg = n->backward(g, std::span<const bool>(flags.get(), np));
      for (size_t i = 0; i < n->parents.size(); ++i) {
        if (!flags[i] || !pg[i].defined()) continue;
        const Node<T>* p = n->parents[i].get();
        auto pit = grads.find(p);
        if (pit == grads.end())
          grads.emplace(p, pg[i]);
        else
          pit->second = ops::add(pit->second, pg[i]);
      }
    }
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    auto it = grads.find(inputs[i].node());
    if (it != grads.end())
      result[i] = it->second;
    else
      result[i] = Var<T>(Tensor<T>::zeros(inputs[i].shape()));
  }
  return result;
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(Tensor<float>, const char*, std::vector<Var<float>>, Node<float>::BackwardFn);
template Var<double> make_result(Tensor<double>, const char*, std::vector<Var<double>>, Node<double>::BackwardFn);
template std::vector<Var<float>> grad(const Var<float>&, std::span<const Var<float>>, bool);
template std::vector<Var<double>> grad(const Var<double>&, std::span<const Var<double>>, bool);

}  // namespace sgan::ag
