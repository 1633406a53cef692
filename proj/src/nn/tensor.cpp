#include "lhmaploc/nn/tensor.hpp"

#include "lhmaploc/error.hpp"

#include <unordered_set>

namespace lhm::nn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

template <class T>
std::string Tensor<T>::shape_str() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

template <class T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.size() != value.size()) grad = Tensor<T>(value.n, value.c, value.h, value.w);
  return grad;
}

template <class T>
Var<T> constant(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  return node;
}

template <class T>
Var<T> parameter(Tensor<T> value) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->requires_grad = true;
  return node;
}

template <class T>
void backward(const std::vector<Var<T>>& roots, const std::vector<Tensor<T>>& seeds) {
  if (roots.size() != seeds.size()) {
    throw Error(ErrorCode::kShape, "backward needs one seed per root");
  }
  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  for (const auto& r : roots) {
    if (!r || visited.count(r.get())) continue;
    visited.insert(r.get());
    stack.emplace_back(r.get(), 0);
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->parents.size()) {
        Node<T>* p = node->parents[next++].get();
        if (p && p->requires_grad && !visited.count(p)) {
          visited.insert(p);
          stack.emplace_back(p, 0);
        }
      } else {
        order.push_back(node);
        stack.pop_back();
      }
    }
  }
  for (std::size_t i = 0; i < roots.size(); ++i) {
    if (!roots[i]->requires_grad) continue;
    if (!seeds[i].same_shape(roots[i]->value)) {
      throw Error(ErrorCode::kShape, "backward seed shape " + seeds[i].shape_str() +
                                         " does not match root " + roots[i]->value.shape_str());
    }
    auto& g = roots[i]->grad_buffer();
    for (std::size_t k = 0; k < g.size(); ++k) g.data[k] += seeds[i].data[k];
  }
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* node = *it;
    if (node->backward_fn && node->grad.size() == node->value.size()) node->backward_fn(*node);
  }
}

template <class T>
void backward(const Var<T>& scalar_root) {
  Tensor<T> seed(scalar_root->value.n, scalar_root->value.c, scalar_root->value.h,
                 scalar_root->value.w, T(1));
  backward<T>(std::vector<Var<T>>{scalar_root}, std::vector<Tensor<T>>{std::move(seed)});
}

#define LHM_INSTANTIATE(T)                                                              \
  template struct Tensor<T>;                                                            \
  template struct Node<T>;                                                              \
  template Var<T> constant<T>(Tensor<T>);                                               \
  template Var<T> parameter<T>(Tensor<T>);                                              \
  template void backward<T>(const std::vector<Var<T>>&, const std::vector<Tensor<T>>&); \
  template void backward<T>(const Var<T>&);

LHM_INSTANTIATE(float)
LHM_INSTANTIATE(double)
#undef LHM_INSTANTIATE

}  // namespace lhm::nn
