#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace lhm::nn {

/// Dense NCHW tensor. Two-dimensional data (batch × features) uses h = w = 1.
template <class T>
struct Tensor {
  int n = 0, c = 0, h = 1, w = 1;
  std::vector<T> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_ = 1, int w_ = 1, T fill = T(0))
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t size() const { return data.size(); }
  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
  std::string shape_str() const;

  T& at(int in, int ic, int ih, int iw) {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  T at(int in, int ic, int ih, int iw) const {
    return data[((static_cast<std::size_t>(in) * c + ic) * h + ih) * w + iw];
  }
  T* image(int in) { return data.data() + static_cast<std::size_t>(in) * c * plane(); }
  const T* image(int in) const { return data.data() + static_cast<std::size_t>(in) * c * plane(); }
};

template <class T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // allocated on first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  Tensor<T>& grad_buffer();
};

/// Handle to a node of the autodiff tape.
template <class T>
using Var = std::shared_ptr<Node<T>>;

template <class T>
Var<T> constant(Tensor<T> value);

/// Leaf that accumulates gradients.
template <class T>
Var<T> parameter(Tensor<T> value);

/// Whether newly created ops record backward closures on this thread.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Reverse-mode sweep from `roots`, seeded with `seeds` (same shapes).
template <class T>
void backward(const std::vector<Var<T>>& roots, const std::vector<Tensor<T>>& seeds);

/// Scalar root seeded with 1.
template <class T>
void backward(const Var<T>& scalar_root);

}  // namespace lhm::nn
