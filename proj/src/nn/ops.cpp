#include "lhmaploc/nn/ops.hpp"

#include "lhmaploc/error.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>

namespace lhm::nn {

namespace {

thread_local BranchRecorder* g_recorder = nullptr;

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapMat = Eigen::Map<RowMat<T>>;
template <class T>
using CMapMat = Eigen::Map<const RowMat<T>>;

template <class T>
Var<T> make_op(Tensor<T> value, std::vector<Var<T>> parents, std::function<void(Node<T>&)> fn) {
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& p : parents) any = any || p->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->parents = std::move(parents);
      node->backward_fn = std::move(fn);
    }
  }
  return node;
}

[[noreturn]] void shape_error(const std::string& what) { throw Error(ErrorCode::kShape, what); }

template <class T>
void im2col(const T* img, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
            T* col) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = img + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int cin, int h, int w, int k, int stride, int pad, int ho, int wo,
                T* img) {
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::size_t>(c) * k + ky) * k + kx) * p;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = img + (static_cast<std::size_t>(c) * h + iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

struct BilinearTap {
  int i0, i1;
  double frac;
};

// Half-pixel-center source coordinates, clamped at the low edge.
std::vector<BilinearTap> bilinear_taps(int in, int out) {
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = std::min(static_cast<int>(std::floor(src)), in - 1);
    int i1 = std::min(i0 + 1, in - 1);
    taps[o] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad) {
  const auto& X = x->value;
  const auto& W = weight->value;
  const int k = W.h;
  if (W.w != k || W.c != X.c || bias->value.size() != static_cast<std::size_t>(W.n)) {
    shape_error("conv2d: input " + X.shape_str() + " incompatible with weight " + W.shape_str());
  }
  const int ho = (X.h + 2 * pad - k) / stride + 1;
  const int wo = (X.w + 2 * pad - k) / stride + 1;
  if (ho <= 0 || wo <= 0) shape_error("conv2d: empty output for input " + X.shape_str());
  const int cout = W.n;
  const int kk = X.c * k * k;
  const int p = ho * wo;

  Tensor<T> out(X.n, cout, ho, wo);
  std::vector<T> col(static_cast<std::size_t>(kk) * p);
  CMapMat<T> wm(W.data.data(), cout, kk);
  for (int n = 0; n < X.n; ++n) {
    im2col(X.image(n), X.c, X.h, X.w, k, stride, pad, ho, wo, col.data());
    MapMat<T> om(out.image(n), cout, p);
    om.noalias() = wm * CMapMat<T>(col.data(), kk, p);
    for (int c = 0; c < cout; ++c) om.row(c).array() += bias->value.data[c];
  }

  return make_op<T>(std::move(out), {x, weight, bias}, [stride, pad, ho, wo](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const auto& X = xn.value;
    const auto& W = wn.value;
    const int k = W.h, cout = W.n, kk = X.c * k * k, p = ho * wo;
    std::vector<T> col(static_cast<std::size_t>(kk) * p);
    std::vector<T> dcol(xn.requires_grad ? col.size() : 0);
    CMapMat<T> wm(W.data.data(), cout, kk);
    for (int n = 0; n < X.n; ++n) {
      CMapMat<T> g(self.grad.image(n), cout, p);
      if (bn.requires_grad) {
        auto& db = bn.grad_buffer();
        for (int c = 0; c < cout; ++c) db.data[c] += g.row(c).sum();
      }
      if (wn.requires_grad) {
        im2col(X.image(n), X.c, X.h, X.w, k, stride, pad, ho, wo, col.data());
        MapMat<T> dw(wn.grad_buffer().data.data(), cout, kk);
        dw.noalias() += g * CMapMat<T>(col.data(), kk, p).transpose();
      }
      if (xn.requires_grad) {
        MapMat<T>(dcol.data(), kk, p).noalias() = wm.transpose() * g;
        col2im_add(dcol.data(), X.c, X.h, X.w, k, stride, pad, ho, wo,
                   xn.grad_buffer().image(n));
      }
    }
  });
}

template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  const auto& X = x->value;
  const auto& W = weight->value;
  const int f = X.c * X.h * X.w;
  if (W.c != f || bias->value.size() != static_cast<std::size_t>(W.n)) {
    shape_error("linear: input " + X.shape_str() + " incompatible with weight " + W.shape_str());
  }
  Tensor<T> out(X.n, W.n);
  CMapMat<T> xm(X.data.data(), X.n, f);
  CMapMat<T> wm(W.data.data(), W.n, f);
  MapMat<T> om(out.data.data(), X.n, W.n);
  om.noalias() = xm * wm.transpose();
  for (int n = 0; n < X.n; ++n)
    for (int o = 0; o < W.n; ++o) om(n, o) += bias->value.data[o];

  return make_op<T>(std::move(out), {x, weight, bias}, [f](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& wn = *self.parents[1];
    auto& bn = *self.parents[2];
    const int batch = xn.value.n, fo = wn.value.n;
    CMapMat<T> g(self.grad.data.data(), batch, fo);
    if (xn.requires_grad) {
      MapMat<T>(xn.grad_buffer().data.data(), batch, f).noalias() +=
          g * CMapMat<T>(wn.value.data.data(), fo, f);
    }
    if (wn.requires_grad) {
      MapMat<T>(wn.grad_buffer().data.data(), fo, f).noalias() +=
          g.transpose() * CMapMat<T>(xn.value.data.data(), batch, f);
    }
    if (bn.requires_grad) {
      auto& db = bn.grad_buffer();
      for (int o = 0; o < fo; ++o) db.data[o] += g.col(o).sum();
    }
  });
}

BranchRecorder::BranchRecorder() : previous_(g_recorder) { g_recorder = this; }
BranchRecorder::~BranchRecorder() { g_recorder = previous_; }
BranchRecorder* BranchRecorder::active() { return g_recorder; }

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = v > 0 ? v : v * slope;
  if (auto* rec = BranchRecorder::active())
    for (std::size_t i = 0; i < out.size(); ++i) rec->record(x->value.data[i] > 0 ? 2 * i + 1 : 2 * i);
  return make_op<T>(std::move(out), {x}, [slope](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& g = xn.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g.data[i] += self.grad.data[i] * (xn.value.data[i] > 0 ? T(1) : slope);
  });
}

template <class T>
Var<T> relu(const Var<T>& x) {
  return leaky_relu<T>(x, T(0));
}

template <class T>
Var<T> softplus(const Var<T>& x) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v = v > T(20) ? v : std::log1p(std::exp(v));
  return make_op<T>(std::move(out), {x}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& g = xn.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xn.value.data[i];
      g.data[i] += self.grad.data[i] / (T(1) + std::exp(-v));
    }
  });
}

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (!a->value.same_shape(b->value)) {
    shape_error("add: " + a->value.shape_str() + " vs " + b->value.shape_str());
  }
  Tensor<T> out = a->value;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b->value.data[i];
  return make_op<T>(std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      auto& g = p->grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i];
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out = x->value;
  for (auto& v : out.data) v *= factor;
  return make_op<T>(std::move(out), {x}, [factor](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[i] * factor;
  });
}

template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) shape_error("concat_channels: no inputs");
  const auto& first = xs.front()->value;
  int channels = 0;
  for (const auto& x : xs) {
    const auto& v = x->value;
    if (v.n != first.n || v.h != first.h || v.w != first.w) {
      shape_error("concat_channels: " + v.shape_str() + " vs " + first.shape_str());
    }
    channels += v.c;
  }
  Tensor<T> out(first.n, channels, first.h, first.w);
  const std::size_t plane = first.plane();
  for (int n = 0; n < first.n; ++n) {
    T* dst = out.image(n);
    for (const auto& x : xs) {
      const T* src = x->value.image(n);
      dst = std::copy(src, src + x->value.c * plane, dst);
    }
  }
  return make_op<T>(std::move(out), xs, [](Node<T>& self) {
    const std::size_t plane = self.value.plane();
    for (int n = 0; n < self.value.n; ++n) {
      const T* src = self.grad.image(n);
      for (auto& p : self.parents) {
        const std::size_t len = p->value.c * plane;
        if (p->requires_grad) {
          T* dst = p->grad_buffer().image(n);
          for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
        }
        src += len;
      }
    }
  });
}

template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w) {
  const auto& X = x->value;
  auto ty = bilinear_taps(X.h, out_h);
  auto tx = bilinear_taps(X.w, out_w);
  Tensor<T> out(X.n, X.c, out_h, out_w);
  for (int n = 0; n < X.n; ++n)
    for (int c = 0; c < X.c; ++c)
      for (int oy = 0; oy < out_h; ++oy) {
        const auto& a = ty[oy];
        for (int ox = 0; ox < out_w; ++ox) {
          const auto& b = tx[ox];
          const T v00 = X.at(n, c, a.i0, b.i0), v01 = X.at(n, c, a.i0, b.i1);
          const T v10 = X.at(n, c, a.i1, b.i0), v11 = X.at(n, c, a.i1, b.i1);
          const T fy = T(a.frac), fx = T(b.frac);
          out.at(n, c, oy, ox) = (1 - fy) * ((1 - fx) * v00 + fx * v01) +
                                 fy * ((1 - fx) * v10 + fx * v11);
        }
      }
  return make_op<T>(std::move(out), {x}, [ty, tx](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& g = xn.grad_buffer();
    const auto& G = self.grad;
    for (int n = 0; n < G.n; ++n)
      for (int c = 0; c < G.c; ++c)
        for (int oy = 0; oy < G.h; ++oy) {
          const auto& a = ty[oy];
          for (int ox = 0; ox < G.w; ++ox) {
            const auto& b = tx[ox];
            const T gv = G.at(n, c, oy, ox);
            const T fy = T(a.frac), fx = T(b.frac);
            g.at(n, c, a.i0, b.i0) += gv * (1 - fy) * (1 - fx);
            g.at(n, c, a.i0, b.i1) += gv * (1 - fy) * fx;
            g.at(n, c, a.i1, b.i0) += gv * fy * (1 - fx);
            g.at(n, c, a.i1, b.i1) += gv * fy * fx;
          }
        }
  });
}

template <class T>
Var<T> correlation(const Var<T>& a, const Var<T>& b, int radius) {
  const auto& A = a->value;
  const auto& B = b->value;
  if (!A.same_shape(B)) {
    shape_error("correlation: " + A.shape_str() + " vs " + B.shape_str());
  }
  const int span = 2 * radius + 1;
  const T norm = T(1) / T(A.c);
  Tensor<T> out(A.n, span * span, A.h, A.w);
  for (int n = 0; n < A.n; ++n)
    for (int dy = -radius; dy <= radius; ++dy)
      for (int dx = -radius; dx <= radius; ++dx) {
        const int d = (dy + radius) * span + (dx + radius);
        const int x_lo = std::max(0, -dx), x_hi = std::min(A.w, A.w - dx);
        for (int c = 0; c < A.c; ++c)
          for (int y = std::max(0, -dy); y < std::min(A.h, A.h - dy); ++y) {
            const T* pa = &A.data[((static_cast<std::size_t>(n) * A.c + c) * A.h + y) * A.w];
            const T* pb = &B.data[((static_cast<std::size_t>(n) * A.c + c) * A.h + y + dy) * A.w];
            T* po = &out.data[((static_cast<std::size_t>(n) * out.c + d) * A.h + y) * A.w];
            for (int x = x_lo; x < x_hi; ++x) po[x] += pa[x] * pb[x + dx];
          }
        for (int y = 0; y < A.h; ++y)
          for (int x = 0; x < A.w; ++x) out.at(n, d, y, x) *= norm;
      }
  return make_op<T>(std::move(out), {a, b}, [radius, norm](Node<T>& self) {
    auto& an = *self.parents[0];
    auto& bn = *self.parents[1];
    const auto& A = an.value;
    const auto& B = bn.value;
    const auto& G = self.grad;
    const int span = 2 * radius + 1;
    T* ga = an.requires_grad ? an.grad_buffer().data.data() : nullptr;
    T* gb = bn.requires_grad ? bn.grad_buffer().data.data() : nullptr;
    for (int n = 0; n < A.n; ++n)
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          const int d = (dy + radius) * span + (dx + radius);
          const int x_lo = std::max(0, -dx), x_hi = std::min(A.w, A.w - dx);
          for (int c = 0; c < A.c; ++c)
            for (int y = std::max(0, -dy); y < std::min(A.h, A.h - dy); ++y) {
              const std::size_t ra = ((static_cast<std::size_t>(n) * A.c + c) * A.h + y) * A.w;
              const std::size_t rb =
                  ((static_cast<std::size_t>(n) * A.c + c) * A.h + y + dy) * A.w;
              const T* pg = &G.data[((static_cast<std::size_t>(n) * G.c + d) * A.h + y) * A.w];
              if (ga)
                for (int x = x_lo; x < x_hi; ++x) ga[ra + x] += pg[x] * B.data[rb + x + dx] * norm;
              if (gb)
                for (int x = x_lo; x < x_hi; ++x) gb[rb + x + dx] += pg[x] * A.data[ra + x] * norm;
            }
        }
  });
}

template <class T>
Var<T> warp(const Var<T>& x, const Var<T>& flow) {
  const auto& X = x->value;
  const auto& F = flow->value;
  if (F.n != X.n || F.c != 2 || F.h != X.h || F.w != X.w) {
    shape_error("warp: features " + X.shape_str() + " with flow " + F.shape_str());
  }
  auto sample = [&X](int n, int c, int y, int x) -> T {
    return (y >= 0 && y < X.h && x >= 0 && x < X.w) ? X.at(n, c, y, x) : T(0);
  };
  Tensor<T> out(X.n, X.c, X.h, X.w);
  for (int n = 0; n < X.n; ++n)
    for (int y = 0; y < X.h; ++y)
      for (int x = 0; x < X.w; ++x) {
        const T sx = x + F.at(n, 0, y, x), sy = y + F.at(n, 1, y, x);
        const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
        const T fx = sx - x0, fy = sy - y0;
        if (auto* rec = BranchRecorder::active())
          rec->record((static_cast<std::uint64_t>(static_cast<std::uint32_t>(x0)) << 32) ^
                      static_cast<std::uint32_t>(y0));
        for (int c = 0; c < X.c; ++c) {
          out.at(n, c, y, x) = (1 - fy) * ((1 - fx) * sample(n, c, y0, x0) + fx * sample(n, c, y0, x0 + 1)) +
                               fy * ((1 - fx) * sample(n, c, y0 + 1, x0) + fx * sample(n, c, y0 + 1, x0 + 1));
        }
      }
  return make_op<T>(std::move(out), {x, flow}, [](Node<T>& self) {
    auto& xn = *self.parents[0];
    auto& fn = *self.parents[1];
    const auto& X = xn.value;
    const auto& F = fn.value;
    const auto& G = self.grad;
    auto inside = [&X](int y, int x) { return y >= 0 && y < X.h && x >= 0 && x < X.w; };
    auto val = [&](int n, int c, int y, int x) -> T { return inside(y, x) ? X.at(n, c, y, x) : T(0); };
    Tensor<T>* gx = xn.requires_grad ? &xn.grad_buffer() : nullptr;
    Tensor<T>* gf = fn.requires_grad ? &fn.grad_buffer() : nullptr;
    for (int n = 0; n < X.n; ++n)
      for (int y = 0; y < X.h; ++y)
        for (int x = 0; x < X.w; ++x) {
          const T sx = x + F.at(n, 0, y, x), sy = y + F.at(n, 1, y, x);
          const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
          const T fx = sx - x0, fy = sy - y0;
          T dsx = 0, dsy = 0;
          for (int c = 0; c < X.c; ++c) {
            const T g = G.at(n, c, y, x);
            if (g == T(0)) continue;
            if (gx) {
              const int ys[2] = {y0, y0 + 1}, xs[2] = {x0, x0 + 1};
              const T wy[2] = {1 - fy, fy}, wx[2] = {1 - fx, fx};
              for (int i = 0; i < 2; ++i)
                for (int j = 0; j < 2; ++j)
                  if (inside(ys[i], xs[j])) gx->at(n, c, ys[i], xs[j]) += g * wy[i] * wx[j];
            }
            if (gf) {
              const T v00 = val(n, c, y0, x0), v01 = val(n, c, y0, x0 + 1);
              const T v10 = val(n, c, y0 + 1, x0), v11 = val(n, c, y0 + 1, x0 + 1);
              dsx += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
              dsy += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
            }
          }
          if (gf) {
            gf->at(n, 0, y, x) += dsx;
            gf->at(n, 1, y, x) += dsy;
          }
        }
  });
}

template <class T>
Var<T> coordinate_channels(int n, int h, int w) {
  Tensor<T> out(n, 2, h, w);
  for (int i = 0; i < n; ++i)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        out.at(i, 0, y, x) = w > 1 ? T(-1) + T(2) * x / T(w - 1) : T(0);
        out.at(i, 1, y, x) = h > 1 ? T(-1) + T(2) * y / T(h - 1) : T(0);
      }
  return constant(std::move(out));
}

template <class T>
Tensor<T> spatial_softmax(const Tensor<T>& heat) {
  Tensor<T> out = heat;
  const std::size_t plane = heat.plane();
  for (int n = 0; n < heat.n; ++n)
    for (int c = 0; c < heat.c; ++c) {
      T* p = out.data.data() + (static_cast<std::size_t>(n) * heat.c + c) * plane;
      const T mx = *std::max_element(p, p + plane);
      T sum = 0;
      for (std::size_t i = 0; i < plane; ++i) sum += (p[i] = std::exp(p[i] - mx));
      for (std::size_t i = 0; i < plane; ++i) p[i] /= sum;
    }
  return out;
}

template <class T>
Var<T> attention_pool(const Var<T>& embedding, const Var<T>& heat) {
  const auto& E = embedding->value;
  const auto& H = heat->value;
  if (!E.same_shape(H)) {
    shape_error("attention_pool: embedding " + E.shape_str() + " vs heat " + H.shape_str());
  }
  Tensor<T> weights = spatial_softmax(H);
  const std::size_t plane = E.plane();
  Tensor<T> out(E.n, E.c);
  for (int n = 0; n < E.n; ++n)
    for (int c = 0; c < E.c; ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * E.c + c) * plane;
      T acc = 0;
      for (std::size_t i = 0; i < plane; ++i) acc += E.data[off + i] * weights.data[off + i];
      out.data[static_cast<std::size_t>(n) * E.c + c] = acc;
    }
  return make_op<T>(std::move(out), {embedding, heat},
                    [weights = std::move(weights)](Node<T>& self) {
                      auto& en = *self.parents[0];
                      auto& hn = *self.parents[1];
                      const auto& E = en.value;
                      const std::size_t plane = E.plane();
                      for (int n = 0; n < E.n; ++n)
                        for (int c = 0; c < E.c; ++c) {
                          const std::size_t off = (static_cast<std::size_t>(n) * E.c + c) * plane;
                          const std::size_t o = static_cast<std::size_t>(n) * E.c + c;
                          const T g = self.grad.data[o];
                          const T v = self.value.data[o];
                          if (en.requires_grad) {
                            T* ge = en.grad_buffer().data.data() + off;
                            for (std::size_t i = 0; i < plane; ++i) ge[i] += g * weights.data[off + i];
                          }
                          if (hn.requires_grad) {
                            T* gh = hn.grad_buffer().data.data() + off;
                            for (std::size_t i = 0; i < plane; ++i)
                              gh[i] += g * weights.data[off + i] * (E.data[off + i] - v);
                          }
                        }
                    });
}

template <class T>
Var<T> normalize_rows(const Var<T>& x) {
  const auto& X = x->value;
  const int f = X.c * X.h * X.w;
  Tensor<T> out = X;
  std::vector<T> norms(X.n);
  for (int n = 0; n < X.n; ++n) {
    T s = 0;
    for (int i = 0; i < f; ++i) s += X.data[n * f + i] * X.data[n * f + i];
    norms[n] = std::sqrt(s);
    if (!(norms[n] > T(0))) {
      throw Error(ErrorCode::kInvalidArgument, "normalize_rows: zero-norm row");
    }
    for (int i = 0; i < f; ++i) out.data[n * f + i] /= norms[n];
  }
  return make_op<T>(std::move(out), {x}, [norms, f](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t n = 0; n < norms.size(); ++n) {
      const T* y = &self.value.data[n * f];
      const T* gy = &self.grad.data[n * f];
      T dot = 0;
      for (int i = 0; i < f; ++i) dot += y[i] * gy[i];
      for (int i = 0; i < f; ++i) g.data[n * f + i] += (gy[i] - y[i] * dot) / norms[n];
    }
  });
}

template <class T>
Var<T> masked_channel_sum(const Var<T>& heat, const Tensor<T>& mask) {
  const auto& H = heat->value;
  if (mask.n != H.n || mask.c != 1 || mask.h != H.h || mask.w != H.w) {
    shape_error("masked_channel_sum: heat " + H.shape_str() + " with mask " + mask.shape_str());
  }
  Tensor<T> out(H.n, 1, H.h, H.w);
  const std::size_t plane = H.plane();
  for (int n = 0; n < H.n; ++n)
    for (std::size_t i = 0; i < plane; ++i) {
      if (mask.data[n * plane + i] == T(0)) continue;
      T s = 0;
      for (int c = 0; c < H.c; ++c) s += H.data[(static_cast<std::size_t>(n) * H.c + c) * plane + i];
      out.data[n * plane + i] = s;
    }
  return make_op<T>(std::move(out), {heat}, [mask](Node<T>& self) {
    auto& hn = *self.parents[0];
    auto& g = hn.grad_buffer();
    const std::size_t plane = hn.value.plane();
    for (int n = 0; n < hn.value.n; ++n)
      for (std::size_t i = 0; i < plane; ++i) {
        if (mask.data[n * plane + i] == T(0)) continue;
        const T gv = self.grad.data[n * plane + i];
        for (int c = 0; c < hn.value.c; ++c)
          g.data[(static_cast<std::size_t>(n) * hn.value.c + c) * plane + i] += gv;
      }
  });
}

template <class T>
Var<T> straight_through(const Tensor<T>& value, const Var<T>& gate,
                        const std::vector<std::vector<int>>& source, const Tensor<T>& gain) {
  if (source.size() != static_cast<std::size_t>(value.n) || !gain.same_shape(value)) {
    shape_error("straight_through: source map does not match value " + value.shape_str());
  }
  const std::size_t per = value.size() / std::max(1, value.n);
  for (const auto& s : source) {
    if (s.size() != per) shape_error("straight_through: source map has the wrong length");
  }
  return make_op<T>(Tensor<T>(value), {gate}, [source, gain, per](Node<T>& self) {
    auto& gn = *self.parents[0];
    auto& g = gn.grad_buffer();
    const std::size_t gate_per = gn.value.size() / std::max(1, gn.value.n);
    for (std::size_t n = 0; n < source.size(); ++n)
      for (std::size_t p = 0; p < per; ++p) {
        const int s = source[n][p];
        if (s < 0) continue;
        g.data[n * gate_per + s] += self.grad.data[n * per + p] * gain.data[n * per + p];
      }
  });
}

template <class T>
Var<T> sum_all(const Var<T>& x) {
  T s = 0;
  for (T v : x->value.data) s += v;
  return make_op<T>(Tensor<T>(1, 1, 1, 1, s), {x}, [](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (auto& v : g.data) v += self.grad.data[0];
  });
}

template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights) {
  if (weights.size() != x->value.size()) shape_error("weighted_sum: weight count mismatch");
  T s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += x->value.data[i] * weights.data[i];
  return make_op<T>(Tensor<T>(1, 1, 1, 1, s), {x}, [weights](Node<T>& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g.data[i] += self.grad.data[0] * weights.data[i];
  });
}

#define LHM_INSTANTIATE(T)                                                                      \
  template Var<T> conv2d<T>(const Var<T>&, const Var<T>&, const Var<T>&, int, int);             \
  template Var<T> linear<T>(const Var<T>&, const Var<T>&, const Var<T>&);                       \
  template Var<T> leaky_relu<T>(const Var<T>&, T);                                              \
  template Var<T> relu<T>(const Var<T>&);                                                       \
  template Var<T> softplus<T>(const Var<T>&);                                                   \
  template Var<T> add<T>(const Var<T>&, const Var<T>&);                                         \
  template Var<T> scale<T>(const Var<T>&, T);                                                   \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                               \
  template Var<T> resize_bilinear<T>(const Var<T>&, int, int);                                  \
  template Var<T> correlation<T>(const Var<T>&, const Var<T>&, int);                            \
  template Var<T> warp<T>(const Var<T>&, const Var<T>&);                                        \
  template Var<T> coordinate_channels<T>(int, int, int);                                        \
  template Var<T> attention_pool<T>(const Var<T>&, const Var<T>&);                              \
  template Tensor<T> spatial_softmax<T>(const Tensor<T>&);                                      \
  template Var<T> normalize_rows<T>(const Var<T>&);                                             \
  template Var<T> masked_channel_sum<T>(const Var<T>&, const Tensor<T>&);                       \
  template Var<T> straight_through<T>(const Tensor<T>&, const Var<T>&,                          \
                                      const std::vector<std::vector<int>>&, const Tensor<T>&);  \
  template Var<T> sum_all<T>(const Var<T>&);                                                    \
  template Var<T> weighted_sum<T>(const Var<T>&, const Tensor<T>&);

LHM_INSTANTIATE(float)
LHM_INSTANTIATE(double)
#undef LHM_INSTANTIATE

}  // namespace lhm::nn
