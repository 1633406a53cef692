#pragma once

#include <cstdint>

#include "lhmaploc/nn/tensor.hpp"

#include <vector>

namespace lhm::nn {

/// While alive, piecewise ops on this thread (relu-family activations and the
/// bilinear cell choice of warp) fold their branch decisions into a hash. Two
/// forward passes with equal hashes evaluate the same smooth piece.
class BranchRecorder {
 public:
  BranchRecorder();
  ~BranchRecorder();
  BranchRecorder(const BranchRecorder&) = delete;
  BranchRecorder& operator=(const BranchRecorder&) = delete;

  std::uint64_t hash() const { return hash_; }
  void record(std::uint64_t v) { hash_ = (hash_ ^ v) * 0x100000001b3ULL; }
  static BranchRecorder* active();

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
  BranchRecorder* previous_;
};

/// Square-kernel convolution with zero padding. weight: (Cout, Cin, k, k), bias: (1, Cout).
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, int stride, int pad);

/// x: (N, F), weight: (Fout, F), bias: (1, Fout).
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <class T>
Var<T> leaky_relu(const Var<T>& x, T slope);

template <class T>
Var<T> relu(const Var<T>& x);

template <class T>
Var<T> softplus(const Var<T>& x);

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

template <class T>
Var<T> scale(const Var<T>& x, T factor);

/// Concatenate along channels; all inputs share N, H, W.
template <class T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// Bilinear resize with half-pixel centers (edge-clamped).
template <class T>
Var<T> resize_bilinear(const Var<T>& x, int out_h, int out_w);

/// Local correlation between feature maps a and b over a (2r+1)² window,
/// normalized by channel count. Output channel index (dy + r)(2r+1) + (dx + r)
/// holds Σ_c a(y, x) · b(y + dy, x + dx) / C; b is zero outside the grid.
template <class T>
Var<T> correlation(const Var<T>& a, const Var<T>& b, int radius);

/// Bilinearly samples x at (col + flow[0], row + flow[1]); zero outside.
template <class T>
Var<T> warp(const Var<T>& x, const Var<T>& flow);

/// Two constant channels holding normalized column/row coordinates in [-1, 1].
template <class T>
Var<T> coordinate_channels(int n, int h, int w);

/// Per-channel spatial softmax of `heat` used to pool `embedding`:
/// V[n, c] = Σ_ij embedding[n,c,i,j] · softmax_ij(heat[n,c])[i,j].
template <class T>
Var<T> attention_pool(const Var<T>& embedding, const Var<T>& heat);

/// The per-channel softmax weights of attention_pool, for inspection.
template <class T>
Tensor<T> spatial_softmax(const Tensor<T>& heat);

/// Row-wise L2 normalization of an (N, F) tensor.
template <class T>
Var<T> normalize_rows(const Var<T>& x);

/// Sum over channels of `heat`, masked where `mask` is zero. heat: (N, C, H, W),
/// mask: (N, 1, H, W) → (N, 1, H, W).
template <class T>
Var<T> masked_channel_sum(const Var<T>& heat, const Tensor<T>& mask);

/// Forward returns `value` unchanged; backward routes ∂L/∂value[n,p] · gain[n,p]
/// into gate[n, source[n,p]] for every p with source >= 0. Used for the
/// straight-through path from re-rendered depth back to heat values.
template <class T>
Var<T> straight_through(const Tensor<T>& value, const Var<T>& gate,
                        const std::vector<std::vector<int>>& source, const Tensor<T>& gain);

/// Elementwise sum of all entries (scalar (1,1) output).
template <class T>
Var<T> sum_all(const Var<T>& x);

/// Σ x ⊙ weights, for building scalar readouts.
template <class T>
Var<T> weighted_sum(const Var<T>& x, const Tensor<T>& weights);

}  // namespace lhm::nn
