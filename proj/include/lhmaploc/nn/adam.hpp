#pragma once

#include "lhmaploc/nn/tensor.hpp"

#include <vector>

namespace lhm::nn {

/// Adam over a fixed list of parameter leaves. Gradients are read from the
/// leaves' grad buffers (missing buffers count as zero) and cleared by
/// zero_grad().
class Adam {
 public:
  Adam(std::vector<Var<float>> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void zero_grad();
  double learning_rate() const { return lr_; }
  long steps() const { return t_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
};

}  // namespace lhm::nn
