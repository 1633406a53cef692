#include "lhmaploc/nn/adam.hpp"

#include <cmath>

namespace lhm::nn {

Adam::Adam(std::vector<Var<float>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p->value.size(), 0.0);
    v_.emplace_back(p->value.size(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = *params_[k];
    if (p.grad.size() != p.value.size()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad.data[i];
      m[i] = b1_ * m[i] + (1 - b1_) * g;
      v[i] = b2_ * v[i] + (1 - b2_) * g * g;
      p.value.data[i] -= static_cast<float>(lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_));
    }
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p->grad = Tensor<float>();
}

}  // namespace lhm::nn
