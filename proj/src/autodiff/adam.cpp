#include "polyreg/autodiff/adam.hpp"

#include "polyreg/errors.hpp"

#include <cmath>

namespace polyreg::ad {

Adam::Adam(std::vector<Tensor> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (const Tensor& p : params_) {
    if (!p.defined() || !p.requires_grad()) throw InvalidArgument("Adam only updates trainable tensors");
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Node& n = params_[k].node();
    if (n.grad.empty()) continue;
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < n.value.size(); ++i) {
      const double g = n.grad[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * g;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * g * g;
      n.value[i] -= config_.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
    }
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

}  // namespace polyreg::ad
