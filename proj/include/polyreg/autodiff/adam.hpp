#pragma once

#include "polyreg/autodiff/tensor.hpp"

#include <vector>

namespace polyreg::ad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam over a fixed list of trainable leaves. Moment buffers persist across
/// learning-rate changes.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config = {});

  /// Applies one update from the gradients currently stored on the params.
  void step();
  void zero_grad();

  void set_learning_rate(double lr) { config_.learning_rate = lr; }
  double learning_rate() const { return config_.learning_rate; }
  long step_count() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  long t_ = 0;
};

}  // namespace polyreg::ad
