#pragma once

#include "polyreg/autodiff/checkpoint.hpp"
#include "polyreg/autodiff/ops.hpp"

#include <deque>
#include <random>
#include <string>
#include <vector>

namespace polyreg::net {

using ad::Tensor;

/// Owns every trainable tensor and batch-norm state of a network under a
/// unique dotted name, in creation order.
class ParameterStore {
 public:
  explicit ParameterStore(std::uint64_t seed) : rng_(seed) {}
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;

  /// Weight with Kaiming fan-in normal initialization.
  Tensor kaiming(const std::string& name, ad::Shape shape, int fan_in);
  Tensor filled(const std::string& name, ad::Shape shape, double value);
  ad::BatchNormState& batchnorm_state(const std::string& name, int channels);

  std::vector<Tensor> trainable() const;
  std::size_t trainable_count() const;

  /// Parameters followed by "<bn>.running_mean" / "<bn>.running_var".
  std::vector<ad::NamedArray> export_state() const;
  /// Requires exactly the names and shapes produced by export_state.
  void import_state(const std::vector<ad::NamedArray>& arrays);

 private:
  void claim(const std::string& name);

  std::mt19937_64 rng_;
  std::vector<std::pair<std::string, Tensor>> params_;
  std::deque<std::pair<std::string, ad::BatchNormState>> bn_;
  std::vector<std::string> names_;
};

/// Stride-1 "same" convolution; kernel K along every spatial axis.
struct Conv {
  Tensor weight;
  Tensor bias;

  Conv() = default;
  Conv(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel, int spatial_dims);
  Tensor operator()(const Tensor& x) const { return ad::conv(x, weight, bias); }
};

struct BatchNorm {
  Tensor gain;
  Tensor shift;
  ad::BatchNormState* state = nullptr;

  BatchNorm() = default;
  BatchNorm(ParameterStore& store, const std::string& name, int channels);
  Tensor operator()(const Tensor& x, bool training) const { return ad::batchnorm(x, gain, shift, *state, training); }
};

struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(ParameterStore& store, const std::string& name, int in_features, int out_features);
  Tensor operator()(const Tensor& x) const { return ad::linear(x, weight, bias); }
};

}  // namespace polyreg::net
