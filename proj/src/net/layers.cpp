#include "polyreg/net/layers.hpp"

#include "polyreg/errors.hpp"

#include <algorithm>
#include <cmath>

namespace polyreg::net {

void ParameterStore::claim(const std::string& name) {
  if (std::find(names_.begin(), names_.end(), name) != names_.end()) {
    throw InvalidArgument("duplicate parameter name '" + name + "'");
  }
  names_.push_back(name);
}

Tensor ParameterStore::kaiming(const std::string& name, ad::Shape shape, int fan_in) {
  claim(name);
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / std::max(1, fan_in)));
  std::vector<double> values(ad::element_count(shape));
  for (double& v : values) v = normal(rng_);
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  params_.emplace_back(name, t);
  return t;
}

Tensor ParameterStore::filled(const std::string& name, ad::Shape shape, double value) {
  claim(name);
  const auto n = ad::element_count(shape);
  Tensor t = Tensor::parameter(std::move(shape), std::vector<double>(n, value));
  params_.emplace_back(name, t);
  return t;
}

ad::BatchNormState& ParameterStore::batchnorm_state(const std::string& name, int channels) {
  claim(name + ".running_mean");
  claim(name + ".running_var");
  bn_.emplace_back(name, ad::BatchNormState(channels));
  return bn_.back().second;
}

std::vector<Tensor> ParameterStore::trainable() const {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params_) out.push_back(t);
  return out;
}

std::size_t ParameterStore::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.numel();
  return n;
}

std::vector<ad::NamedArray> ParameterStore::export_state() const {
  std::vector<ad::NamedArray> out;
  for (const auto& [name, t] : params_) out.push_back({name, t.shape(), {t.values().begin(), t.values().end()}});
  for (const auto& [name, s] : bn_) {
    const int c = static_cast<int>(s.running_mean.size());
    out.push_back({name + ".running_mean", {c}, s.running_mean});
    out.push_back({name + ".running_var", {c}, s.running_var});
  }
  return out;
}

void ParameterStore::import_state(const std::vector<ad::NamedArray>& arrays) {
  auto expected = export_state();
  if (arrays.size() != expected.size()) {
    throw ConfigError("checkpoint holds " + std::to_string(arrays.size()) + " arrays, network expects " +
                      std::to_string(expected.size()));
  }
  for (std::size_t k = 0; k < arrays.size(); ++k) {
    if (arrays[k].name != expected[k].name || arrays[k].shape != expected[k].shape) {
      throw ConfigError("checkpoint entry '" + arrays[k].name + "' " + ad::shape_string(arrays[k].shape) +
                        " does not match network entry '" + expected[k].name + "' " +
                        ad::shape_string(expected[k].shape));
    }
  }
  std::size_t k = 0;
  for (auto& [name, t] : params_) {
    std::copy(arrays[k].values.begin(), arrays[k].values.end(), t.mutable_values().begin());
    ++k;
  }
  for (auto& [name, s] : bn_) {
    s.running_mean = arrays[k++].values;
    s.running_var = arrays[k++].values;
  }
}

Conv::Conv(ParameterStore& store, const std::string& name, int in_channels, int out_channels, int kernel,
           int spatial_dims) {
  ad::Shape shape{out_channels, in_channels, kernel};
  int fan_in = in_channels * kernel;
  if (spatial_dims == 2) {
    shape.push_back(kernel);
    fan_in *= kernel;
  }
  weight = store.kaiming(name + ".weight", std::move(shape), fan_in);
  bias = store.filled(name + ".bias", {out_channels}, 0.0);
}

BatchNorm::BatchNorm(ParameterStore& store, const std::string& name, int channels) {
  gain = store.filled(name + ".gain", {channels}, 1.0);
  shift = store.filled(name + ".shift", {channels}, 0.0);
  state = &store.batchnorm_state(name, channels);
}

Linear::Linear(ParameterStore& store, const std::string& name, int in_features, int out_features) {
  weight = store.kaiming(name + ".weight", {out_features, in_features}, in_features);
  bias = store.filled(name + ".bias", {out_features}, 0.0);
}

}  // namespace polyreg::net
