#pragma once

#include "polyreg/net/layers.hpp"
#include "polyreg/poly/model.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace polyreg::net {

enum class Architecture { FullNet, HalfNet };

std::string architecture_name(Architecture a);
Architecture parse_architecture(const std::string& text);

struct EncoderConfig {
  Architecture arch = Architecture::FullNet;
  int spatial_dims = 1;
  int in_channels = 1;  // range dimension R
  int height = 1;
  int width = 64;
  int code_length = 5;
  int channels = 32;
  int levels = 3;
  int stacks = 2;
  int head_planes = 8;
  /// Inputs are divided by this before the first layer and codes multiplied
  /// by it on the way out.
  double input_scale = 1.0;

  /// Defaults for a spec and grid: 32 channels / 8 head planes for 1D,
  /// 64 / 16 for 2D. A positive `channels` overrides the width and scales
  /// the head planes along with it.
  static EncoderConfig for_spec(const ModelSpec& spec, const DomainGrid& grid, Architecture arch, double input_scale,
                                int channels = 0);
  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// Size-preserving multi-scale block: per level conv+ReLU, a skip conv, then
/// pool+BN; a bottleneck conv; bilinear upsampling merged with the skips by
/// addition on the way back up.
class Hourglass {
 public:
  Hourglass(ParameterStore& store, const std::string& name, int channels, int levels, int spatial_dims);
  Tensor operator()(const Tensor& x, bool training) const;

 private:
  std::vector<Conv> down_;
  std::vector<Conv> skip_;
  std::vector<BatchNorm> bn_;
  Conv mid_;
};

/// Learnable encoder mapping a [B, R, (H,) W] field to coefficient vectors.
class Encoder {
 public:
  Encoder(const EncoderConfig& config, std::uint64_t seed);

  /// Coefficients [B, M] per head: intermediate heads first, final last.
  /// HalfNet has a single head.
  std::vector<Tensor> encode(const Tensor& input, bool training) const;

  const EncoderConfig& config() const { return config_; }
  ParameterStore& store() { return *store_; }
  const ParameterStore& store() const { return *store_; }
  int head_count() const { return config_.arch == Architecture::FullNet ? config_.stacks + 1 : 1; }

 private:
  Tensor head(const Tensor& features, bool training) const;

  EncoderConfig config_;
  std::unique_ptr<ParameterStore> store_;
  // FullNet
  Conv stem_conv_;
  BatchNorm stem_bn_;
  std::vector<Hourglass> stacks_;
  std::vector<Conv> inter_reduce_;
  std::vector<Linear> inter_fc_;
  // HalfNet
  std::vector<Conv> half_conv_;
  std::vector<BatchNorm> half_bn_;
  // shared head
  std::vector<Conv> head_conv_;
  std::vector<BatchNorm> head_bn_;
  Conv reduce_;
  Linear fc_;
};

/// Records what a checkpoint was trained for; checked on load.
struct ModelManifest {
  std::string spec_id;
  EncoderConfig encoder;
  std::string scheme;
  std::uint64_t seed = 0;
  long steps = 0;
  std::map<std::string, std::string> extra;

  std::string to_text() const;
  static ModelManifest from_text(const std::string& text);
};

/// Encoder followed by the fixed polynomial decoder bound to one grid.
class ModelBasedAutoencoder {
 public:
  ModelBasedAutoencoder(const ModelSpec& spec, const DomainGrid& grid, const EncoderConfig& config,
                        std::uint64_t seed);

  struct Output {
    std::vector<Tensor> thetas;   // [B, M] per head
    std::vector<Tensor> decoded;  // [B, R*N] per head, same layout as RangeField
  };

  /// Builds the [B, R, (H,) W] network input from interleaved range fields.
  Tensor input_tensor(const std::vector<RangeField>& fields) const;
  Output forward(const Tensor& input, bool training) const;
  /// Eval-mode final-head coefficients for one field.
  Coefficients predict(const RangeField& field) const;
  std::vector<Coefficients> predict_batch(const std::vector<RangeField>& fields) const;

  const ModelSpec& spec() const { return spec_; }
  const DomainGrid& grid() const { return grid_; }
  const FixedDecoder& decoder() const { return *decoder_; }
  Encoder& encoder() { return encoder_; }
  const Encoder& encoder() const { return encoder_; }
  std::size_t trainable_parameter_count() const { return encoder_.store().trainable_count(); }

  /// Writes `<path>` (weights) and `<path>.manifest`.
  void save(const std::string& path, const ModelManifest& manifest) const;
  /// Loads a checkpoint written by save(); validates the manifest first.
  static std::unique_ptr<ModelBasedAutoencoder> load(const std::string& path, ModelManifest* manifest_out = nullptr);

 private:
  ModelSpec spec_;
  DomainGrid grid_;
  std::unique_ptr<FixedDecoder> decoder_;
  Encoder encoder_;
};

}  // namespace polyreg::net
