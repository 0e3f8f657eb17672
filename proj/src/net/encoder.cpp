#include "polyreg/net/encoder.hpp"

#include "polyreg/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace polyreg::net {

namespace ops = polyreg::ad;

std::string architecture_name(Architecture a) { return a == Architecture::FullNet ? "fullnet" : "halfnet"; }

Architecture parse_architecture(const std::string& text) {
  if (text == "fullnet" || text == "full") return Architecture::FullNet;
  if (text == "halfnet" || text == "half") return Architecture::HalfNet;
  throw InvalidArgument("unknown architecture '" + text + "' (expected fullnet or halfnet)");
}

EncoderConfig EncoderConfig::for_spec(const ModelSpec& spec, const DomainGrid& grid, Architecture arch,
                                      double input_scale, int channels) {
  if (!grid.is_lattice() || grid.dim() != spec.domain_dim()) {
    throw InvalidArgument("encoders need a line or lattice grid matching the spec's domain");
  }
  EncoderConfig c;
  c.arch = arch;
  c.spatial_dims = spec.domain_dim();
  c.in_channels = spec.range_dim();
  c.height = grid.height();
  c.width = grid.width();
  c.code_length = spec.coeff_count();
  c.channels = channels > 0 ? channels : (c.spatial_dims == 1 ? 32 : 64);
  c.head_planes = std::max(1, c.channels / 4);
  c.input_scale = input_scale;
  c.validate();
  return c;
}

void EncoderConfig::validate() const {
  if (spatial_dims != 1 && spatial_dims != 2) throw InvalidArgument("encoder supports 1 or 2 spatial dims");
  if (spatial_dims == 1 && height != 1) throw InvalidArgument("1D encoder input must have height 1");
  if (in_channels < 1 || code_length < 1 || channels < 1 || head_planes < 1 || stacks < 1 || levels < 1) {
    throw InvalidArgument("encoder sizes must be positive");
  }
  if (!(input_scale > 0.0)) throw InvalidArgument("encoder input scale must be positive");
  const int step = 1 << levels;
  if (width % step != 0 || (spatial_dims == 2 && height % step != 0)) {
    throw InvalidArgument("grid " + std::to_string(height) + "x" + std::to_string(width) +
                          " is not divisible by 2^" + std::to_string(levels));
  }
}

Hourglass::Hourglass(ParameterStore& store, const std::string& name, int channels, int levels, int spatial_dims) {
  for (int l = 0; l < levels; ++l) {
    const std::string p = name + ".level" + std::to_string(l);
    down_.emplace_back(store, p + ".down", channels, channels, 3, spatial_dims);
    skip_.emplace_back(store, p + ".skip", channels, channels, 3, spatial_dims);
    bn_.emplace_back(store, p + ".bn", channels);
  }
  mid_ = Conv(store, name + ".mid", channels, channels, 3, spatial_dims);
}

Tensor Hourglass::operator()(const Tensor& input, bool training) const {
  std::vector<Tensor> skips;
  Tensor x = input;
  for (std::size_t l = 0; l < down_.size(); ++l) {
    const Tensor h = ops::relu(down_[l](x));
    skips.push_back(skip_[l](h));
    x = bn_[l](ops::maxpool(h), training);
  }
  x = ops::relu(mid_(x));
  for (std::size_t l = down_.size(); l-- > 0;) x = ops::add(ops::upsample2x(x), skips[l]);
  return x;
}

Encoder::Encoder(const EncoderConfig& config, std::uint64_t seed)
    : config_(config), store_(std::make_unique<ParameterStore>(seed)) {
  config_.validate();
  const int sd = config_.spatial_dims;
  const int c = config_.channels;
  ParameterStore& s = *store_;
  int positions = config_.height * config_.width;
  int head_in = c;
  if (config_.arch == Architecture::FullNet) {
    stem_conv_ = Conv(s, "stem.conv", config_.in_channels, c, 3, sd);
    stem_bn_ = BatchNorm(s, "stem.bn", c);
    for (int k = 0; k < config_.stacks; ++k) {
      const std::string p = "stack" + std::to_string(k);
      stacks_.emplace_back(s, p + ".hourglass", c, config_.levels, sd);
      inter_reduce_.emplace_back(s, p + ".head.reduce", c, config_.head_planes, 1, sd);
      inter_fc_.emplace_back(s, p + ".head.fc", config_.head_planes, config_.code_length);
    }
    head_in = c * (config_.stacks + 1);
    for (int k = 0; k < 3; ++k) {
      const std::string p = "head.block" + std::to_string(k);
      head_conv_.emplace_back(s, p + ".conv", head_in, head_in, 3, sd);
      head_bn_.emplace_back(s, p + ".bn", head_in);
    }
  } else {
    int in = config_.in_channels;
    int w = config_.width;
    for (int k = 0; w > 4 && w % 2 == 0 && (sd == 1 || config_.height % (2 << k) == 0); ++k) {
      const std::string p = "block" + std::to_string(k);
      half_conv_.emplace_back(s, p + ".conv", in, c, 3, sd);
      half_bn_.emplace_back(s, p + ".bn", c);
      in = c;
      w /= 2;
      positions /= sd == 1 ? 2 : 4;
    }
    if (half_conv_.empty()) throw InvalidArgument("HalfNet input is already at most 4 samples wide");
  }
  reduce_ = Conv(s, "head.reduce", head_in, config_.head_planes, 1, sd);
  fc_ = Linear(s, "head.fc", config_.head_planes * positions, config_.code_length);
}

Tensor Encoder::head(const Tensor& features, bool training) const {
  Tensor z = features;
  for (std::size_t k = 0; k < head_conv_.size(); ++k) z = ops::relu(head_bn_[k](head_conv_[k](z), training));
  z = reduce_(z);
  const int batch = z.dim(0);
  z = ops::reshape(z, {batch, static_cast<int>(z.numel()) / batch});
  return ops::scale(fc_(z), config_.input_scale);
}

std::vector<Tensor> Encoder::encode(const Tensor& input, bool training) const {
  const bool ok = input.rank() == config_.spatial_dims + 2 && input.dim(1) == config_.in_channels &&
                  input.dim(input.rank() - 1) == config_.width &&
                  (config_.spatial_dims == 1 || input.dim(2) == config_.height);
  if (!ok) throw InvalidArgument("encoder input " + ad::shape_string(input.shape()) + " does not match its grid");
  std::vector<Tensor> thetas;
  if (config_.arch == Architecture::HalfNet) {
    Tensor x = input;
    for (std::size_t k = 0; k < half_conv_.size(); ++k) x = half_bn_[k](ops::maxpool(ops::relu(half_conv_[k](x))), training);
    thetas.push_back(head(x, training));
    return thetas;
  }
  const Tensor stem = ops::relu(stem_bn_(stem_conv_(input), training));
  std::vector<Tensor> features{stem};
  Tensor x = stem;
  for (std::size_t k = 0; k < stacks_.size(); ++k) {
    const Tensor out = stacks_[k](x, training);
    features.push_back(out);
    const Tensor pooled = ops::spatial_mean(inter_reduce_[k](out));
    thetas.push_back(ops::scale(inter_fc_[k](pooled), config_.input_scale));
    x = ops::add(x, out);
  }
  thetas.push_back(head(ops::concat(features), training));
  return thetas;
}

std::string ModelManifest::to_text() const {
  std::ostringstream out;
  out.precision(17);
  out << "format=polyreg-model-1\n"
      << "spec=" << spec_id << "\n"
      << "arch=" << architecture_name(encoder.arch) << "\n"
      << "spatial_dims=" << encoder.spatial_dims << "\n"
      << "in_channels=" << encoder.in_channels << "\n"
      << "height=" << encoder.height << "\n"
      << "width=" << encoder.width << "\n"
      << "code_length=" << encoder.code_length << "\n"
      << "channels=" << encoder.channels << "\n"
      << "levels=" << encoder.levels << "\n"
      << "stacks=" << encoder.stacks << "\n"
      << "head_planes=" << encoder.head_planes << "\n"
      << "input_scale=" << encoder.input_scale << "\n"
      << "scheme=" << scheme << "\n"
      << "seed=" << seed << "\n"
      << "steps=" << steps << "\n";
  static const std::set<std::string> core{"format", "spec", "arch", "spatial_dims", "in_channels", "height",
                                          "width", "code_length", "channels", "levels", "stacks", "head_planes",
                                          "input_scale", "scheme", "seed", "steps"};
  // Extras never shadow the core keys.
  for (const auto& [k, v] : extra)
    if (!core.contains(k)) out << k << "=" << v << "\n";
  return out.str();
}

ModelManifest ModelManifest::from_text(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto take = [&](const std::string& key) {
    const auto it = kv.find(key);
    if (it == kv.end()) throw FormatError("manifest is missing '" + key + "'");
    std::string v = it->second;
    kv.erase(it);
    return v;
  };
  auto take_int = [&](const std::string& key) {
    const std::string v = take(key);
    try {
      return std::stoi(v);
    } catch (const std::exception&) {
      throw FormatError("manifest value " + key + "=" + v + " is not an integer");
    }
  };
  if (take("format") != "polyreg-model-1") throw FormatError("unsupported model manifest format");
  ModelManifest m;
  m.spec_id = take("spec");
  m.encoder.arch = parse_architecture(take("arch"));
  m.encoder.spatial_dims = take_int("spatial_dims");
  m.encoder.in_channels = take_int("in_channels");
  m.encoder.height = take_int("height");
  m.encoder.width = take_int("width");
  m.encoder.code_length = take_int("code_length");
  m.encoder.channels = take_int("channels");
  m.encoder.levels = take_int("levels");
  m.encoder.stacks = take_int("stacks");
  m.encoder.head_planes = take_int("head_planes");
  m.encoder.input_scale = std::stod(take("input_scale"));
  m.scheme = take("scheme");
  m.seed = std::stoull(take("seed"));
  m.steps = std::stol(take("steps"));
  m.extra = std::move(kv);
  return m;
}

ModelBasedAutoencoder::ModelBasedAutoencoder(const ModelSpec& spec, const DomainGrid& grid,
                                             const EncoderConfig& config, std::uint64_t seed)
    : spec_(spec), grid_(grid), decoder_(std::make_unique<FixedDecoder>(spec, grid)), encoder_(config, seed) {
  const bool match = config.spatial_dims == spec.domain_dim() && config.in_channels == spec.range_dim() &&
                     config.code_length == spec.coeff_count() && grid.is_lattice() && config.width == grid.width() &&
                     config.height == grid.height();
  if (!match) throw InvalidArgument("encoder configuration does not match the spec and grid of the decoder");
}

Tensor ModelBasedAutoencoder::input_tensor(const std::vector<RangeField>& fields) const {
  const int r = spec_.range_dim();
  const int n = grid_.size();
  const double inv = 1.0 / encoder_.config().input_scale;
  std::vector<double> values(fields.size() * static_cast<std::size_t>(r * n));
  for (std::size_t b = 0; b < fields.size(); ++b) {
    if (fields[b].size() != r * n) {
      throw InvalidArgument("field of length " + std::to_string(fields[b].size()) + " on a grid needing " +
                            std::to_string(r * n));
    }
    for (int c = 0; c < r; ++c) {
      double* dst = values.data() + (b * static_cast<std::size_t>(r) + static_cast<std::size_t>(c)) * n;
      for (int i = 0; i < n; ++i) dst[i] = fields[b][i * r + c] * inv;
    }
  }
  ad::Shape shape{static_cast<int>(fields.size()), r};
  if (spec_.domain_dim() == 2) shape.push_back(grid_.height());
  shape.push_back(grid_.width());
  return Tensor::constant(std::move(shape), std::move(values));
}

ModelBasedAutoencoder::Output ModelBasedAutoencoder::forward(const Tensor& input, bool training) const {
  Output out;
  out.thetas = encoder_.encode(input, training);
  for (const Tensor& t : out.thetas) out.decoded.push_back(ops::fixed_decode(t, *decoder_));
  return out;
}

std::vector<Coefficients> ModelBasedAutoencoder::predict_batch(const std::vector<RangeField>& fields) const {
  if (fields.empty()) return {};
  ad::NoGradGuard guard;
  const Tensor theta = encoder_.encode(input_tensor(fields), false).back();
  const int m = spec_.coeff_count();
  std::vector<Coefficients> out;
  for (std::size_t b = 0; b < fields.size(); ++b) {
    out.emplace_back(Eigen::Map<const Eigen::VectorXd>(theta.values().data() + b * static_cast<std::size_t>(m), m));
  }
  return out;
}

Coefficients ModelBasedAutoencoder::predict(const RangeField& field) const { return predict_batch({field}).front(); }

void ModelBasedAutoencoder::save(const std::string& path, const ModelManifest& manifest) const {
  if (manifest.spec_id != spec_.id() || !(manifest.encoder == encoder_.config())) {
    throw InvalidArgument("manifest does not describe this model");
  }
  ad::save_checkpoint(path, encoder_.store().export_state());
  std::ofstream f(path + ".manifest", std::ios::trunc);
  f << manifest.to_text();
  if (!f) throw std::runtime_error("failed writing " + path + ".manifest");
}

std::unique_ptr<ModelBasedAutoencoder> ModelBasedAutoencoder::load(const std::string& path,
                                                                   ModelManifest* manifest_out) {
  std::ifstream f(path + ".manifest");
  if (!f) throw ConfigError("missing model manifest " + path + ".manifest");
  std::stringstream buf;
  buf << f.rdbuf();
  const ModelManifest manifest = ModelManifest::from_text(buf.str());
  const ModelSpec spec = ModelSpec::parse(manifest.spec_id);
  const EncoderConfig& ec = manifest.encoder;
  const DomainGrid grid = spec.domain_dim() == 1 ? DomainGrid::line(ec.width) : DomainGrid::lattice(ec.height, ec.width);
  auto model = std::make_unique<ModelBasedAutoencoder>(spec, grid, ec, 0);
  model->encoder().store().import_state(ad::load_checkpoint(path));
  if (manifest_out) *manifest_out = manifest;
  return model;
}

}  // namespace polyreg::net
