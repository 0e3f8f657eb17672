#include "polyreg/train/trainer.hpp"

#include "polyreg/autodiff/adam.hpp"
#include "polyreg/errors.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

namespace polyreg::train {

namespace {

constexpr std::uint64_t kTrainStream = 0x7A1200;

std::string format_double(double v) {
  std::ostringstream out;
  out.precision(17);
  out << v;
  return out.str();
}

}  // namespace

std::string schedule_name(Schedule s) {
  switch (s) {
    case Schedule::Data1: return "data1";
    case Schedule::Data1ThenData2: return "data1_then_data2";
    case Schedule::Data1Plus2: return "data1plus2";
  }
  return "?";
}

Schedule parse_schedule(const std::string& text) {
  if (text == "data1") return Schedule::Data1;
  if (text == "data1_then_data2" || text == "curriculum") return Schedule::Data1ThenData2;
  if (text == "data1plus2" || text == "mixed") return Schedule::Data1Plus2;
  throw InvalidArgument("unknown schedule '" + text + "' (expected data1, data1_then_data2 or data1plus2)");
}

std::string loss_mode_name(LossMode m) {
  switch (m) {
    case LossMode::DecodedMse: return "decoded_mse";
    case LossMode::CoefficientMse: return "coefficient_mse";
    case LossMode::RobustDecoded: return "robust_decoded";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& text) {
  if (text == "decoded_mse") return LossMode::DecodedMse;
  if (text == "coefficient_mse") return LossMode::CoefficientMse;
  if (text == "robust_decoded") return LossMode::RobustDecoded;
  throw InvalidArgument("unknown loss mode '" + text + "' (expected decoded_mse, coefficient_mse or robust_decoded)");
}

void TrainConfig::validate() const {
  if (steps < 0) throw InvalidArgument("steps must be non-negative");
  if (batch_size < 1) throw InvalidArgument("batch_size must be at least 1");
  if (!(learning_rate > 0.0)) throw InvalidArgument("learning_rate must be positive");
  if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) {
    throw InvalidArgument("final_lr_fraction must lie in (0, 1]");
  }
  if (log_every < 1) throw InvalidArgument("log_every must be at least 1");
  if (schedule == Schedule::Data1ThenData2 && phase1_steps > steps) {
    throw InvalidArgument("phase1_steps exceeds steps");
  }
}

std::map<std::string, std::string> TrainConfig::to_map() const {
  return {{"schedule", schedule_name(schedule)},
          {"steps", std::to_string(steps)},
          {"phase1_steps", std::to_string(phase1_steps)},
          {"batch_size", std::to_string(batch_size)},
          {"learning_rate", format_double(learning_rate)},
          {"final_lr_fraction", format_double(final_lr_fraction)},
          {"seed", std::to_string(seed)},
          {"loss", loss_mode_name(loss)},
          {"log_every", std::to_string(log_every)}};
}

ad::Tensor total_loss(const net::ModelBasedAutoencoder::Output& out, LossMode mode, const ad::Tensor& clean,
                      const ad::Tensor& theta_true, const ad::Tensor& corrupted) {
  if (out.thetas.empty() || out.thetas.size() != out.decoded.size()) {
    throw InvalidArgument("model output has no heads");
  }
  const double share = 1.0 / static_cast<double>(out.thetas.size());
  switch (mode) {
    case LossMode::DecodedMse: {
      ad::Tensor sum = ad::mse_loss(out.decoded[0], clean);
      for (std::size_t h = 1; h < out.decoded.size(); ++h) sum = ad::add(sum, ad::mse_loss(out.decoded[h], clean));
      return ad::scale(sum, share);
    }
    case LossMode::CoefficientMse: {
      ad::Tensor sum = ad::mse_loss(out.thetas[0], theta_true);
      for (std::size_t h = 1; h < out.thetas.size(); ++h) sum = ad::add(sum, ad::mse_loss(out.thetas[h], theta_true));
      return ad::scale(sum, share);
    }
    case LossMode::RobustDecoded:
      return ad::tukey_loss(out.decoded.back(), corrupted);
  }
  throw InvalidArgument("unknown loss mode");
}

std::vector<TrainingPair> training_batch(const net::ModelBasedAutoencoder& model, const GenScheme& scheme,
                                         int batch_size, std::uint64_t seed, long index) {
  Rng rng(derive_seed(seed, kTrainStream, static_cast<std::uint64_t>(index)));
  std::vector<TrainingPair> batch;
  batch.reserve(static_cast<std::size_t>(batch_size));
  for (int b = 0; b < batch_size; ++b) batch.push_back(generate_pair(model.spec(), scheme, model.grid(), rng));
  return batch;
}

TrainReport train(net::ModelBasedAutoencoder& model, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_log) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  const ModelSpec& spec = model.spec();
  const long phase1 = config.schedule == Schedule::Data1ThenData2
                          ? (config.phase1_steps >= 0 ? config.phase1_steps : config.steps / 2)
                          : config.steps;
  ad::Adam optimizer(model.encoder().store().trainable(), {.learning_rate = config.learning_rate});

  TrainReport report;
  report.config = config;
  const int m = spec.coeff_count();
  const int len = model.decoder().field_length();
  for (long step = 0; step < config.steps; ++step) {
    const int phase = step < phase1 ? 1 : 2;
    GenScheme scheme = GenScheme::mixed(spec);
    if (config.schedule == Schedule::Data1) scheme = GenScheme::data1(spec);
    if (config.schedule == Schedule::Data1ThenData2) scheme = phase == 1 ? GenScheme::data1(spec) : GenScheme::data2(spec);
    const double f = config.final_lr_fraction;
    const double decay =
        f + (1.0 - f) * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(step) / static_cast<double>(config.steps)));
    optimizer.set_learning_rate(decay * (phase == 1 ? config.learning_rate : 0.5 * config.learning_rate));

    const auto batch = training_batch(model, scheme, config.batch_size, config.seed, step);
    std::vector<RangeField> inputs;
    std::vector<double> clean;
    std::vector<double> corrupted;
    std::vector<double> thetas;
    for (const TrainingPair& p : batch) {
      inputs.push_back(p.input);
      clean.insert(clean.end(), p.target.data(), p.target.data() + p.target.size());
      corrupted.insert(corrupted.end(), p.input.data(), p.input.data() + p.input.size());
      thetas.insert(thetas.end(), p.theta_true.data(), p.theta_true.data() + p.theta_true.size());
    }
    const int b = config.batch_size;
    const ad::Tensor clean_t = ad::Tensor::constant({b, len}, std::move(clean));
    const ad::Tensor corrupted_t = ad::Tensor::constant({b, len}, std::move(corrupted));
    const ad::Tensor theta_t = ad::Tensor::constant({b, m}, std::move(thetas));

    optimizer.zero_grad();
    const auto out = model.forward(model.input_tensor(inputs), true);
    const ad::Tensor loss = total_loss(out, config.loss, clean_t, theta_t, corrupted_t);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingDivergedError("non-finite loss at step " + std::to_string(step) + " (lr " +
                                  format_double(optimizer.learning_rate()) + ", batch seed " +
                                  std::to_string(derive_seed(config.seed, kTrainStream, static_cast<std::uint64_t>(step))) +
                                  ")");
    }
    ad::backward(loss);
    optimizer.step();

    if (step % config.log_every == 0 || step + 1 == config.steps) {
      report.curve.push_back({step, value, phase});
      if (on_log) on_log(report.curve.back());
    }
    if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() && (step + 1) % config.checkpoint_every == 0) {
      net::ModelManifest manifest;
      manifest.spec_id = spec.id();
      manifest.encoder = model.encoder().config();
      manifest.scheme = schedule_name(config.schedule);
      manifest.seed = config.seed;
      manifest.steps = step + 1;
      model.save(config.checkpoint_path + ".step" + std::to_string(step + 1), manifest);
    }
  }
  report.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

std::map<double, double> validate(const net::ModelBasedAutoencoder& model, const std::vector<double>& outlier_ratios,
                                  double noise_sigma, int trials, std::uint64_t seed) {
  std::map<double, double> out;
  for (double ratio : outlier_ratios) {
    const auto pairs = evaluation_set(model.spec(), model.grid(), ratio, noise_sigma, trials, seed);
    double sum = 0.0;
    constexpr std::size_t kChunk = 32;
    for (std::size_t start = 0; start < pairs.size(); start += kChunk) {
      std::vector<RangeField> inputs;
      for (std::size_t t = start; t < std::min(pairs.size(), start + kChunk); ++t) inputs.push_back(pairs[t].input);
      const auto thetas = model.predict_batch(inputs);
      for (std::size_t k = 0; k < thetas.size(); ++k) {
        sum += field_error(model.spec(), model.decoder().decode(thetas[k]), pairs[start + k].target);
      }
    }
    out[ratio] = sum / static_cast<double>(pairs.size());
  }
  return out;
}

void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.precision(17);
  f << "step,loss,phase\n";
  for (const LossRecord& r : curve) f << r.step << ',' << r.loss << ',' << r.phase << '\n';
  if (!f) throw std::runtime_error("failed writing " + path);
}

}  // namespace polyreg::train
