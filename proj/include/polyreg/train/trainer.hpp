#pragma once

#include "polyreg/datagen/generator.hpp"
#include "polyreg/net/encoder.hpp"

#include <functional>
#include <map>
#include <string>
#include <vector>

namespace polyreg::train {

enum class Schedule { Data1, Data1ThenData2, Data1Plus2 };
enum class LossMode { DecodedMse, CoefficientMse, RobustDecoded };

std::string schedule_name(Schedule s);
Schedule parse_schedule(const std::string& text);
std::string loss_mode_name(LossMode m);
LossMode parse_loss_mode(const std::string& text);

struct TrainConfig {
  Schedule schedule = Schedule::Data1Plus2;
  long steps = 20000;
  /// Length of the Data1 phase of Data1ThenData2; negative means steps / 2.
  long phase1_steps = -1;
  int batch_size = 16;
  /// Halved for the second phase of Data1ThenData2.
  double learning_rate = 1e-3;
  /// Cosine decay of the learning rate over the run down to this fraction;
  /// 1 keeps it constant.
  double final_lr_fraction = 1.0;
  std::uint64_t seed = 0;
  LossMode loss = LossMode::DecodedMse;
  /// A loss-curve row every this many steps (plus the last step).
  long log_every = 100;
  /// Intermediate checkpoints every this many steps when > 0 and a path is set.
  long checkpoint_every = 0;
  std::string checkpoint_path;

  void validate() const;
  std::map<std::string, std::string> to_map() const;
};

struct LossRecord {
  long step = 0;
  double loss = 0.0;
  int phase = 1;
};

struct TrainReport {
  std::vector<LossRecord> curve;
  /// outlier ratio -> validation error, filled by the caller via validate().
  std::map<double, double> validation;
  double wall_seconds = 0.0;
  TrainConfig config;
};

/// Scalar loss over a batch. `corrupted` is the network input and is the only
/// field target the robust mode receives.
ad::Tensor total_loss(const net::ModelBasedAutoencoder::Output& out, LossMode mode, const ad::Tensor& clean,
                      const ad::Tensor& theta_true, const ad::Tensor& corrupted);

/// Batch `index` of a run: depends only on (seed, index) and the scheme.
std::vector<TrainingPair> training_batch(const net::ModelBasedAutoencoder& model, const GenScheme& scheme,
                                         int batch_size, std::uint64_t seed, long index);

/// Runs the schedule on `model` in place. Throws TrainingDivergedError on a
/// non-finite loss. `on_log` (optional) sees every logged record.
TrainReport train(net::ModelBasedAutoencoder& model, const TrainConfig& config,
                  const std::function<void(const LossRecord&)>& on_log = {});

/// Mean error of the model's final head per outlier ratio on evaluation sets
/// (MSE for scalar ranges, mean Euclidean norm otherwise).
std::map<double, double> validate(const net::ModelBasedAutoencoder& model, const std::vector<double>& outlier_ratios,
                                  double noise_sigma, int trials, std::uint64_t seed);

/// Writes "step,loss,phase" rows.
void write_loss_csv(const std::string& path, const std::vector<LossRecord>& curve);

}  // namespace polyreg::train
