#pragma once

#include "polyreg/poly/model.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace polyreg {

using Rng = std::mt19937_64;

/// Mixes (seed, stream, index) into an independent 64-bit seed (splitmix64).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index = 0);

enum class SchemeName { Data1, Data2, Mixed, Evaluation };

/// Corruption scheme of the synthetic pair generator.
struct GenScheme {
  SchemeName name = SchemeName::Data1;
  double max_outlier_ratio = 0.1;
  double noise_sigma = 0.1;
  double coefficient_scale = 1.0;
  /// When set, every pair uses exactly this outlier ratio (evaluation sets).
  std::optional<double> fixed_outlier_ratio;

  /// Mildly contaminated training data: ratio <= 0.1, sigma 0.1.
  static GenScheme data1(const ModelSpec& spec);
  /// Heavily contaminated training data: ratio <= 0.3, sigma 0.5.
  static GenScheme data2(const ModelSpec& spec);
  /// Each pair drawn from Data1 or Data2 with probability 1/2.
  static GenScheme mixed(const ModelSpec& spec);
  /// Test-time data: Data2 magnitudes, fixed ratio, given noise.
  static GenScheme evaluation(const ModelSpec& spec, double outlier_ratio, double noise_sigma);
  /// Evaluation noise used by the benchmark tables (0.01 scalar, 0.5 vector).
  static double table_noise(const ModelSpec& spec);
  /// Fixed divisor that brings generated fields to O(1) for the networks.
  static double input_scale(const ModelSpec& spec);

  static GenScheme parse(const ModelSpec& spec, std::string_view name);
  std::string label() const;
  void validate() const;
};

struct TrainingPair {
  RangeField input;
  RangeField target;
  std::vector<bool> outlier_mask;
  Coefficients theta_true;
  double realized_outlier_ratio = 0.0;
};

/// Per-coefficient half-widths: scale * decay(total degree), with decay
/// 1, 1, 1/2, 1/4, ... so the highest-degree terms stay bounded on [-1, 1].
Eigen::VectorXd coefficient_scales(const ModelSpec& spec, double coefficient_scale);

/// Uniform draw on [-scale_k, scale_k] per coefficient.
Coefficients sample_coefficients(const ModelSpec& spec, double coefficient_scale, Rng& rng);

/// Structured outlier support covering about `target_ratio` of the grid.
///
/// D = 1: one contiguous interval of round(target_ratio * N) points.
/// D = 2: the lattice points inside a random convex polygon (3-8 vertices),
/// resized until the covered fraction lies within 0.05 of the target; the
/// result is always a single 4-connected region.
std::vector<bool> polygon_mask(const DomainGrid& grid, double target_ratio, Rng& rng);

/// One (corrupted, clean) pair. Inside the outlier support the clean field is
/// replaced by an independently sampled polynomial; Gaussian noise is added
/// to the whole input. The target stays noise free.
TrainingPair generate_pair(const ModelSpec& spec, const GenScheme& scheme, const DomainGrid& grid, Rng& rng);

/// `trials` evaluation pairs at a fixed outlier ratio. Trial t depends only on
/// (seed, ratio, t), so every consumer sees the same data.
std::vector<TrainingPair> evaluation_set(const ModelSpec& spec, const DomainGrid& grid, double outlier_ratio,
                                         double noise_sigma, int trials, std::uint64_t seed);

/// The fixed grid each model family is trained on (64 points / 32x32).
DomainGrid default_grid(const ModelSpec& spec);

/// True when the flagged lattice cells form one 4-connected component.
bool is_four_connected(const std::vector<bool>& mask, int height, int width);

}  // namespace polyreg
