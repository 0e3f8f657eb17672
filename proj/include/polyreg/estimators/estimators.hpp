#pragma once

#include "polyreg/poly/model.hpp"

#include <cstdint>
#include <vector>

namespace polyreg {

struct RansacConfig {
  int iterations = 500;
  /// Maximum Euclidean norm of a per-point residual counted as consensus.
  double inlier_threshold = 0.05;
  /// Points per hypothesis; 0 selects ceil(M / R).
  int min_sample = 0;
  /// Stop once this fraction of the points agrees with a hypothesis.
  double consensus_fraction_stop = 1.0;
  std::uint64_t seed = 0;
};

struct IrwlsConfig {
  int max_iterations = 50;
  double convergence_tol = 1e-8;
  double tuning_constant = 4.685;
};

struct FitReport {
  Coefficients theta_hat;
  /// One flag per grid point. LSE reports all points as inliers.
  std::vector<bool> inlier_mask;
  int iterations_used = 0;
  double final_residual_norm = 0.0;
};

/// Closed-form least squares through a column-pivoted QR.
/// Throws SingularSystemError when the design is rank deficient.
Coefficients fit_lse(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d);

/// Same, with a precomputed design matrix.
Coefficients fit_lse(const DesignMatrix& design, const RangeField& d);

/// Least squares where every row of point i is scaled by weights[i].
Coefficients fit_weighted_lse(const DesignMatrix& design, const RangeField& d, std::span<const double> weights);

/// Random sample consensus with minimal square subsystems and a least-squares
/// refit on the winning consensus set. Deterministic for a fixed seed.
FitReport fit_ransac(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d, const RansacConfig& config);

/// Tukey biweight: (1 - (r / (c s))^2)^2 inside the cutoff, 0 beyond.
double tukey_weight(double r, double scale, double c);

/// Tukey M-estimator solved by iteratively reweighted least squares,
/// starting from the LSE solution, with scale = 1.4826 * MAD of the
/// per-point residual norms re-estimated every iteration.
FitReport fit_irwls(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d, const IrwlsConfig& config);

/// Euclidean norm of every R-dimensional residual d_i - M_i theta.
std::vector<double> residual_norms(const DesignMatrix& design, int range_dim, const RangeField& d,
                                   const Coefficients& theta);

}  // namespace polyreg
