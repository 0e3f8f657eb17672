#include "polyreg/estimators/estimators.hpp"

#include "polyreg/errors.hpp"
#include "polyreg/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <string>

namespace polyreg {

namespace {

Coefficients solve_full_rank(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
  if (qr.rank() < a.cols()) {
    throw SingularSystemError("design matrix has rank " + std::to_string(qr.rank()) + " < " +
                              std::to_string(a.cols()) + " coefficients");
  }
  return qr.solve(b);
}

void check_field(const DesignMatrix& design, const RangeField& d) {
  if (d.size() != design.rows()) {
    throw InvalidArgument("range field has length " + std::to_string(d.size()) + ", design has " +
                          std::to_string(design.rows()) + " rows");
  }
}

/// Rows of the points flagged in `mask`.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> gather_points(const DesignMatrix& design, const RangeField& d,
                                                          int range_dim, const std::vector<bool>& mask) {
  const auto count = std::count(mask.begin(), mask.end(), true);
  Eigen::MatrixXd a(count * range_dim, design.cols());
  Eigen::VectorXd b(count * range_dim);
  Eigen::Index row = 0;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    a.middleRows(row, range_dim) = design.middleRows(static_cast<Eigen::Index>(i) * range_dim, range_dim);
    b.segment(row, range_dim) = d.segment(static_cast<Eigen::Index>(i) * range_dim, range_dim);
    row += range_dim;
  }
  return {std::move(a), std::move(b)};
}

std::vector<bool> threshold_mask(const std::vector<double>& norms, double threshold, int& count) {
  std::vector<bool> mask(norms.size());
  count = 0;
  for (std::size_t i = 0; i < norms.size(); ++i) {
    mask[i] = norms[i] <= threshold;
    count += mask[i] ? 1 : 0;
  }
  return mask;
}

}  // namespace

std::vector<double> residual_norms(const DesignMatrix& design, int range_dim, const RangeField& d,
                                   const Coefficients& theta) {
  const Eigen::VectorXd r = d - design * theta;
  const auto n = r.size() / range_dim;
  std::vector<double> out(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = r.segment(i * range_dim, range_dim).norm();
  return out;
}

Coefficients fit_lse(const DesignMatrix& design, const RangeField& d) {
  check_field(design, d);
  return solve_full_rank(design, d);
}

Coefficients fit_lse(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d) {
  return fit_lse(build_design_matrix(spec, grid), d);
}

Coefficients fit_weighted_lse(const DesignMatrix& design, const RangeField& d, std::span<const double> weights) {
  check_field(design, d);
  if (weights.empty() || design.rows() % static_cast<Eigen::Index>(weights.size()) != 0) {
    throw InvalidArgument("weights must provide one value per grid point");
  }
  const auto range_dim = design.rows() / static_cast<Eigen::Index>(weights.size());
  Eigen::MatrixXd a = design;
  Eigen::VectorXd b = d;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw InvalidArgument("weights must be non-negative");
    const double s = std::sqrt(weights[i]);
    const auto row = static_cast<Eigen::Index>(i) * range_dim;
    a.middleRows(row, range_dim) *= s;
    b.segment(row, range_dim) *= s;
  }
  return solve_full_rank(a, b);
}

FitReport fit_ransac(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d, const RansacConfig& config) {
  const int m = spec.coeff_count();
  const int r = spec.range_dim();
  const int min_sample = config.min_sample > 0 ? config.min_sample : (m + r - 1) / r;
  if (config.iterations < 1) throw InvalidArgument("RANSAC needs at least one iteration");
  if (!(config.inlier_threshold > 0.0)) throw InvalidArgument("RANSAC inlier threshold must be positive");
  if (!(config.consensus_fraction_stop > 0.0 && config.consensus_fraction_stop <= 1.0)) {
    throw InvalidArgument("consensus fraction must lie in (0, 1]");
  }
  if (min_sample * r < m) throw InvalidArgument("RANSAC minimal sample cannot determine the model");
  const int n = grid.size();
  if (n < min_sample) throw InvalidArgument("fewer grid points than the RANSAC minimal sample");

  const DesignMatrix design = build_design_matrix(spec, grid);
  check_field(design, d);

  std::mt19937_64 rng(config.seed);
  std::vector<int> indices(static_cast<std::size_t>(n));
  std::iota(indices.begin(), indices.end(), 0);
  Eigen::MatrixXd sub_a(static_cast<Eigen::Index>(min_sample) * r, m);
  Eigen::VectorXd sub_b(static_cast<Eigen::Index>(min_sample) * r);

  const int stop_count = static_cast<int>(std::ceil(config.consensus_fraction_stop * n));
  const double t2 = config.inlier_threshold * config.inlier_threshold;
  int best_count = -1;
  double best_cost = 0.0;
  Coefficients best_theta;
  std::vector<bool> best_mask;
  int used = 0;
  for (int it = 0; it < config.iterations; ++it) {
    ++used;
    // Partial Fisher-Yates draw of min_sample distinct points.
    for (int k = 0; k < min_sample; ++k) {
      std::uniform_int_distribution<int> pick(k, n - 1);
      std::swap(indices[static_cast<std::size_t>(k)], indices[static_cast<std::size_t>(pick(rng))]);
      const auto row = static_cast<Eigen::Index>(indices[static_cast<std::size_t>(k)]) * r;
      sub_a.middleRows(static_cast<Eigen::Index>(k) * r, r) = design.middleRows(row, r);
      sub_b.segment(static_cast<Eigen::Index>(k) * r, r) = d.segment(row, r);
    }
    Coefficients theta;
    if (sub_a.rows() == m) {
      Eigen::FullPivLU<Eigen::MatrixXd> lu(sub_a);
      if (!lu.isInvertible()) continue;
      theta = lu.solve(sub_b);
    } else {
      Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(sub_a);
      if (qr.rank() < m) continue;
      theta = qr.solve(sub_b);
    }
    if (!theta.allFinite()) continue;
    // Consensus is scored by the truncated quadratic cost, so among
    // hypotheses with similar support the tighter fit wins.
    const auto norms = residual_norms(design, r, d, theta);
    double cost = 0.0;
    for (double v : norms) cost += std::min(v * v, t2);
    int count = 0;
    auto mask = threshold_mask(norms, config.inlier_threshold, count);
    if (best_count < 0 || cost < best_cost) {
      best_cost = cost;
      best_count = count;
      best_theta = std::move(theta);
      best_mask = std::move(mask);
      if (best_count >= stop_count) break;
    }
  }
  if (best_count < 0) throw EstimationFailedError("no RANSAC sample produced a solvable subsystem");

  // Refit on the consensus set, then let the refit model re-select its
  // inliers until the set stops changing.
  for (int pass = 0; pass < 10; ++pass) {
    Coefficients refit;
    try {
      auto [a, b] = gather_points(design, d, r, best_mask);
      refit = solve_full_rank(a, b);
    } catch (const SingularSystemError&) {
      break;
    }
    int count = 0;
    auto mask = threshold_mask(residual_norms(design, r, d, refit), config.inlier_threshold, count);
    best_theta = std::move(refit);
    if (count < best_count || mask == best_mask) break;
    best_count = count;
    best_mask = std::move(mask);
  }

  FitReport report;
  report.final_residual_norm = (d - design * best_theta).norm();
  report.theta_hat = std::move(best_theta);
  report.inlier_mask = std::move(best_mask);
  report.iterations_used = used;
  return report;
}

double tukey_weight(double r, double scale, double c) {
  if (!(scale > 0.0 && c > 0.0)) throw InvalidArgument("Tukey weight needs a positive scale and tuning constant");
  const double cutoff = c * scale;
  const double a = std::abs(r);
  if (a >= cutoff) return 0.0;
  const double u = a / cutoff;
  const double t = 1.0 - u * u;
  return t * t;
}

FitReport fit_irwls(const ModelSpec& spec, const DomainGrid& grid, const RangeField& d, const IrwlsConfig& config) {
  if (config.max_iterations < 1 || !(config.convergence_tol > 0.0) || !(config.tuning_constant > 0.0)) {
    throw InvalidArgument("IRWLS configuration values must be positive");
  }
  const int r = spec.range_dim();
  const DesignMatrix design = build_design_matrix(spec, grid);
  Coefficients theta = fit_lse(design, d);
  // Keeps the scale positive when the data is exactly in-model.
  const double scale_floor = 1e-10 * (1.0 + d.cwiseAbs().maxCoeff());

  auto weights_for = [&](const Coefficients& t) {
    const auto norms = residual_norms(design, r, d, t);
    const double scale = std::max(1.4826 * median_absolute_deviation(norms), scale_floor);
    std::vector<double> w(norms.size());
    for (std::size_t i = 0; i < norms.size(); ++i) w[i] = tukey_weight(norms[i], scale, config.tuning_constant);
    return w;
  };

  int used = 0;
  for (int it = 1; it <= config.max_iterations; ++it) {
    used = it;
    const auto w = weights_for(theta);
    if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) {
      throw DegenerateWeightsError("all Tukey weights vanished at iteration " + std::to_string(it));
    }
    Coefficients next = fit_weighted_lse(design, d, w);
    const double step = (next - theta).norm();
    theta = std::move(next);
    if (step < config.convergence_tol) break;
  }

  FitReport report;
  const auto w = weights_for(theta);
  report.inlier_mask.resize(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) report.inlier_mask[i] = w[i] > 0.5;
  report.final_residual_norm = (d - design * theta).norm();
  report.theta_hat = std::move(theta);
  report.iterations_used = used;
  return report;
}

}  // namespace polyreg
