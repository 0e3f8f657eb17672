#pragma once

#include <Eigen/Dense>

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace polyreg {

/// Coefficient vector theta; ordering fixed per ModelSpec.
using Coefficients = Eigen::VectorXd;
/// N range vectors stored flat (length R*N), same order as the DomainGrid.
using RangeField = Eigen::VectorXd;
/// Stacked (R*N) x M design matrix.
using DesignMatrix = Eigen::MatrixXd;

enum class ModelKind { Scalar1D, QuadraticMotion2D };

/// Identifies the polynomial family.
///
/// Scalar1D:          D = 1, R = 1, M = degree + 1, monomials in ascending degree.
/// QuadraticMotion2D: D = 2, R = 2, M = 12, columns
///   [1, 0, x1, x2, 0, 0, x1^2, x1 x2, x2^2, 0, 0, 0]
///   [0, 1, 0, 0, x1, x2, 0, 0, 0, x1^2, x1 x2, x2^2]
class ModelSpec {
 public:
  static ModelSpec scalar(int degree = 4);
  static ModelSpec quadratic_motion();
  /// Accepts "scalar", "scalar<k>", "quad2d" (aliases: "vector", "motion").
  static ModelSpec parse(std::string_view text);

  ModelKind kind() const { return kind_; }
  int degree() const { return degree_; }
  int domain_dim() const { return kind_ == ModelKind::Scalar1D ? 1 : 2; }
  int range_dim() const { return kind_ == ModelKind::Scalar1D ? 1 : 2; }
  int coeff_count() const { return kind_ == ModelKind::Scalar1D ? degree_ + 1 : 12; }
  /// Total monomial degree of every coefficient column.
  std::vector<int> coefficient_degrees() const;
  /// Stable identifier, e.g. "scalar4" or "quad2d".
  std::string id() const;

  friend bool operator==(const ModelSpec&, const ModelSpec&) = default;

 private:
  ModelSpec(ModelKind kind, int degree) : kind_(kind), degree_(degree) {}
  ModelKind kind_;
  int degree_;
};

/// Ordered sample positions in R^D.
///
/// Lattices are row-major (row = x2, column = x1) with every axis mapped
/// to [-1, 1]; an axis with a single sample sits at 0.
class DomainGrid {
 public:
  static DomainGrid line(int n);
  static DomainGrid lattice(int height, int width);
  /// Arbitrary points, `coords` holds N*dim values point-major.
  static DomainGrid from_points(int dim, std::vector<double> coords);

  int dim() const { return dim_; }
  int size() const { return static_cast<int>(coords_.size()) / dim_; }
  /// Lattice extents; a line has height 1, free point sets report 0.
  int height() const { return height_; }
  int width() const { return width_; }
  bool is_lattice() const { return width_ > 0; }
  std::span<const double> point(int i) const {
    return {coords_.data() + static_cast<std::size_t>(i) * dim_, static_cast<std::size_t>(dim_)};
  }

  friend bool operator==(const DomainGrid&, const DomainGrid&) = default;

 private:
  DomainGrid(int dim, std::vector<double> coords, int height, int width)
      : dim_(dim), coords_(std::move(coords)), height_(height), width_(width) {}
  int dim_;
  std::vector<double> coords_;
  int height_;
  int width_;
};

/// R x M design block M_i(x) for one domain point.
Eigen::MatrixXd design_block(const ModelSpec& spec, std::span<const double> x);

/// Stacks design_block over every grid point.
DesignMatrix build_design_matrix(const ModelSpec& spec, const DomainGrid& grid);

/// d = M(x) theta.
RangeField decode(const ModelSpec& spec, const Coefficients& theta, const DomainGrid& grid);

/// M(x)^T g, the vector-Jacobian product of decode.
Coefficients decode_adjoint(const ModelSpec& spec, const DomainGrid& grid, const RangeField& upstream);

/// Error of an estimated field against the clean one: mean squared error for
/// scalar ranges, mean Euclidean norm of the per-point difference otherwise.
double field_error(const ModelSpec& spec, const RangeField& estimate, const RangeField& clean);

/// The non-trainable decoding layer bound to one spec and grid.
///
/// Caches the design matrix so batched decode/adjoint calls are single
/// matrix products. Holds no learnable state.
class FixedDecoder {
 public:
  FixedDecoder(ModelSpec spec, DomainGrid grid);

  const ModelSpec& spec() const { return spec_; }
  const DomainGrid& grid() const { return grid_; }
  const DesignMatrix& design() const { return design_; }
  int field_length() const { return static_cast<int>(design_.rows()); }
  int code_length() const { return static_cast<int>(design_.cols()); }
  static constexpr int trainable_parameter_count() { return 0; }

  RangeField decode(const Coefficients& theta) const;
  Coefficients adjoint(const RangeField& upstream) const;
  /// Column-wise decode of an M x B coefficient matrix.
  Eigen::MatrixXd decode_batch(const Eigen::MatrixXd& thetas) const;
  Eigen::MatrixXd adjoint_batch(const Eigen::MatrixXd& upstream) const;

 private:
  ModelSpec spec_;
  DomainGrid grid_;
  DesignMatrix design_;
};

}  // namespace polyreg
