#include "polyreg/poly/model.hpp"

#include "polyreg/errors.hpp"

#include <cmath>
#include <string>

namespace polyreg {

ModelSpec ModelSpec::scalar(int degree) {
  if (degree < 0) throw InvalidArgument("scalar model degree must be non-negative");
  return ModelSpec(ModelKind::Scalar1D, degree);
}

ModelSpec ModelSpec::quadratic_motion() { return ModelSpec(ModelKind::QuadraticMotion2D, 2); }

ModelSpec ModelSpec::parse(std::string_view text) {
  if (text == "quad2d" || text == "vector" || text == "motion") return quadratic_motion();
  if (text == "scalar") return scalar(4);
  if (text.starts_with("scalar")) {
    const std::string digits(text.substr(6));
    std::size_t used = 0;
    int degree = -1;
    try {
      degree = std::stoi(digits, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == digits.size() && degree >= 0) return scalar(degree);
  }
  throw InvalidArgument("unknown model spec '" + std::string(text) + "'");
}

std::vector<int> ModelSpec::coefficient_degrees() const {
  if (kind_ == ModelKind::Scalar1D) {
    std::vector<int> out(degree_ + 1);
    for (int k = 0; k <= degree_; ++k) out[k] = k;
    return out;
  }
  return {0, 0, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2};
}

std::string ModelSpec::id() const {
  if (kind_ == ModelKind::Scalar1D) return "scalar" + std::to_string(degree_);
  return "quad2d";
}

namespace {

double axis_coordinate(int index, int count) {
  if (count <= 1) return 0.0;
  return -1.0 + 2.0 * static_cast<double>(index) / static_cast<double>(count - 1);
}

}  // namespace

DomainGrid DomainGrid::line(int n) {
  if (n <= 0) throw InvalidArgument("grid must contain at least one point");
  std::vector<double> coords(n);
  for (int i = 0; i < n; ++i) coords[i] = axis_coordinate(i, n);
  return DomainGrid(1, std::move(coords), 1, n);
}

DomainGrid DomainGrid::lattice(int height, int width) {
  if (height <= 0 || width <= 0) throw InvalidArgument("lattice extents must be positive");
  std::vector<double> coords(static_cast<std::size_t>(height) * width * 2);
  std::size_t k = 0;
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      coords[k++] = axis_coordinate(c, width);
      coords[k++] = axis_coordinate(r, height);
    }
  }
  return DomainGrid(2, std::move(coords), height, width);
}

DomainGrid DomainGrid::from_points(int dim, std::vector<double> coords) {
  if (dim <= 0) throw InvalidArgument("domain dimension must be positive");
  if (coords.empty() || coords.size() % static_cast<std::size_t>(dim) != 0) {
    throw InvalidArgument("point coordinates must be a non-empty multiple of the dimension");
  }
  return DomainGrid(dim, std::move(coords), 0, 0);
}

Eigen::MatrixXd design_block(const ModelSpec& spec, std::span<const double> x) {
  if (static_cast<int>(x.size()) != spec.domain_dim()) {
    throw InvalidArgument("domain point has dimension " + std::to_string(x.size()) + ", model " +
                          spec.id() + " expects " + std::to_string(spec.domain_dim()));
  }
  Eigen::MatrixXd block = Eigen::MatrixXd::Zero(spec.range_dim(), spec.coeff_count());
  if (spec.kind() == ModelKind::Scalar1D) {
    double p = 1.0;
    for (int k = 0; k <= spec.degree(); ++k) {
      block(0, k) = p;
      p *= x[0];
    }
    return block;
  }
  const double x1 = x[0];
  const double x2 = x[1];
  block(0, 0) = 1.0;
  block(0, 2) = x1;
  block(0, 3) = x2;
  block(0, 6) = x1 * x1;
  block(0, 7) = x1 * x2;
  block(0, 8) = x2 * x2;
  block(1, 1) = 1.0;
  block(1, 4) = x1;
  block(1, 5) = x2;
  block(1, 9) = x1 * x1;
  block(1, 10) = x1 * x2;
  block(1, 11) = x2 * x2;
  return block;
}

DesignMatrix build_design_matrix(const ModelSpec& spec, const DomainGrid& grid) {
  const int r = spec.range_dim();
  DesignMatrix out(static_cast<Eigen::Index>(r) * grid.size(), spec.coeff_count());
  for (int i = 0; i < grid.size(); ++i) out.middleRows(static_cast<Eigen::Index>(i) * r, r) = design_block(spec, grid.point(i));
  return out;
}

RangeField decode(const ModelSpec& spec, const Coefficients& theta, const DomainGrid& grid) {
  if (theta.size() != spec.coeff_count()) {
    throw InvalidArgument("coefficient vector has length " + std::to_string(theta.size()) + ", expected " +
                          std::to_string(spec.coeff_count()));
  }
  return build_design_matrix(spec, grid) * theta;
}

Coefficients decode_adjoint(const ModelSpec& spec, const DomainGrid& grid, const RangeField& upstream) {
  const auto expected = static_cast<Eigen::Index>(spec.range_dim()) * grid.size();
  if (upstream.size() != expected) {
    throw InvalidArgument("upstream gradient has length " + std::to_string(upstream.size()) + ", expected " +
                          std::to_string(expected));
  }
  return build_design_matrix(spec, grid).transpose() * upstream;
}

FixedDecoder::FixedDecoder(ModelSpec spec, DomainGrid grid)
    : spec_(spec), grid_(std::move(grid)), design_(build_design_matrix(spec_, grid_)) {
  if (grid_.dim() != spec_.domain_dim()) throw InvalidArgument("grid dimension does not match model spec");
}

RangeField FixedDecoder::decode(const Coefficients& theta) const {
  if (theta.size() != code_length()) throw InvalidArgument("coefficient vector length mismatch");
  return design_ * theta;
}

Coefficients FixedDecoder::adjoint(const RangeField& upstream) const {
  if (upstream.size() != field_length()) throw InvalidArgument("upstream gradient length mismatch");
  return design_.transpose() * upstream;
}

Eigen::MatrixXd FixedDecoder::decode_batch(const Eigen::MatrixXd& thetas) const {
  if (thetas.rows() != code_length()) throw InvalidArgument("coefficient batch has wrong row count");
  return design_ * thetas;
}

Eigen::MatrixXd FixedDecoder::adjoint_batch(const Eigen::MatrixXd& upstream) const {
  if (upstream.rows() != field_length()) throw InvalidArgument("upstream batch has wrong row count");
  return design_.transpose() * upstream;
}

double field_error(const ModelSpec& spec, const RangeField& estimate, const RangeField& clean) {
  if (estimate.size() != clean.size() || clean.size() == 0 || clean.size() % spec.range_dim() != 0) {
    throw InvalidArgument("field_error needs two equally sized non-empty fields");
  }
  const int r = spec.range_dim();
  const RangeField diff = estimate - clean;
  if (r == 1) return diff.squaredNorm() / static_cast<double>(diff.size());
  const auto n = diff.size() / r;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) sum += diff.segment(i * r, r).norm();
  return sum / static_cast<double>(n);
}

}  // namespace polyreg
