#include "polyreg/datagen/generator.hpp"

#include "polyreg/errors.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <queue>

namespace polyreg {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ stream) ^ index);
}

namespace {

bool is_scalar(const ModelSpec& spec) { return spec.kind() == ModelKind::Scalar1D; }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

GenScheme GenScheme::data1(const ModelSpec& spec) {
  GenScheme s;
  s.name = SchemeName::Data1;
  s.max_outlier_ratio = 0.1;
  s.noise_sigma = 0.1;
  s.coefficient_scale = is_scalar(spec) ? 2.0 : 2.0;
  return s;
}

GenScheme GenScheme::data2(const ModelSpec& spec) {
  GenScheme s;
  s.name = SchemeName::Data2;
  s.max_outlier_ratio = 0.3;
  s.noise_sigma = 0.5;
  s.coefficient_scale = is_scalar(spec) ? 5.0 : 4.0;
  return s;
}

GenScheme GenScheme::mixed(const ModelSpec& spec) {
  GenScheme s = data2(spec);
  s.name = SchemeName::Mixed;
  return s;
}

GenScheme GenScheme::evaluation(const ModelSpec& spec, double outlier_ratio, double noise_sigma) {
  GenScheme s = data2(spec);
  s.name = SchemeName::Evaluation;
  s.max_outlier_ratio = outlier_ratio;
  s.noise_sigma = noise_sigma;
  s.fixed_outlier_ratio = outlier_ratio;
  s.validate();
  return s;
}

double GenScheme::table_noise(const ModelSpec& spec) { return is_scalar(spec) ? 0.01 : 0.5; }

double GenScheme::input_scale(const ModelSpec& spec) { return data2(spec).coefficient_scale; }

GenScheme GenScheme::parse(const ModelSpec& spec, std::string_view name) {
  if (name == "data1") return data1(spec);
  if (name == "data2") return data2(spec);
  if (name == "mixed" || name == "data1plus2") return mixed(spec);
  throw InvalidArgument("unknown generator scheme '" + std::string(name) + "'");
}

std::string GenScheme::label() const {
  switch (name) {
    case SchemeName::Data1: return "data1";
    case SchemeName::Data2: return "data2";
    case SchemeName::Mixed: return "mixed";
    case SchemeName::Evaluation: return "evaluation";
  }
  return "unknown";
}

void GenScheme::validate() const {
  if (!(max_outlier_ratio >= 0.0 && max_outlier_ratio < 1.0)) {
    throw InvalidArgument("outlier ratio must lie in [0, 1)");
  }
  if (!(noise_sigma >= 0.0)) throw InvalidArgument("noise sigma must be non-negative");
  if (!(coefficient_scale >= 0.0)) throw InvalidArgument("coefficient scale must be non-negative");
}

Eigen::VectorXd coefficient_scales(const ModelSpec& spec, double coefficient_scale) {
  const auto degrees = spec.coefficient_degrees();
  Eigen::VectorXd out(static_cast<Eigen::Index>(degrees.size()));
  for (std::size_t k = 0; k < degrees.size(); ++k) {
    const int decay_steps = std::max(0, degrees[k] - 1);
    out[static_cast<Eigen::Index>(k)] = coefficient_scale * std::ldexp(1.0, -decay_steps);
  }
  return out;
}

Coefficients sample_coefficients(const ModelSpec& spec, double coefficient_scale, Rng& rng) {
  const Eigen::VectorXd scales = coefficient_scales(spec, coefficient_scale);
  Coefficients theta(scales.size());
  for (Eigen::Index k = 0; k < scales.size(); ++k) theta[k] = scales[k] * uniform(rng, -1.0, 1.0);
  return theta;
}

bool is_four_connected(const std::vector<bool>& mask, int height, int width) {
  const auto total = std::count(mask.begin(), mask.end(), true);
  if (total == 0) return true;
  const auto start = static_cast<int>(std::find(mask.begin(), mask.end(), true) - mask.begin());
  std::vector<bool> seen(mask.size(), false);
  std::queue<int> frontier;
  frontier.push(start);
  seen[static_cast<std::size_t>(start)] = true;
  long reached = 0;
  while (!frontier.empty()) {
    const int p = frontier.front();
    frontier.pop();
    ++reached;
    const int r = p / width;
    const int c = p % width;
    const std::array<std::pair<int, int>, 4> nbrs{{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
    for (auto [nr, nc] : nbrs) {
      if (nr < 0 || nr >= height || nc < 0 || nc >= width) continue;
      const auto q = static_cast<std::size_t>(nr * width + nc);
      if (mask[q] && !seen[q]) {
        seen[q] = true;
        frontier.push(static_cast<int>(q));
      }
    }
  }
  return reached == total;
}

namespace {

std::vector<bool> largest_component(const std::vector<bool>& mask, int height, int width) {
  std::vector<int> label(mask.size(), -1);
  std::vector<int> sizes;
  for (std::size_t s = 0; s < mask.size(); ++s) {
    if (!mask[s] || label[s] >= 0) continue;
    const int id = static_cast<int>(sizes.size());
    int count = 0;
    std::queue<int> frontier;
    frontier.push(static_cast<int>(s));
    label[s] = id;
    while (!frontier.empty()) {
      const int p = frontier.front();
      frontier.pop();
      ++count;
      const int r = p / width;
      const int c = p % width;
      const std::array<std::pair<int, int>, 4> nbrs{{{r - 1, c}, {r + 1, c}, {r, c - 1}, {r, c + 1}}};
      for (auto [nr, nc] : nbrs) {
        if (nr < 0 || nr >= height || nc < 0 || nc >= width) continue;
        const auto q = static_cast<std::size_t>(nr * width + nc);
        if (mask[q] && label[q] < 0) {
          label[q] = id;
          frontier.push(static_cast<int>(q));
        }
      }
    }
    sizes.push_back(count);
  }
  std::vector<bool> out(mask.size(), false);
  if (sizes.empty()) return out;
  const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  for (std::size_t i = 0; i < mask.size(); ++i) out[i] = label[i] == keep;
  return out;
}

struct PolygonShape {
  double cx = 0.0;
  double cy = 0.0;
  // Unit-size vertices relative to the center, counter-clockwise.
  std::vector<std::array<double, 2>> offsets;
};

PolygonShape random_polygon(Rng& rng) {
  PolygonShape shape;
  shape.cx = uniform(rng, -0.9, 0.9);
  shape.cy = uniform(rng, -0.9, 0.9);
  const int vertices = std::uniform_int_distribution<int>(3, 8)(rng);
  std::vector<double> angles(static_cast<std::size_t>(vertices));
  for (double& a : angles) a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  std::sort(angles.begin(), angles.end());
  const double ax = uniform(rng, 0.6, 1.6);
  const double ay = uniform(rng, 0.6, 1.6);
  const double rot = uniform(rng, 0.0, std::numbers::pi);
  const double cr = std::cos(rot);
  const double sr = std::sin(rot);
  for (double a : angles) {
    const double ex = ax * std::cos(a);
    const double ey = ay * std::sin(a);
    shape.offsets.push_back({cr * ex - sr * ey, sr * ex + cr * ey});
  }
  return shape;
}

// Vertices on an ellipse in angular order form a convex polygon; rotation
// and positive axis scales preserve counter-clockwise orientation.
std::vector<bool> rasterize(const PolygonShape& shape, double size, const DomainGrid& grid, int& count) {
  const std::size_t k = shape.offsets.size();
  std::vector<std::array<double, 2>> v(k);
  for (std::size_t i = 0; i < k; ++i) {
    v[i] = {shape.cx + size * shape.offsets[i][0], shape.cy + size * shape.offsets[i][1]};
  }
  std::vector<bool> mask(static_cast<std::size_t>(grid.size()), false);
  count = 0;
  for (int p = 0; p < grid.size(); ++p) {
    const auto x = grid.point(p);
    bool inside = true;
    for (std::size_t i = 0; i < k && inside; ++i) {
      const auto& a = v[i];
      const auto& b = v[(i + 1) % k];
      const double cross = (b[0] - a[0]) * (x[1] - a[1]) - (b[1] - a[1]) * (x[0] - a[0]);
      inside = cross >= 0.0;
    }
    mask[static_cast<std::size_t>(p)] = inside;
    count += inside ? 1 : 0;
  }
  return mask;
}

std::vector<bool> polygon_mask_2d(const DomainGrid& grid, double target_ratio, Rng& rng) {
  constexpr int kAttempts = 24;
  constexpr double kTolerance = 0.05;
  const int n = grid.size();
  const bool lattice = grid.is_lattice();
  std::vector<bool> best;
  double best_gap = 2.0;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    const PolygonShape shape = random_polygon(rng);
    // Coverage grows monotonically with the size factor; bisect toward the target.
    double lo = 0.0;
    double hi = 8.0;
    std::vector<bool> candidate;
    double candidate_gap = 2.0;
    for (int step = 0; step < 40; ++step) {
      const double mid = 0.5 * (lo + hi);
      int count = 0;
      auto mask = rasterize(shape, mid, grid, count);
      const double fraction = static_cast<double>(count) / n;
      const double gap = std::abs(fraction - target_ratio);
      if (count > 0 && gap < candidate_gap) {
        candidate_gap = gap;
        candidate = std::move(mask);
      }
      if (fraction < target_ratio) {
        lo = mid;
      } else {
        hi = mid;
      }
    }
    if (candidate.empty()) continue;
    if (lattice && !is_four_connected(candidate, grid.height(), grid.width())) {
      candidate = largest_component(candidate, grid.height(), grid.width());
      const auto count = std::count(candidate.begin(), candidate.end(), true);
      candidate_gap = std::abs(static_cast<double>(count) / n - target_ratio);
    }
    if (candidate_gap < best_gap) {
      best_gap = candidate_gap;
      best = std::move(candidate);
    }
    if (best_gap <= kTolerance) break;
  }
  if (best.empty()) best.assign(static_cast<std::size_t>(n), false);
  return best;
}

}  // namespace

std::vector<bool> polygon_mask(const DomainGrid& grid, double target_ratio, Rng& rng) {
  if (!(target_ratio >= 0.0 && target_ratio < 1.0)) throw InvalidArgument("target ratio must lie in [0, 1)");
  const int n = grid.size();
  if (target_ratio == 0.0) return std::vector<bool>(static_cast<std::size_t>(n), false);
  if (grid.dim() == 1) {
    std::vector<bool> mask(static_cast<std::size_t>(n), false);
    const int length = static_cast<int>(std::lround(target_ratio * n));
    if (length == 0) return mask;
    const int start = std::uniform_int_distribution<int>(0, n - length)(rng);
    std::fill(mask.begin() + start, mask.begin() + start + length, true);
    return mask;
  }
  if (grid.dim() != 2) throw InvalidArgument("polygon masks support one- and two-dimensional domains");
  return polygon_mask_2d(grid, target_ratio, rng);
}

TrainingPair generate_pair(const ModelSpec& spec, const GenScheme& scheme_in, const DomainGrid& grid, Rng& rng) {
  scheme_in.validate();
  if (grid.dim() != spec.domain_dim()) throw InvalidArgument("grid dimension does not match model spec");
  GenScheme scheme = scheme_in;
  if (scheme.name == SchemeName::Mixed) {
    scheme = uniform(rng, 0.0, 1.0) < 0.5 ? GenScheme::data1(spec) : GenScheme::data2(spec);
  }
  const DesignMatrix design = build_design_matrix(spec, grid);
  const int r = spec.range_dim();

  TrainingPair pair;
  pair.theta_true = sample_coefficients(spec, scheme.coefficient_scale, rng);
  pair.target = design * pair.theta_true;
  const double ratio = scheme.fixed_outlier_ratio ? *scheme.fixed_outlier_ratio
                                                  : uniform(rng, 0.0, scheme.max_outlier_ratio);
  pair.outlier_mask = polygon_mask(grid, ratio, rng);
  const Coefficients theta_outlier = sample_coefficients(spec, scheme.coefficient_scale, rng);
  const RangeField outlier_field = design * theta_outlier;

  pair.input = pair.target;
  long flagged = 0;
  for (std::size_t i = 0; i < pair.outlier_mask.size(); ++i) {
    if (!pair.outlier_mask[i]) continue;
    ++flagged;
    const auto row = static_cast<Eigen::Index>(i) * r;
    pair.input.segment(row, r) = outlier_field.segment(row, r);
  }
  if (scheme.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, scheme.noise_sigma);
    for (Eigen::Index k = 0; k < pair.input.size(); ++k) pair.input[k] += noise(rng);
  }
  pair.realized_outlier_ratio = static_cast<double>(flagged) / grid.size();
  return pair;
}

DomainGrid default_grid(const ModelSpec& spec) {
  return is_scalar(spec) ? DomainGrid::line(64) : DomainGrid::lattice(32, 32);
}

std::vector<TrainingPair> evaluation_set(const ModelSpec& spec, const DomainGrid& grid, double outlier_ratio,
                                         double noise_sigma, int trials, std::uint64_t seed) {
  if (trials < 1) throw InvalidArgument("evaluation sets need at least one trial");
  const GenScheme scheme = GenScheme::evaluation(spec, outlier_ratio, noise_sigma);
  // Ratios are keyed in permille so 0.3 and 0.30000000000000004 share data.
  const auto stream = 0x5E7000u + static_cast<std::uint64_t>(std::llround(outlier_ratio * 1000.0));
  std::vector<TrainingPair> pairs;
  pairs.reserve(static_cast<std::size_t>(trials));
  for (int t = 0; t < trials; ++t) {
    Rng rng(derive_seed(seed, stream, static_cast<std::uint64_t>(t)));
    pairs.push_back(generate_pair(spec, scheme, grid, rng));
  }
  return pairs;
}

}  // namespace polyreg
