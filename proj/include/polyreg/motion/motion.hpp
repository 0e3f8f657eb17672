#pragma once

#include "polyreg/estimators/estimators.hpp"
#include "polyreg/motion/io.hpp"

#include <memory>
#include <string>
#include <vector>

namespace polyreg::net {
class ModelBasedAutoencoder;
}

namespace polyreg::motion {

enum class FitMethod { Lse, Ransac, Irwls, Network };

FitMethod parse_fit_method(const std::string& text);

struct MotionFitConfig {
  FitMethod method = FitMethod::Lse;
  RansacConfig ransac{.inlier_threshold = 2.5};
  IrwlsConfig irwls;
  /// Required for FitMethod::Network.
  std::shared_ptr<const net::ModelBasedAutoencoder> network;
};

struct MotionFit {
  Coefficients theta;     // 12 coefficients, pixel displacements over normalized coordinates
  FlowMap parametric;     // decode(theta) at full resolution
  std::vector<float> residual;  // per-pixel Euclidean norm of flow - parametric
};

/// The lattice of a width x height frame with coordinates in [-1, 1].
DomainGrid flow_grid(int width, int height);
/// Flow values as an interleaved range field on flow_grid.
RangeField flow_to_field(const FlowMap& flow);
FlowMap field_to_flow(const RangeField& field, int width, int height);

/// Area-average resampling to `width` x `height`. Output node j averages
/// the linearly interpolated source over a box centred on the source
/// position sharing its normalized coordinate (shrunk symmetrically at the
/// edges), so both grids describe the same field and affine flows are
/// reproduced exactly.
FlowMap resample_flow(const FlowMap& flow, int width, int height);

/// Coefficients fitted on a resampled flow whose values were multiplied by
/// (sx, sy) back to the original pixel units: u-coefficients / sx,
/// v-coefficients / sy. Normalized coordinates make the monomials themselves
/// resolution independent.
Coefficients rescale_theta(const Coefficients& theta, double sx, double sy);

MotionFit fit_dominant_motion(const FlowMap& flow, const MotionFitConfig& config);

enum class BorderPolicy { Black, Clamp };

BorderPolicy parse_border_policy(const std::string& text);

/// out(x) = input(x + f_theta(x)), bilinear. Samples outside the frame are 0
/// under Black; Clamp reads the nearest edge pixel.
Image warp_backward(const Image& image, const Coefficients& theta, BorderPolicy border = BorderPolicy::Black);

struct StabilizationParams {
  /// Odd. 1 locks every frame to frame 0; larger windows keep the centered
  /// moving average of the camera trajectory and remove the rest.
  int smoothing_window = 1;
  BorderPolicy border = BorderPolicy::Black;
  int jobs = 1;
};

struct StabilizationResult {
  std::vector<Image> frames;
  /// Raw per-pair coefficients theta_t (flow t -> t+1).
  std::vector<Coefficients> thetas;
  /// Coefficients each output frame was backwarped by.
  std::vector<Coefficients> corrections;
};

/// flows[t] maps frame t to frame t+1: frame_t(x) ~ frame_{t+1}(x + f(x)).
StabilizationResult stabilize_sequence(const std::vector<Image>& frames, const std::vector<FlowMap>& flows,
                                       const StabilizationParams& params, const MotionFitConfig& fit);

/// "frame_index,c0,...,c11" with one row per theta.
void write_theta_timeline(const std::string& path, const std::vector<Coefficients>& thetas);

}  // namespace polyreg::motion
