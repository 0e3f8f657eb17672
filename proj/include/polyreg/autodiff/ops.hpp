#pragma once

#include "polyreg/autodiff/tensor.hpp"

namespace polyreg {
class FixedDecoder;
}

namespace polyreg::ad {

/// Cross-correlation with zero "same" padding and stride 1.
/// input [B, Cin, L] or [B, Cin, H, W]; weight [Cout, Cin, K] or
/// [Cout, Cin, K, K] with K odd; bias [Cout].
Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);

/// Window 2, stride 2 over every spatial axis; gradient goes to the first
/// maximal element of each window.
Tensor maxpool(const Tensor& x);

/// Running statistics owned by a batch-norm layer.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.9;  // running = momentum * running + (1 - momentum) * batch
  double epsilon = 1e-5;

  explicit BatchNormState(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), 0.0), running_var(static_cast<std::size_t>(channels), 1.0) {}
};

/// Per-channel normalization over batch and spatial axes followed by the
/// affine map gain * x_hat + shift. Training mode normalizes with batch
/// statistics and updates `state`; eval mode uses the running statistics.
Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& shift, BatchNormState& state, bool training);

/// Factor-2 linear (1D) / bilinear (2D) upsampling, align-corners false.
Tensor upsample2x(const Tensor& x);

/// x [B, F] times weight [O, F] transposed, plus bias [O].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

/// Concatenation along axis 1 (channels).
Tensor concat(const std::vector<Tensor>& xs);

Tensor add(const Tensor& x, const Tensor& y);

Tensor scale(const Tensor& x, double factor);

/// Same values under a new shape with equal element count.
Tensor reshape(const Tensor& x, Shape shape);

/// Mean over all spatial axes: [B, C, ...] -> [B, C].
Tensor spatial_mean(const Tensor& x);

/// Mean squared difference, scalar result.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

/// Mean Tukey biweight rho of (pred - target) / s, where s = 1.4826 * MAD of
/// the residuals over the whole batch (held constant for the gradient), or
/// `scale` when it is positive. rho saturates at c^2 / 6 beyond the cutoff.
Tensor tukey_loss(const Tensor& pred, const Tensor& target, double c = 4.685, double scale = 0.0);

/// Applies a fixed polynomial decoder to coefficient rows:
/// theta [B, M] -> fields [B, R*N]. Backward uses the decoder adjoint.
Tensor fixed_decode(const Tensor& theta, const FixedDecoder& decoder);

}  // namespace polyreg::ad
