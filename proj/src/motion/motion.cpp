#include "polyreg/motion/motion.hpp"

#include "polyreg/errors.hpp"
#include "polyreg/net/encoder.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <mutex>
#include <thread>

namespace polyreg::motion {

FitMethod parse_fit_method(const std::string& text) {
  if (text == "lse") return FitMethod::Lse;
  if (text == "ransac") return FitMethod::Ransac;
  if (text == "irwls") return FitMethod::Irwls;
  if (text == "network" || text == "net") return FitMethod::Network;
  throw InvalidArgument("unknown fit method '" + text + "' (expected lse, ransac, irwls or network)");
}

BorderPolicy parse_border_policy(const std::string& text) {
  if (text == "black") return BorderPolicy::Black;
  if (text == "clamp") return BorderPolicy::Clamp;
  throw InvalidArgument("unknown border policy '" + text + "' (expected black or clamp)");
}

DomainGrid flow_grid(int width, int height) { return DomainGrid::lattice(height, width); }

RangeField flow_to_field(const FlowMap& flow) {
  RangeField d(static_cast<Eigen::Index>(flow.data.size()));
  for (std::size_t i = 0; i < flow.data.size(); ++i) {
    if (!std::isfinite(flow.data[i])) throw InvalidArgument("flow contains non-finite values");
    d[static_cast<Eigen::Index>(i)] = flow.data[i];
  }
  return d;
}

FlowMap field_to_flow(const RangeField& field, int width, int height) {
  FlowMap flow(width, height);
  if (static_cast<std::size_t>(field.size()) != flow.data.size()) throw InvalidArgument("field does not fit the flow size");
  for (std::size_t i = 0; i < flow.data.size(); ++i) flow.data[i] = static_cast<float>(field[static_cast<Eigen::Index>(i)]);
  return flow;
}

namespace {

/// Integral of the unit hat function max(0, 1 - |t|) from -inf to t.
double hat_integral(double t) {
  if (t <= -1.0) return 0.0;
  if (t <= 0.0) return 0.5 * (t + 1.0) * (t + 1.0);
  if (t <= 1.0) return 1.0 - 0.5 * (1.0 - t) * (1.0 - t);
  return 1.0;
}

/// Row-stochastic weights mapping n source samples to m: the mean of the
/// linearly interpolated source over a box centred on the source position
/// that shares the destination's normalized coordinate. The box shrinks
/// symmetrically near the edges, so linear fields resample exactly.
Eigen::MatrixXd box_weights(int n, int m) {
  Eigen::MatrixXd w = Eigen::MatrixXd::Zero(m, n);
  const double half = 0.5 * static_cast<double>(n - 1) / static_cast<double>(std::max(m - 1, 1));
  for (int j = 0; j < m; ++j) {
    const double center = m == 1 ? 0.5 * (n - 1) : static_cast<double>(j) * (n - 1) / (m - 1);
    const double h = std::min({half, center, (n - 1) - center});
    for (int i = 0; i < n; ++i) {
      if (h <= 0.0) {
        w(j, i) = std::max(0.0, 1.0 - std::abs(center - i));
      } else {
        w(j, i) = (hat_integral(center + h - i) - hat_integral(center - h - i)) / (2.0 * h);
      }
    }
    w.row(j) /= w.row(j).sum();
  }
  return w;
}

}  // namespace

FlowMap resample_flow(const FlowMap& flow, int width, int height) {
  FlowMap out(width, height);
  const Eigen::MatrixXd wy = box_weights(flow.height, height);
  const Eigen::MatrixXd wx = box_weights(flow.width, width);
  for (int c = 0; c < 2; ++c) {
    Eigen::MatrixXd src(flow.height, flow.width);
    for (int y = 0; y < flow.height; ++y) {
      for (int x = 0; x < flow.width; ++x) src(y, x) = c == 0 ? flow.u(x, y) : flow.v(x, y);
    }
    const Eigen::MatrixXd dst = wy * src * wx.transpose();
    for (int y = 0; y < height; ++y) {
      for (int x = 0; x < width; ++x) out.data[2 * (static_cast<std::size_t>(y) * width + x) + c] = static_cast<float>(dst(y, x));
    }
  }
  return out;
}

Coefficients rescale_theta(const Coefficients& theta, double sx, double sy) {
  if (theta.size() != 12) throw InvalidArgument("quadratic motion needs 12 coefficients");
  Coefficients out = theta;
  // Column layout: u uses 0, 2, 3, 6, 7, 8; v uses 1, 4, 5, 9, 10, 11.
  for (int k : {0, 2, 3, 6, 7, 8}) out[k] /= sx;
  for (int k : {1, 4, 5, 9, 10, 11}) out[k] /= sy;
  return out;
}

MotionFit fit_dominant_motion(const FlowMap& flow, const MotionFitConfig& config) {
  const ModelSpec spec = ModelSpec::quadratic_motion();
  const DomainGrid grid = flow_grid(flow.width, flow.height);
  const RangeField d = flow_to_field(flow);
  MotionFit fit;
  switch (config.method) {
    case FitMethod::Lse: fit.theta = fit_lse(spec, grid, d); break;
    case FitMethod::Ransac: fit.theta = fit_ransac(spec, grid, d, config.ransac).theta_hat; break;
    case FitMethod::Irwls: fit.theta = fit_irwls(spec, grid, d, config.irwls).theta_hat; break;
    case FitMethod::Network: {
      if (!config.network) throw InvalidArgument("network fitting needs a loaded model");
      const auto& model = *config.network;
      if (!(model.spec() == spec)) throw ConfigError("the network was not trained for quadratic motion");
      const int w = model.grid().width();
      const int h = model.grid().height();
      FlowMap small = flow.width == w && flow.height == h ? flow : resample_flow(flow, w, h);
      const double sx = static_cast<double>(w) / flow.width;
      const double sy = static_cast<double>(h) / flow.height;
      for (std::size_t i = 0; i < small.data.size(); i += 2) {
        small.data[i] = static_cast<float>(small.data[i] * sx);
        small.data[i + 1] = static_cast<float>(small.data[i + 1] * sy);
      }
      fit.theta = rescale_theta(model.predict(flow_to_field(small)), sx, sy);
      break;
    }
  }
  const RangeField p = decode(spec, fit.theta, grid);
  fit.parametric = field_to_flow(p, flow.width, flow.height);
  const std::size_t n = static_cast<std::size_t>(flow.width) * static_cast<std::size_t>(flow.height);
  fit.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto k = static_cast<Eigen::Index>(2 * i);
    fit.residual[i] = static_cast<float>(std::hypot(d[k] - p[k], d[k + 1] - p[k + 1]));
  }
  return fit;
}

Image warp_backward(const Image& image, const Coefficients& theta, BorderPolicy border) {
  if (theta.size() != 12) throw InvalidArgument("quadratic motion needs 12 coefficients");
  const ModelSpec spec = ModelSpec::quadratic_motion();
  const DomainGrid grid = flow_grid(image.width, image.height);
  const RangeField f = decode(spec, theta, grid);
  Image out(image.width, image.height, image.channels);
  const int w = image.width;
  const int h = image.height;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto k = 2 * (static_cast<Eigen::Index>(y) * w + x);
      double sx = x + f[k];
      double sy = y + f[k + 1];
      std::uint8_t* dst = &out.pixels[(static_cast<std::size_t>(y) * w + x) * image.channels];
      const bool outside = sx < 0.0 || sy < 0.0 || sx > w - 1 || sy > h - 1;
      if (outside && border == BorderPolicy::Black) {
        std::fill(dst, dst + image.channels, 0);
        continue;
      }
      sx = std::clamp(sx, 0.0, static_cast<double>(w - 1));
      sy = std::clamp(sy, 0.0, static_cast<double>(h - 1));
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const double ax = sx - x0;
      const double ay = sy - y0;
      for (int c = 0; c < image.channels; ++c) {
        const double top = (1 - ax) * image.at(x0, y0, c) + ax * image.at(x1, y0, c);
        const double bot = (1 - ax) * image.at(x0, y1, c) + ax * image.at(x1, y1, c);
        dst[c] = static_cast<std::uint8_t>(std::clamp(std::lround((1 - ay) * top + ay * bot), 0L, 255L));
      }
    }
  }
  return out;
}

StabilizationResult stabilize_sequence(const std::vector<Image>& frames, const std::vector<FlowMap>& flows,
                                       const StabilizationParams& params, const MotionFitConfig& fit) {
  if (params.smoothing_window < 1 || params.smoothing_window % 2 == 0) {
    throw InvalidArgument("smoothing window must be an odd integer >= 1");
  }
  if (frames.empty()) throw InvalidArgument("stabilization needs at least one frame");
  if (flows.size() + 1 != frames.size()) {
    throw InvalidArgument("need exactly one flow per consecutive frame pair (" + std::to_string(frames.size() - 1) +
                          "), got " + std::to_string(flows.size()));
  }
  StabilizationResult result;
  result.thetas.resize(flows.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  std::size_t error_index = flows.size();
  auto worker = [&] {
    for (std::size_t t = next++; t < flows.size(); t = next++) {
      try {
        result.thetas[t] = fit_dominant_motion(flows[t], fit).theta;
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (t < error_index) {
          error_index = t;
          error = std::current_exception();
        }
      }
    }
  };
  const int workers = std::max(1, std::min<int>(params.jobs, static_cast<int>(flows.size())));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int k = 0; k < workers; ++k) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (error) {
    try {
      std::rethrow_exception(error);
    } catch (const std::exception& e) {
      throw EstimationFailedError("motion fit failed for frame pair " + std::to_string(error_index) + ": " + e.what());
    }
  }

  // Camera trajectory relative to frame 0, composed additively in coefficient space.
  const std::size_t n = frames.size();
  std::vector<Coefficients> path(n, Coefficients::Zero(12));
  for (std::size_t t = 1; t < n; ++t) path[t] = path[t - 1] + result.thetas[t - 1];
  const int half = params.smoothing_window / 2;
  for (std::size_t t = 0; t < n; ++t) {
    Coefficients target = Coefficients::Zero(12);
    if (params.smoothing_window > 1) {
      const std::size_t lo = t >= static_cast<std::size_t>(half) ? t - half : 0;
      const std::size_t hi = std::min(n - 1, t + half);
      for (std::size_t k = lo; k <= hi; ++k) target += path[k];
      target /= static_cast<double>(hi - lo + 1);
    }
    const Coefficients correction = path[t] - target;
    result.corrections.push_back(correction);
    result.frames.push_back(correction.isZero(0.0) ? frames[t] : warp_backward(frames[t], correction, params.border));
  }
  return result;
}

void write_theta_timeline(const std::string& path, const std::vector<Coefficients>& thetas) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.precision(17);
  f << "frame_index";
  for (int k = 0; k < 12; ++k) f << ",c" << k;
  f << "\n";
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    f << t;
    for (Eigen::Index k = 0; k < thetas[t].size(); ++k) f << ',' << thetas[t][k];
    f << "\n";
  }
  if (!f) throw std::runtime_error("failed writing " + path);
}

}  // namespace polyreg::motion
