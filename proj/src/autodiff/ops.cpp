#include "polyreg/autodiff/ops.hpp"

#include "polyreg/errors.hpp"
#include "polyreg/poly/model.hpp"
#include "polyreg/stats.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numeric>

namespace polyreg::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRow = Eigen::Map<RowMat>;
using ConstMapRow = Eigen::Map<const RowMat>;

void require(bool ok, const std::string& what) {
  if (!ok) throw InvalidArgument(what);
}

/// Feature maps are [B, C, L] or [B, C, H, W]; 1D maps are treated as H = 1.
struct MapGeometry {
  int batch = 0;
  int channels = 0;
  int height = 1;
  int width = 0;
  int spatial_dims = 1;
  int positions() const { return height * width; }
};

MapGeometry feature_geometry(const Tensor& x, const char* op) {
  require(x.rank() == 3 || x.rank() == 4,
          std::string(op) + " expects a [B, C, L] or [B, C, H, W] tensor, got " + shape_string(x.shape()));
  MapGeometry g;
  g.batch = x.dim(0);
  g.channels = x.dim(1);
  if (x.rank() == 3) {
    g.width = x.dim(2);
  } else {
    g.spatial_dims = 2;
    g.height = x.dim(2);
    g.width = x.dim(3);
  }
  return g;
}

Shape map_shape(const MapGeometry& g, int channels, int height, int width) {
  if (g.spatial_dims == 1) return {g.batch, channels, width};
  return {g.batch, channels, height, width};
}

// ---------------------------------------------------------------------------
// Convolution through im2col + GEMM, processed in sample chunks to bound the
// column buffer.

struct ConvPlan {
  MapGeometry in;
  int out_channels = 0;
  int kh = 1;
  int kw = 1;
  int rows() const { return in.channels * kh * kw; }
  int chunk() const {
    const long per_sample = static_cast<long>(rows()) * in.positions();
    return static_cast<int>(std::clamp<long>((1L << 21) / std::max(1L, per_sample), 1L, in.batch));
  }
};

void im2col(const ConvPlan& p, const double* x, int b0, int nb, double* cols) {
  const int h = p.in.height;
  const int w = p.in.width;
  const int positions = p.in.positions();
  const long stride = static_cast<long>(nb) * positions;
  const int ph = p.kh / 2;
  const int pw = p.kw / 2;
  for (int ci = 0; ci < p.in.channels; ++ci) {
    for (int ky = 0; ky < p.kh; ++ky) {
      for (int kx = 0; kx < p.kw; ++kx) {
        double* row = cols + static_cast<long>((ci * p.kh + ky) * p.kw + kx) * stride;
        for (int bb = 0; bb < nb; ++bb) {
          const double* src = x + (static_cast<long>(b0 + bb) * p.in.channels + ci) * positions;
          double* dst = row + static_cast<long>(bb) * positions;
          for (int y = 0; y < h; ++y) {
            const int ys = y + ky - ph;
            double* drow = dst + static_cast<long>(y) * w;
            if (ys < 0 || ys >= h) {
              std::fill(drow, drow + w, 0.0);
              continue;
            }
            const double* srow = src + static_cast<long>(ys) * w;
            for (int xo = 0; xo < w; ++xo) {
              const int xs = xo + kx - pw;
              drow[xo] = (xs >= 0 && xs < w) ? srow[xs] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im_add(const ConvPlan& p, const double* cols, int b0, int nb, double* dx) {
  const int h = p.in.height;
  const int w = p.in.width;
  const int positions = p.in.positions();
  const long stride = static_cast<long>(nb) * positions;
  const int ph = p.kh / 2;
  const int pw = p.kw / 2;
  for (int ci = 0; ci < p.in.channels; ++ci) {
    for (int ky = 0; ky < p.kh; ++ky) {
      for (int kx = 0; kx < p.kw; ++kx) {
        const double* row = cols + static_cast<long>((ci * p.kh + ky) * p.kw + kx) * stride;
        for (int bb = 0; bb < nb; ++bb) {
          double* dst = dx + (static_cast<long>(b0 + bb) * p.in.channels + ci) * positions;
          const double* src = row + static_cast<long>(bb) * positions;
          for (int y = 0; y < h; ++y) {
            const int ys = y + ky - ph;
            if (ys < 0 || ys >= h) continue;
            const double* srow = src + static_cast<long>(y) * w;
            double* drow = dst + static_cast<long>(ys) * w;
            for (int xo = 0; xo < w; ++xo) {
              const int xs = xo + kx - pw;
              if (xs >= 0 && xs < w) drow[xs] += srow[xo];
            }
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const MapGeometry g = feature_geometry(input, "conv");
  require(weight.rank() == g.spatial_dims + 2, "conv weight rank " + shape_string(weight.shape()) +
                                                   " does not match input " + shape_string(input.shape()));
  require(weight.dim(1) == g.channels, "conv weight expects " + std::to_string(weight.dim(1)) +
                                           " input channels, got " + std::to_string(g.channels));
  const int k = weight.dim(2);
  require(k % 2 == 1, "conv kernels must have odd size");
  if (g.spatial_dims == 2) require(weight.dim(3) == k, "2D conv kernels must be square");
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "conv bias must have one entry per output channel");

  ConvPlan plan;
  plan.in = g;
  plan.out_channels = weight.dim(0);
  plan.kw = k;
  plan.kh = g.spatial_dims == 2 ? k : 1;
  const int positions = g.positions();
  const int cout = plan.out_channels;

  std::vector<double> out(static_cast<std::size_t>(g.batch) * cout * positions);
  const ConstMapRow wmat(weight.values().data(), cout, plan.rows());
  const double* x = input.values().data();
  const double* bvals = bias.values().data();
  const int chunk = plan.chunk();
  std::vector<double> cols;
  RowMat prod;
  for (int b0 = 0; b0 < g.batch; b0 += chunk) {
    const int nb = std::min(chunk, g.batch - b0);
    cols.resize(static_cast<std::size_t>(plan.rows()) * nb * positions);
    im2col(plan, x, b0, nb, cols.data());
    prod.noalias() = wmat * ConstMapRow(cols.data(), plan.rows(), static_cast<long>(nb) * positions);
    for (int bb = 0; bb < nb; ++bb) {
      for (int co = 0; co < cout; ++co) {
        const double* src = prod.data() + static_cast<long>(co) * nb * positions + static_cast<long>(bb) * positions;
        double* dst = out.data() + (static_cast<long>(b0 + bb) * cout + co) * positions;
        const double bv = bvals[co];
        for (int p = 0; p < positions; ++p) dst[p] = src[p] + bv;
      }
    }
  }

  return make_result(map_shape(g, cout, g.height, g.width), std::move(out), {input.ptr(), weight.ptr(), bias.ptr()},
                     [plan](Node& self) {
                       Node& in = *self.parents[0];
                       Node& wt = *self.parents[1];
                       Node& bs = *self.parents[2];
                       const int pos = plan.in.positions();
                       const int co_n = plan.out_channels;
                       const int chunk = plan.chunk();
                       const ConstMapRow wm(wt.value.data(), co_n, plan.rows());
                       std::vector<double> cols;
                       std::vector<double> gbuf;
                       RowMat dcols;
                       for (int b0 = 0; b0 < plan.in.batch; b0 += chunk) {
                         const int nb = std::min(chunk, plan.in.batch - b0);
                         const long ncols = static_cast<long>(nb) * pos;
                         gbuf.resize(static_cast<std::size_t>(co_n) * ncols);
                         for (int bb = 0; bb < nb; ++bb) {
                           for (int co = 0; co < co_n; ++co) {
                             const double* src = self.grad.data() + (static_cast<long>(b0 + bb) * co_n + co) * pos;
                             std::copy(src, src + pos, gbuf.data() + co * ncols + static_cast<long>(bb) * pos);
                           }
                         }
                         const ConstMapRow gm(gbuf.data(), co_n, ncols);
                         if (bs.requires_grad) {
                           auto& db = bs.grad_buffer();
                           for (int co = 0; co < co_n; ++co) {
                             const double* row = gbuf.data() + static_cast<long>(co) * ncols;
                             db[static_cast<std::size_t>(co)] += std::accumulate(row, row + ncols, 0.0);
                           }
                         }
                         if (wt.requires_grad || in.requires_grad) {
                           cols.resize(static_cast<std::size_t>(plan.rows()) * ncols);
                           im2col(plan, in.value.data(), b0, nb, cols.data());
                         }
                         if (wt.requires_grad) {
                           MapRow dw(wt.grad_buffer().data(), co_n, plan.rows());
                           dw.noalias() += gm * ConstMapRow(cols.data(), plan.rows(), ncols).transpose();
                         }
                         if (in.requires_grad) {
                           dcols.noalias() = wm.transpose() * gm;
                           col2im_add(plan, dcols.data(), b0, nb, in.grad_buffer().data());
                         }
                       }
                     });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  return make_result(x.shape(), std::move(out), {x.ptr()}, [](Node& self) {
    Node& in = *self.parents[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in.value[i] > 0.0) g[i] += self.grad[i];
    }
  });
}

Tensor maxpool(const Tensor& x) {
  const MapGeometry g = feature_geometry(x, "maxpool");
  require(g.width % 2 == 0 && (g.spatial_dims == 1 || g.height % 2 == 0),
          "maxpool needs even spatial extents, got " + shape_string(x.shape()));
  const int oh = g.spatial_dims == 2 ? g.height / 2 : 1;
  const int ow = g.width / 2;
  const int wh = g.spatial_dims == 2 ? 2 : 1;
  const long in_pos = g.positions();
  const long out_pos = static_cast<long>(oh) * ow;
  const long planes = static_cast<long>(g.batch) * g.channels;
  std::vector<double> out(static_cast<std::size_t>(planes * out_pos));
  std::vector<std::size_t> argmax(out.size());
  const double* v = x.values().data();
  for (long plane = 0; plane < planes; ++plane) {
    for (int y = 0; y < oh; ++y) {
      for (int xo = 0; xo < ow; ++xo) {
        std::size_t best = 0;
        double best_v = 0.0;
        bool first = true;
        for (int dy = 0; dy < wh; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const auto idx = static_cast<std::size_t>(plane * in_pos + static_cast<long>(y * wh + dy) * g.width + xo * 2 + dx);
            if (first || v[idx] > best_v) {
              best = idx;
              best_v = v[idx];
              first = false;
            }
          }
        }
        const auto o = static_cast<std::size_t>(plane * out_pos + static_cast<long>(y) * ow + xo);
        out[o] = best_v;
        argmax[o] = best;
      }
    }
  }
  return make_result(map_shape(g, g.channels, oh, ow), std::move(out), {x.ptr()},
                     [argmax = std::move(argmax)](Node& self) {
                       auto& gin = self.parents[0]->grad_buffer();
                       for (std::size_t o = 0; o < argmax.size(); ++o) gin[argmax[o]] += self.grad[o];
                     });
}

Tensor batchnorm(const Tensor& x, const Tensor& gain, const Tensor& shift, BatchNormState& state, bool training) {
  const MapGeometry g = feature_geometry(x, "batchnorm");
  const int c = g.channels;
  require(gain.numel() == static_cast<std::size_t>(c) && shift.numel() == static_cast<std::size_t>(c),
          "batchnorm gain/shift must have one entry per channel");
  require(state.running_mean.size() == static_cast<std::size_t>(c), "batchnorm state has wrong channel count");
  const long pos = g.positions();
  const long count = static_cast<long>(g.batch) * pos;
  const double* v = x.values().data();

  std::vector<double> mean(static_cast<std::size_t>(c));
  std::vector<double> inv_std(static_cast<std::size_t>(c));
  if (training) {
    require(count > 1, "batchnorm training mode needs more than one value per channel");
    for (int ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (int b = 0; b < g.batch; ++b) {
        const double* p = v + (static_cast<long>(b) * c + ch) * pos;
        for (long i = 0; i < pos; ++i) sum += p[i];
      }
      const double m = sum / static_cast<double>(count);
      double sq = 0.0;
      for (int b = 0; b < g.batch; ++b) {
        const double* p = v + (static_cast<long>(b) * c + ch) * pos;
        for (long i = 0; i < pos; ++i) sq += (p[i] - m) * (p[i] - m);
      }
      const double var = sq / static_cast<double>(count);
      const auto k = static_cast<std::size_t>(ch);
      mean[k] = m;
      inv_std[k] = 1.0 / std::sqrt(var + state.epsilon);
      const double unbiased = sq / static_cast<double>(count - 1);
      state.running_mean[k] = state.momentum * state.running_mean[k] + (1.0 - state.momentum) * m;
      state.running_var[k] = state.momentum * state.running_var[k] + (1.0 - state.momentum) * unbiased;
    }
  } else {
    for (int ch = 0; ch < c; ++ch) {
      const auto k = static_cast<std::size_t>(ch);
      mean[k] = state.running_mean[k];
      inv_std[k] = 1.0 / std::sqrt(state.running_var[k] + state.epsilon);
    }
  }

  std::vector<double> xhat(x.numel());
  std::vector<double> out(x.numel());
  const double* gv = gain.values().data();
  const double* sv = shift.values().data();
  for (int b = 0; b < g.batch; ++b) {
    for (int ch = 0; ch < c; ++ch) {
      const long base = (static_cast<long>(b) * c + ch) * pos;
      const auto k = static_cast<std::size_t>(ch);
      for (long i = 0; i < pos; ++i) {
        const double h = (v[base + i] - mean[k]) * inv_std[k];
        xhat[static_cast<std::size_t>(base + i)] = h;
        out[static_cast<std::size_t>(base + i)] = gv[ch] * h + sv[ch];
      }
    }
  }

  return make_result(
      x.shape(), std::move(out), {x.ptr(), gain.ptr(), shift.ptr()},
      [g, training, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
        Node& in = *self.parents[0];
        Node& gn = *self.parents[1];
        Node& sh = *self.parents[2];
        const int c = g.channels;
        const long pos = g.positions();
        const double count = static_cast<double>(g.batch) * static_cast<double>(pos);
        for (int ch = 0; ch < c; ++ch) {
          double sum_g = 0.0;
          double sum_gx = 0.0;
          for (int b = 0; b < g.batch; ++b) {
            const long base = (static_cast<long>(b) * c + ch) * pos;
            for (long i = 0; i < pos; ++i) {
              const auto idx = static_cast<std::size_t>(base + i);
              sum_g += self.grad[idx];
              sum_gx += self.grad[idx] * xhat[idx];
            }
          }
          if (gn.requires_grad) gn.grad_buffer()[static_cast<std::size_t>(ch)] += sum_gx;
          if (sh.requires_grad) sh.grad_buffer()[static_cast<std::size_t>(ch)] += sum_g;
          if (!in.requires_grad) continue;
          auto& dx = in.grad_buffer();
          const double gamma = gn.value[static_cast<std::size_t>(ch)];
          const double is = inv_std[static_cast<std::size_t>(ch)];
          const double mean_g = sum_g / count;
          const double mean_gx = sum_gx / count;
          for (int b = 0; b < g.batch; ++b) {
            const long base = (static_cast<long>(b) * c + ch) * pos;
            for (long i = 0; i < pos; ++i) {
              const auto idx = static_cast<std::size_t>(base + i);
              if (training) {
                dx[idx] += gamma * is * (self.grad[idx] - mean_g - xhat[idx] * mean_gx);
              } else {
                dx[idx] += gamma * is * self.grad[idx];
              }
            }
          }
        }
      });
}

namespace {

struct LerpTap {
  int i0;
  int i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<LerpTap> upsample_taps(int n) {
  std::vector<LerpTap> taps(static_cast<std::size_t>(2 * n));
  for (int j = 0; j < 2 * n; ++j) {
    double src = (static_cast<double>(j) + 0.5) * 0.5 - 0.5;
    if (src < 0.0) src = 0.0;
    const int i0 = std::min(static_cast<int>(std::floor(src)), n - 1);
    const int i1 = std::min(i0 + 1, n - 1);
    taps[static_cast<std::size_t>(j)] = {i0, i1, src - i0};
  }
  return taps;
}

}  // namespace

Tensor upsample2x(const Tensor& x) {
  const MapGeometry g = feature_geometry(x, "upsample2x");
  const int oh = g.spatial_dims == 2 ? 2 * g.height : 1;
  const int ow = 2 * g.width;
  const auto tx = upsample_taps(g.width);
  const auto ty = g.spatial_dims == 2 ? upsample_taps(g.height) : std::vector<LerpTap>{{0, 0, 0.0}};
  const long in_pos = g.positions();
  const long out_pos = static_cast<long>(oh) * ow;
  const long planes = static_cast<long>(g.batch) * g.channels;
  std::vector<double> out(static_cast<std::size_t>(planes * out_pos));
  const double* v = x.values().data();
  for (long plane = 0; plane < planes; ++plane) {
    const double* src = v + plane * in_pos;
    double* dst = out.data() + plane * out_pos;
    for (int y = 0; y < oh; ++y) {
      const LerpTap& a = ty[static_cast<std::size_t>(y)];
      const double* r0 = src + static_cast<long>(a.i0) * g.width;
      const double* r1 = src + static_cast<long>(a.i1) * g.width;
      for (int xo = 0; xo < ow; ++xo) {
        const LerpTap& b = tx[static_cast<std::size_t>(xo)];
        const double top = (1.0 - b.w1) * r0[b.i0] + b.w1 * r0[b.i1];
        const double bot = (1.0 - b.w1) * r1[b.i0] + b.w1 * r1[b.i1];
        dst[static_cast<long>(y) * ow + xo] = (1.0 - a.w1) * top + a.w1 * bot;
      }
    }
  }
  return make_result(map_shape(g, g.channels, oh, ow), std::move(out), {x.ptr()},
                     [g, oh, ow, tx, ty](Node& self) {
                       auto& gin = self.parents[0]->grad_buffer();
                       const long in_pos = g.positions();
                       const long out_pos = static_cast<long>(oh) * ow;
                       const long planes = static_cast<long>(g.batch) * g.channels;
                       for (long plane = 0; plane < planes; ++plane) {
                         double* dsrc = gin.data() + plane * in_pos;
                         const double* gout = self.grad.data() + plane * out_pos;
                         for (int y = 0; y < oh; ++y) {
                           const LerpTap& a = ty[static_cast<std::size_t>(y)];
                           double* r0 = dsrc + static_cast<long>(a.i0) * g.width;
                           double* r1 = dsrc + static_cast<long>(a.i1) * g.width;
                           for (int xo = 0; xo < ow; ++xo) {
                             const LerpTap& b = tx[static_cast<std::size_t>(xo)];
                             const double go = gout[static_cast<long>(y) * ow + xo];
                             const double top = (1.0 - a.w1) * go;
                             const double bot = a.w1 * go;
                             r0[b.i0] += (1.0 - b.w1) * top;
                             r0[b.i1] += b.w1 * top;
                             r1[b.i0] += (1.0 - b.w1) * bot;
                             r1[b.i1] += b.w1 * bot;
                           }
                         }
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require(x.rank() == 2, "linear expects [B, F] input, got " + shape_string(x.shape()));
  require(weight.rank() == 2 && weight.dim(1) == x.dim(1),
          "linear weight " + shape_string(weight.shape()) + " does not match input " + shape_string(x.shape()));
  require(bias.rank() == 1 && bias.dim(0) == weight.dim(0), "linear bias must have one entry per output");
  const int batch = x.dim(0);
  const int in_f = x.dim(1);
  const int out_f = weight.dim(0);
  std::vector<double> out(static_cast<std::size_t>(batch) * out_f);
  MapRow y(out.data(), batch, out_f);
  y.noalias() = ConstMapRow(x.values().data(), batch, in_f) * ConstMapRow(weight.values().data(), out_f, in_f).transpose();
  const Eigen::Map<const Eigen::RowVectorXd> b(bias.values().data(), out_f);
  y.rowwise() += b;
  return make_result({batch, out_f}, std::move(out), {x.ptr(), weight.ptr(), bias.ptr()},
                     [batch, in_f, out_f](Node& self) {
                       Node& in = *self.parents[0];
                       Node& wt = *self.parents[1];
                       Node& bs = *self.parents[2];
                       const ConstMapRow gy(self.grad.data(), batch, out_f);
                       if (in.requires_grad) {
                         MapRow(in.grad_buffer().data(), batch, in_f).noalias() +=
                             gy * ConstMapRow(wt.value.data(), out_f, in_f);
                       }
                       if (wt.requires_grad) {
                         MapRow(wt.grad_buffer().data(), out_f, in_f).noalias() +=
                             gy.transpose() * ConstMapRow(in.value.data(), batch, in_f);
                       }
                       if (bs.requires_grad) {
                         auto& db = bs.grad_buffer();
                         for (int b = 0; b < batch; ++b) {
                           for (int o = 0; o < out_f; ++o) db[static_cast<std::size_t>(o)] += self.grad[static_cast<std::size_t>(b) * out_f + o];
                         }
                       }
                     });
}

Tensor concat(const std::vector<Tensor>& xs) {
  require(!xs.empty(), "concat needs at least one tensor");
  const Tensor& first = xs.front();
  require(first.rank() >= 2, "concat works on [B, C, ...] tensors");
  const int batch = first.dim(0);
  long inner = 1;
  for (int a = 2; a < first.rank(); ++a) inner *= first.dim(a);
  int channels = 0;
  std::vector<int> offsets;
  std::vector<NodePtr> parents;
  for (const Tensor& t : xs) {
    require(t.rank() == first.rank() && t.dim(0) == batch, "concat inputs must share batch and rank");
    for (int a = 2; a < first.rank(); ++a) require(t.dim(a) == first.dim(a), "concat inputs must share spatial extents");
    offsets.push_back(channels);
    channels += t.dim(1);
    parents.push_back(t.ptr());
  }
  Shape shape = first.shape();
  shape[1] = channels;
  std::vector<double> out(element_count(shape));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    const int ck = xs[k].dim(1);
    const double* src = xs[k].values().data();
    for (int b = 0; b < batch; ++b) {
      std::copy(src + static_cast<long>(b) * ck * inner, src + static_cast<long>(b + 1) * ck * inner,
                out.data() + (static_cast<long>(b) * channels + offsets[k]) * inner);
    }
  }
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [batch, channels, inner, offsets](Node& self) {
                       for (std::size_t k = 0; k < self.parents.size(); ++k) {
                         Node& p = *self.parents[k];
                         if (!p.requires_grad) continue;
                         const int ck = p.shape[1];
                         auto& gp = p.grad_buffer();
                         for (int b = 0; b < batch; ++b) {
                           const double* src = self.grad.data() + (static_cast<long>(b) * channels + offsets[k]) * inner;
                           double* dst = gp.data() + static_cast<long>(b) * ck * inner;
                           for (long i = 0; i < ck * inner; ++i) dst[i] += src[i];
                         }
                       }
                     });
}

Tensor add(const Tensor& x, const Tensor& y) {
  require(x.shape() == y.shape(), "add needs equal shapes, got " + shape_string(x.shape()) + " and " +
                                      shape_string(y.shape()));
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] + y.values()[i];
  return make_result(x.shape(), std::move(out), {x.ptr(), y.ptr()}, [](Node& self) {
    for (const auto& p : self.parents) {
      if (p->requires_grad) p->accumulate(self.grad);
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.values().begin(), x.values().end());
  for (double& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x.ptr()}, [factor](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  require(element_count(shape) == x.numel(),
          "cannot reshape " + shape_string(x.shape()) + " into " + shape_string(shape));
  std::vector<double> out(x.values().begin(), x.values().end());
  return make_result(std::move(shape), std::move(out), {x.ptr()},
                     [](Node& self) { self.parents[0]->accumulate(self.grad); });
}

Tensor spatial_mean(const Tensor& x) {
  require(x.rank() >= 3, "spatial_mean expects a feature map, got " + shape_string(x.shape()));
  const int batch = x.dim(0);
  const int channels = x.dim(1);
  const long pos = static_cast<long>(x.numel()) / (static_cast<long>(batch) * channels);
  std::vector<double> out(static_cast<std::size_t>(batch) * channels);
  for (std::size_t k = 0; k < out.size(); ++k) {
    double s = 0.0;
    for (long i = 0; i < pos; ++i) s += x.values()[k * static_cast<std::size_t>(pos) + static_cast<std::size_t>(i)];
    out[k] = s / static_cast<double>(pos);
  }
  return make_result({batch, channels}, std::move(out), {x.ptr()}, [pos](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t k = 0; k < self.grad.size(); ++k) {
      const double share = self.grad[k] / static_cast<double>(pos);
      for (long i = 0; i < pos; ++i) g[k * static_cast<std::size_t>(pos) + static_cast<std::size_t>(i)] += share;
    }
  });
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  require(pred.numel() == target.numel() && pred.numel() > 0,
          "mse_loss needs equally sized inputs, got " + shape_string(pred.shape()) + " and " +
              shape_string(target.shape()));
  const auto n = static_cast<double>(pred.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.numel(); ++i) {
    const double d = pred.values()[i] - target.values()[i];
    sum += d * d;
  }
  return make_result({}, {sum / n}, {pred.ptr(), target.ptr()}, [n](Node& self) {
    Node& p = *self.parents[0];
    Node& t = *self.parents[1];
    const double k = 2.0 * self.grad[0] / n;
    if (p.requires_grad) {
      auto& g = p.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += k * (p.value[i] - t.value[i]);
    }
    if (t.requires_grad) {
      auto& g = t.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= k * (p.value[i] - t.value[i]);
    }
  });
}

Tensor tukey_loss(const Tensor& pred, const Tensor& target, double c, double fixed_scale) {
  require(pred.numel() == target.numel() && pred.numel() > 0, "tukey_loss needs equally sized inputs");
  require(c > 0.0, "tukey_loss tuning constant must be positive");
  const std::size_t n = pred.numel();
  std::vector<double> residual(n);
  for (std::size_t i = 0; i < n; ++i) residual[i] = pred.values()[i] - target.values()[i];
  const double scale =
      fixed_scale > 0.0 ? fixed_scale : std::max(1.4826 * median_absolute_deviation(residual), 1e-12);
  const double saturation = c * c / 6.0;
  double sum = 0.0;
  for (double r : residual) {
    const double u = r / scale;
    if (std::abs(u) >= c) {
      sum += saturation;
    } else {
      const double t = 1.0 - (u / c) * (u / c);
      sum += saturation * (1.0 - t * t * t);
    }
  }
  return make_result({}, {sum / static_cast<double>(n)}, {pred.ptr(), target.ptr()},
                     [residual = std::move(residual), scale, c](Node& self) {
                       const double k = self.grad[0] / static_cast<double>(residual.size());
                       std::vector<double> dr(residual.size(), 0.0);
                       for (std::size_t i = 0; i < residual.size(); ++i) {
                         const double u = residual[i] / scale;
                         if (std::abs(u) >= c) continue;
                         const double t = 1.0 - (u / c) * (u / c);
                         dr[i] = k * u * t * t / scale;
                       }
                       Node& p = *self.parents[0];
                       Node& t = *self.parents[1];
                       if (p.requires_grad) p.accumulate(dr);
                       if (t.requires_grad) {
                         auto& g = t.grad_buffer();
                         for (std::size_t i = 0; i < g.size(); ++i) g[i] -= dr[i];
                       }
                     });
}

Tensor fixed_decode(const Tensor& theta, const FixedDecoder& decoder) {
  require(theta.rank() == 2 && theta.dim(1) == decoder.code_length(),
          "fixed_decode expects [B, " + std::to_string(decoder.code_length()) + "] coefficients, got " +
              shape_string(theta.shape()));
  const int batch = theta.dim(0);
  const int m = decoder.code_length();
  const int len = decoder.field_length();
  const Eigen::Map<const Eigen::MatrixXd> codes(theta.values().data(), m, batch);  // column b = row b of [B, M]
  const Eigen::MatrixXd fields = decoder.decode_batch(codes);                      // len x B, column-major
  std::vector<double> out(fields.data(), fields.data() + fields.size());
  // Column-major len x B is exactly the row-major [B, len] layout.
  return make_result({batch, len}, std::move(out), {theta.ptr()}, [&decoder, batch, m, len](Node& self) {
    const Eigen::Map<const Eigen::MatrixXd> upstream(self.grad.data(), len, batch);
    const Eigen::MatrixXd g = decoder.adjoint_batch(upstream);  // m x B
    Eigen::Map<Eigen::MatrixXd>(self.parents[0]->grad_buffer().data(), m, batch) += g;
  });
}

}  // namespace polyreg::ad
