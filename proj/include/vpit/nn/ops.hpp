#ifndef VPIT_NN_OPS_HPP
#define VPIT_NN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpit/nn/tensor.hpp"

namespace vpit::nn {

inline std::size_t conv_out_dim(std::size_t in, std::size_t k, std::size_t stride) {
  if (in < k) return 0;
  return (in - k) / stride + 1;
}

namespace detail {

// out[o, y, x] += sum_{i,ky,kx} w[o, i, ky, kx] * in[i, y*s + ky, x*s + kx]
inline void correlate_accumulate(const Tensor& in, const Tensor& w, std::size_t stride, Tensor& out) {
  const std::size_t cin = in.dim(0), ih = in.dim(1), iw = in.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = out.dim(1), ow = out.dim(2);
  for (std::size_t o = 0; o < cout; ++o) {
    double* out_plane = out.data() + o * oh * ow;
    for (std::size_t i = 0; i < cin; ++i) {
      const double* in_plane = in.data() + i * ih * iw;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wv = w.at(o, i, ky, kx);
          if (wv == 0.0) continue;
          for (std::size_t y = 0; y < oh; ++y) {
            const double* src = in_plane + (y * stride + ky) * iw + kx;
            double* dst = out_plane + y * ow;
            if (stride == 1) {
              for (std::size_t x = 0; x < ow; ++x) dst[x] += wv * src[x];
            } else {
              for (std::size_t x = 0; x < ow; ++x) dst[x] += wv * src[x * stride];
            }
          }
        }
      }
    }
  }
}

// grad_in and grad_w of correlate_accumulate, accumulated into the outputs.
inline void correlate_backward(const Tensor& in, const Tensor& w, std::size_t stride, const Tensor& grad_out,
                               Tensor* grad_in, Tensor* grad_w) {
  const std::size_t cin = in.dim(0), ih = in.dim(1), iw = in.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = grad_out.dim(1), ow = grad_out.dim(2);
  for (std::size_t o = 0; o < cout; ++o) {
    const double* g_plane = grad_out.data() + o * oh * ow;
    for (std::size_t i = 0; i < cin; ++i) {
      const double* in_plane = in.data() + i * ih * iw;
      double* gin_plane = grad_in ? grad_in->data() + i * ih * iw : nullptr;
      for (std::size_t ky = 0; ky < kh; ++ky) {
        for (std::size_t kx = 0; kx < kw; ++kx) {
          const double wv = w.at(o, i, ky, kx);
          double acc = 0.0;
          for (std::size_t y = 0; y < oh; ++y) {
            const std::size_t row = (y * stride + ky) * iw + kx;
            const double* g = g_plane + y * ow;
            const double* src = in_plane + row;
            if (stride == 1) {
              for (std::size_t x = 0; x < ow; ++x) acc += g[x] * src[x];
              if (gin_plane && wv != 0.0) {
                double* dst = gin_plane + row;
                for (std::size_t x = 0; x < ow; ++x) dst[x] += wv * g[x];
              }
            } else {
              for (std::size_t x = 0; x < ow; ++x) acc += g[x] * src[x * stride];
              if (gin_plane && wv != 0.0) {
                double* dst = gin_plane + row;
                for (std::size_t x = 0; x < ow; ++x) dst[x * stride] += wv * g[x];
              }
            }
          }
          if (grad_w) grad_w->at(o, i, ky, kx) += acc;
        }
      }
    }
  }
}

}  // namespace detail

/// Valid-padding 2D cross-correlation of a C x H x W input with Cout x C x K x K
/// kernels plus per-output-channel bias.
inline Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, std::size_t stride = 1) {
  if (input.rank() != 3 || weight.rank() != 4) {
    throw ShapeError("conv2d expects a rank-3 input and rank-4 weight, got " + shape_str(input.shape()) + " and " +
                     shape_str(weight.shape()));
  }
  if (weight.dim(1) != input.dim(0)) {
    throw ShapeError("conv2d channel mismatch: input " + shape_str(input.shape()) + ", weight " +
                     shape_str(weight.shape()));
  }
  if (bias.size() != weight.dim(0)) throw ShapeError("conv2d bias size does not match output channels");
  if (stride == 0) throw ShapeError("conv2d stride must be >= 1");
  const std::size_t oh = conv_out_dim(input.dim(1), weight.dim(2), stride);
  const std::size_t ow = conv_out_dim(input.dim(2), weight.dim(3), stride);
  if (oh == 0 || ow == 0) {
    throw ShapeError("conv2d input " + shape_str(input.shape()) + " is smaller than kernel " +
                     shape_str(weight.shape()));
  }
  Tensor out({weight.dim(0), oh, ow});
  for (std::size_t o = 0; o < weight.dim(0); ++o) {
    std::fill(out.data() + o * oh * ow, out.data() + (o + 1) * oh * ow, bias[o]);
  }
  detail::correlate_accumulate(input, weight, stride, out);
  return out;
}

struct Conv2dGrads {
  Tensor input;
  Tensor weight;
  Tensor bias;
};

inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& weight, std::size_t stride,
                                   const Tensor& grad_out) {
  Conv2dGrads g{Tensor(input.shape()), Tensor(weight.shape()), Tensor({weight.dim(0)})};
  detail::correlate_backward(input, weight, stride, grad_out, &g.input, &g.weight);
  const std::size_t plane = grad_out.dim(1) * grad_out.dim(2);
  for (std::size_t o = 0; o < weight.dim(0); ++o) {
    double s = 0.0;
    for (std::size_t k = 0; k < plane; ++k) s += grad_out[o * plane + k];
    g.bias[o] = s;
  }
  return g;
}

inline Tensor relu(Tensor t) {
  for (double& v : t.values()) v = v > 0.0 ? v : 0.0;
  return t;
}

/// Gradient through ReLU given the pre-activation.
inline Tensor relu_backward(const Tensor& pre, Tensor grad) {
  pre.require_same_shape(grad, "relu_backward");
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(pre[i] > 0.0)) grad[i] = 0.0;
  }
  return grad;
}

/// Sliding dot product of a target feature map over a search feature map.
/// Result is 1 x (Hs - Ht + 1) x (Ws - Wt + 1).
inline Tensor cross_correlate(const Tensor& search, const Tensor& target) {
  if (search.rank() != 3 || target.rank() != 3) throw ShapeError("cross_correlate expects rank-3 feature maps");
  if (search.dim(0) != target.dim(0)) {
    throw ShapeError("cross_correlate channel mismatch: " + shape_str(search.shape()) + " vs " +
                     shape_str(target.shape()));
  }
  if (target.dim(1) > search.dim(1) || target.dim(2) > search.dim(2)) {
    throw ShapeError("cross_correlate target " + shape_str(target.shape()) + " larger than search " +
                     shape_str(search.shape()));
  }
  const Tensor kernel({1, target.dim(0), target.dim(1), target.dim(2)},
                      std::vector<double>(target.values().begin(), target.values().end()));
  Tensor out({1, search.dim(1) - target.dim(1) + 1, search.dim(2) - target.dim(2) + 1});
  detail::correlate_accumulate(search, kernel, 1, out);
  return out;
}

struct CorrelationGrads {
  Tensor search;
  Tensor target;
};

inline CorrelationGrads cross_correlate_backward(const Tensor& search, const Tensor& target, const Tensor& grad_out) {
  const Tensor kernel({1, target.dim(0), target.dim(1), target.dim(2)},
                      std::vector<double>(target.values().begin(), target.values().end()));
  Tensor gk(kernel.shape());
  CorrelationGrads g{Tensor(search.shape()), Tensor()};
  detail::correlate_backward(search, kernel, 1, grad_out, &g.search, &gk);
  g.target = Tensor(target.shape(), std::move(gk.storage()));
  return g;
}

// ---------------------------------------------------------------------------
// Bicubic resampling: Catmull-Rom kernel (a = -0.5), half-pixel centers,
// edge-clamped taps. Separable, so each axis is a dense out x in matrix.

inline double cubic_kernel(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

/// Weights for sampling a 1D signal of length `in` at continuous source coordinate `src`.
inline void cubic_taps(double src, std::size_t in, std::size_t idx[4], double wts[4]) {
  const double base = std::floor(src);
  for (int k = 0; k < 4; ++k) {
    const double pos = base - 1.0 + k;
    const double clamped = std::clamp(pos, 0.0, static_cast<double>(in - 1));
    idx[k] = static_cast<std::size_t>(clamped);
    wts[k] = cubic_kernel(src - pos);
  }
}

inline std::vector<double> resize_matrix(std::size_t in, std::size_t out) {
  std::vector<double> m(out * in, 0.0);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    const double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    std::size_t idx[4];
    double wts[4];
    cubic_taps(src, in, idx, wts);
    for (int k = 0; k < 4; ++k) m[o * in + idx[k]] += wts[k];
  }
  return m;
}

inline Tensor bicubic_resize(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  if (map.rank() != 3) throw ShapeError("bicubic_resize expects a C x H x W map");
  if (out_h == 0 || out_w == 0) throw ShapeError("bicubic_resize output dims must be positive");
  const std::size_t c = map.dim(0), ih = map.dim(1), iw = map.dim(2);
  if (ih < 2 || iw < 2) throw ShapeError("bicubic_resize input must be at least 2x2, got " + shape_str(map.shape()));
  const auto ry = resize_matrix(ih, out_h);
  const auto rx = resize_matrix(iw, out_w);
  Tensor out({c, out_h, out_w});
  std::vector<double> tmp(ih * out_w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = map.data() + ch * ih * iw;
    // Rows first: tmp = src * rx^T.
    for (std::size_t y = 0; y < ih; ++y) {
      for (std::size_t ox = 0; ox < out_w; ++ox) {
        double acc = 0.0;
        const double* wrow = rx.data() + ox * iw;
        for (std::size_t x = 0; x < iw; ++x) acc += wrow[x] * src[y * iw + x];
        tmp[y * out_w + ox] = acc;
      }
    }
    double* dst = out.data() + ch * out_h * out_w;
    for (std::size_t oy = 0; oy < out_h; ++oy) {
      const double* wcol = ry.data() + oy * ih;
      for (std::size_t ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] = 0.0;
      for (std::size_t y = 0; y < ih; ++y) {
        const double wv = wcol[y];
        if (wv == 0.0) continue;
        for (std::size_t ox = 0; ox < out_w; ++ox) dst[oy * out_w + ox] += wv * tmp[y * out_w + ox];
      }
    }
  }
  return out;
}

/// Transpose of bicubic_resize applied to an output gradient.
inline Tensor bicubic_resize_backward(const Tensor& grad_out, std::size_t in_h, std::size_t in_w) {
  const std::size_t c = grad_out.dim(0), oh = grad_out.dim(1), ow = grad_out.dim(2);
  const auto ry = resize_matrix(in_h, oh);
  const auto rx = resize_matrix(in_w, ow);
  Tensor grad({c, in_h, in_w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* g = grad_out.data() + ch * oh * ow;
    double* dst = grad.data() + ch * in_h * in_w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        const double gv = g[oy * ow + ox];
        if (gv == 0.0) continue;
        for (std::size_t y = 0; y < in_h; ++y) {
          const double wy = ry[oy * in_h + y];
          if (wy == 0.0) continue;
          for (std::size_t x = 0; x < in_w; ++x) dst[y * in_w + x] += gv * wy * rx[ox * in_w + x];
        }
      }
    }
  }
  return grad;
}

/// Evaluates the bicubic interpolant of one channel at continuous source
/// coordinates, where integer coordinates are source pixel centers.
inline double bicubic_sample(const Tensor& map, std::size_t channel, double sy, double sx) {
  std::size_t iy[4], ix[4];
  double wy[4], wx[4];
  cubic_taps(sy, map.dim(1), iy, wy);
  cubic_taps(sx, map.dim(2), ix, wx);
  double acc = 0.0;
  for (int a = 0; a < 4; ++a) {
    for (int b = 0; b < 4; ++b) acc += wy[a] * wx[b] * map.at(channel, iy[a], ix[b]);
  }
  return acc;
}

// ---------------------------------------------------------------------------

inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// log(1 + e^x) without overflow.
inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

struct BceResult {
  double loss = 0.0;
  Tensor grad;
};

/// Mean of w_n * -(y log S(x) + (1 - y) log(1 - S(x))) and its gradient w.r.t. x.
inline BceResult weighted_bce(const Tensor& logits, const Tensor& labels, const Tensor& weights) {
  logits.require_same_shape(labels, "weighted_bce labels");
  logits.require_same_shape(weights, "weighted_bce weights");
  require_finite(logits, "weighted_bce prediction");
  const double n = static_cast<double>(logits.size());
  BceResult r{0.0, Tensor(logits.shape())};
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double x = logits[i], y = labels[i], w = weights[i];
    r.loss += w * (y * softplus(-x) + (1.0 - y) * softplus(x));
    r.grad[i] = w * (sigmoid(x) - y) / n;
  }
  r.loss /= n;
  return r;
}

}  // namespace vpit::nn

#endif  // VPIT_NN_OPS_HPP
