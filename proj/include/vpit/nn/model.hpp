#ifndef VPIT_NN_MODEL_HPP
#define VPIT_NN_MODEL_HPP

#include <cmath>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "vpit/nn/ops.hpp"
#include "vpit/nn/tensor.hpp"
#include "vpit/pillars.hpp"

namespace vpit::nn {

struct FgnConfig {
  std::size_t blocks = 1;
  std::size_t layers_per_block = 4;
  std::size_t channels = 64;
  std::size_t first_stride = 1;
  std::size_t kernel = 3;

  void validate() const {
    if (blocks < 1 || layers_per_block < 1 || channels < 1 || first_stride < 1 || kernel < 1) {
      throw std::invalid_argument("FGN block/layer/channel/stride counts must be >= 1");
    }
  }
};

struct ConvLayer {
  Tensor weight;  // Cout x Cin x K x K
  Tensor bias;    // Cout
  std::size_t stride = 1;
};

struct FgnParams {
  std::vector<ConvLayer> layers;

  std::size_t total_stride() const {
    std::size_t s = 1;
    for (const auto& l : layers) s *= l.stride;
    return s;
  }

  /// Smallest square input that yields a 1 x 1 output.
  std::size_t min_input() const {
    std::size_t need = 1;
    for (auto it = layers.rbegin(); it != layers.rend(); ++it) need = (need - 1) * it->stride + it->weight.dim(2);
    return need;
  }

  std::size_t output_dim(std::size_t in) const {
    for (const auto& l : layers) in = conv_out_dim(in, l.weight.dim(2), l.stride);
    return in;
  }

  /// He-initialized layers. Block 0 opens with `first_stride`, later blocks
  /// open with stride 2.
  template <class Rng>
  static FgnParams random(const FgnConfig& cfg, std::size_t in_channels, Rng& rng) {
    cfg.validate();
    FgnParams p;
    std::size_t cin = in_channels;
    for (std::size_t b = 0; b < cfg.blocks; ++b) {
      for (std::size_t l = 0; l < cfg.layers_per_block; ++l) {
        const std::size_t stride = l == 0 ? (b == 0 ? cfg.first_stride : 2) : 1;
        ConvLayer layer{Tensor({cfg.channels, cin, cfg.kernel, cfg.kernel}), Tensor({cfg.channels}), stride};
        std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(cin * cfg.kernel * cfg.kernel)));
        for (double& v : layer.weight.values()) v = normal(rng);
        p.layers.push_back(std::move(layer));
        cin = cfg.channels;
      }
    }
    return p;
  }
};

/// Affine calibration of the raw correlation:
/// score = scale * corr / (C * Ht * Wt) + bias.
struct HeadParams {
  Tensor scale{Shape{1}, 1.0};
  Tensor bias{Shape{1}, 0.0};
};

struct SiamModel {
  EncoderParams encoder;
  FgnParams fgn;
  HeadParams head;

  template <class Rng>
  static SiamModel random(std::size_t encoder_channels, const FgnConfig& fgn_cfg, Rng& rng) {
    SiamModel m;
    m.encoder = EncoderParams::random(encoder_channels, rng);
    m.fgn = FgnParams::random(fgn_cfg, encoder_channels, rng);
    m.head.scale[0] = 10.0;
    m.head.bias[0] = 0.0;
    return m;
  }

  /// Zero-valued tensors with this model's shapes, used to hold gradients.
  SiamModel zeros_like() const {
    SiamModel z;
    z.encoder = {Tensor(encoder.weight.shape()), Tensor(encoder.bias.shape())};
    for (const auto& l : fgn.layers) z.fgn.layers.push_back({Tensor(l.weight.shape()), Tensor(l.bias.shape()), l.stride});
    z.head.scale = Tensor(head.scale.shape());
    z.head.bias = Tensor(head.bias.shape());
    return z;
  }
};

struct NamedTensor {
  std::string name;
  Tensor* tensor;
};

/// Every trainable tensor in a fixed order with stable names.
inline std::vector<NamedTensor> parameters(SiamModel& m) {
  std::vector<NamedTensor> out{{"encoder.weight", &m.encoder.weight}, {"encoder.bias", &m.encoder.bias}};
  for (std::size_t i = 0; i < m.fgn.layers.size(); ++i) {
    out.push_back({"fgn." + std::to_string(i) + ".weight", &m.fgn.layers[i].weight});
    out.push_back({"fgn." + std::to_string(i) + ".bias", &m.fgn.layers[i].bias});
  }
  out.push_back({"head.scale", &m.head.scale});
  out.push_back({"head.bias", &m.head.bias});
  return out;
}

inline std::vector<const Tensor*> parameters(const SiamModel& m) {
  std::vector<const Tensor*> out;
  for (auto& p : parameters(const_cast<SiamModel&>(m))) out.push_back(p.tensor);
  return out;
}

/// Intermediate values of one FGN pass needed by the backward pass.
struct FgnTrace {
  std::vector<Tensor> inputs;  // input of each layer
  std::vector<Tensor> preacts;  // conv output before ReLU
};

inline void check_fgn_input(const Tensor& image, const FgnParams& params) {
  if (params.layers.empty()) throw ShapeError("FGN has no layers");
  if (image.rank() != 3) throw ShapeError("FGN input must be C x H x W, got " + shape_str(image.shape()));
  if (image.dim(0) != params.layers.front().weight.dim(1)) {
    throw ShapeError("FGN input has " + std::to_string(image.dim(0)) + " channels, first layer expects " +
                     std::to_string(params.layers.front().weight.dim(1)));
  }
  const std::size_t need = params.min_input();
  if (image.dim(1) < need || image.dim(2) < need) {
    throw ShapeError("FGN input " + std::to_string(image.dim(1)) + "x" + std::to_string(image.dim(2)) +
                     " is smaller than the receptive field " + std::to_string(need) + "x" + std::to_string(need));
  }
}

/// Conv + ReLU per layer. Returns the final feature map.
inline Tensor fgn_forward(const Tensor& image, const FgnParams& params, FgnTrace* trace = nullptr) {
  check_fgn_input(image, params);
  Tensor x = image;
  if (trace) {
    trace->inputs.clear();
    trace->preacts.clear();
  }
  for (const auto& layer : params.layers) {
    Tensor pre = conv2d(x, layer.weight, layer.bias, layer.stride);
    if (trace) {
      trace->inputs.push_back(std::move(x));
      trace->preacts.push_back(pre);
    }
    x = relu(std::move(pre));
  }
  return x;
}

/// Accumulates parameter gradients into `grads` and returns dL/dInput.
inline Tensor fgn_backward(const FgnParams& params, const FgnTrace& trace, Tensor grad, FgnParams& grads) {
  if (trace.inputs.size() != params.layers.size()) throw std::logic_error("fgn_backward called before fgn_forward");
  for (std::size_t k = params.layers.size(); k-- > 0;) {
    const auto& layer = params.layers[k];
    grad = relu_backward(trace.preacts[k], std::move(grad));
    Conv2dGrads g = conv2d_backward(trace.inputs[k], layer.weight, layer.stride, grad);
    grads.layers[k].weight += g.weight;
    grads.layers[k].bias += g.bias;
    grad = std::move(g.input);
  }
  return grad;
}

inline double head_norm(const Tensor& target_feat) {
  return static_cast<double>(target_feat.dim(0) * target_feat.dim(1) * target_feat.dim(2));
}

inline Tensor apply_head(const Tensor& corr, const HeadParams& head, double norm) {
  Tensor out = corr;
  const double a = head.scale[0] / norm;
  for (double& v : out.values()) v = a * v + head.bias[0];
  return out;
}

/// Target and search branch from pillars to features, with optional
/// bicubic resize of the pseudo image (0 keeps native size).
struct BranchTrace {
  PillarSet pillars;
  std::size_t native_h = 0;
  std::size_t native_w = 0;
  bool resized = false;
  FgnTrace fgn;
  Tensor features;
};

inline Tensor branch_forward(const SiamModel& model, PillarSet pillars, std::size_t interp, BranchTrace& trace) {
  PseudoImage img = encode_pillars(pillars, model.encoder);
  trace.native_h = img.height();
  trace.native_w = img.width();
  trace.resized = interp > 0;
  Tensor input = trace.resized ? bicubic_resize(img.features, interp, interp) : std::move(img.features);
  trace.features = fgn_forward(input, model.fgn, &trace.fgn);
  trace.pillars = std::move(pillars);
  return trace.features;
}

inline void branch_backward(const SiamModel& model, const BranchTrace& trace, const Tensor& grad_features,
                            SiamModel& grads) {
  Tensor g = fgn_backward(model.fgn, trace.fgn, grad_features, grads.fgn);
  if (trace.resized) g = bicubic_resize_backward(g, trace.native_h, trace.native_w);
  EncoderParams ge = encode_pillars_backward(trace.pillars, model.encoder, g);
  grads.encoder.weight += ge.weight;
  grads.encoder.bias += ge.bias;
}

/// The full trainable graph: encoder -> FGN (both branches, shared weights)
/// -> cross-correlation -> head. Holds activations between forward and
/// backward.
class SiamGraph {
 public:
  const Tensor& forward(const SiamModel& model, PillarSet target, PillarSet search, std::size_t target_interp = 0,
                        std::size_t search_interp = 0) {
    model_ = &model;
    const Tensor& tf = branch_forward(model, std::move(target), target_interp, target_);
    const Tensor& sf = branch_forward(model, std::move(search), search_interp, search_);
    if (tf.dim(1) > sf.dim(1) || tf.dim(2) > sf.dim(2)) {
      throw ShapeError("target features " + shape_str(tf.shape()) + " exceed search features " + shape_str(sf.shape()));
    }
    corr_ = cross_correlate(sf, tf);
    norm_ = head_norm(tf);
    score_ = apply_head(corr_, model.head, norm_);
    return score_;
  }

  bool has_forward() const { return model_ != nullptr; }
  const Tensor& score() const { return score_; }
  const Tensor& target_features() const { return target_.features; }
  const Tensor& search_features() const { return search_.features; }

  /// Gradients of every parameter given dL/dScore.
  SiamModel backward(const Tensor& grad_score) const {
    if (!model_) throw std::logic_error("SiamGraph::backward called before forward");
    score_.require_same_shape(grad_score, "SiamGraph::backward");
    const SiamModel& model = *model_;
    SiamModel grads = model.zeros_like();
    double g_scale = 0.0, g_bias = 0.0;
    for (std::size_t i = 0; i < grad_score.size(); ++i) {
      g_scale += grad_score[i] * corr_[i] / norm_;
      g_bias += grad_score[i];
    }
    grads.head.scale[0] = g_scale;
    grads.head.bias[0] = g_bias;
    Tensor g_corr = grad_score;
    g_corr *= model.head.scale[0] / norm_;
    CorrelationGrads gc = cross_correlate_backward(search_.features, target_.features, g_corr);
    branch_backward(model, target_, gc.target, grads);
    branch_backward(model, search_, gc.search, grads);
    return grads;
  }

 private:
  const SiamModel* model_ = nullptr;
  BranchTrace target_;
  BranchTrace search_;
  Tensor corr_;
  Tensor score_;
  double norm_ = 1.0;
};

}  // namespace vpit::nn

#endif  // VPIT_NN_MODEL_HPP
