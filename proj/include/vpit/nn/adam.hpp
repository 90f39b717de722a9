#ifndef VPIT_NN_ADAM_HPP
#define VPIT_NN_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "vpit/nn/tensor.hpp"

namespace vpit::nn {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moment estimates for one parameter tensor.
struct AdamSlot {
  Tensor m;
  Tensor v;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<AdamSlot> slots;
};

/// One bias-corrected Adam update over a list of parameters and matching
/// gradients. Slots are created lazily on the first call.
inline void adam_step(const std::vector<Tensor*>& params, const std::vector<const Tensor*>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  if (state.slots.empty()) {
    for (const Tensor* p : params) state.slots.push_back({Tensor(p->shape()), Tensor(p->shape())});
  }
  if (state.slots.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = *grads[k];
    p.require_same_shape(g, "adam_step");
    AdamSlot& slot = state.slots[k];
    p.require_same_shape(slot.m, "adam_step state");
    for (std::size_t i = 0; i < p.size(); ++i) {
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * g[i];
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = slot.m[i] / bc1;
      const double v_hat = slot.v[i] / bc2;
      p[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace vpit::nn

#endif  // VPIT_NN_ADAM_HPP
