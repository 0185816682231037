#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "vqarank/errors.hpp"
#include "vqarank/layers.hpp"

namespace vqarank {

struct RmsPropConfig {
  double learning_rate = 1e-4;
  double decay_rho = 0.9;
  double epsilon = 1e-8;
  double lr_decay_factor = 0.1;
  std::uint64_t lr_decay_every = 50000;

  void validate() const {
    if (!(learning_rate > 0.0)) throw ParamError("learning_rate must be > 0");
    if (!(decay_rho > 0.0 && decay_rho < 1.0)) throw ParamError("decay_rho must be in (0, 1)");
    if (!(epsilon > 0.0)) throw ParamError("epsilon must be > 0");
    if (!(lr_decay_factor > 0.0 && lr_decay_factor <= 1.0))
      throw ParamError("lr_decay_factor must be in (0, 1]");
    if (lr_decay_every == 0) throw ParamError("lr_decay_every must be >= 1");
  }

  double effective_lr(std::uint64_t iteration) const {
    return learning_rate *
           std::pow(lr_decay_factor, static_cast<double>(iteration / lr_decay_every));
  }
};

namespace detail {

inline void rmsprop_update(Matrix& theta, Matrix& grad, Matrix& cache, double lr, double rho,
                           double eps) {
  for (std::size_t i = 0; i < theta.data.size(); ++i) {
    const double g = grad.data[i];
    cache.data[i] = rho * cache.data[i] + (1.0 - rho) * g * g;
    theta.data[i] -= lr * g / (std::sqrt(cache.data[i]) + eps);
    grad.data[i] = 0.0;
  }
}

}  // namespace detail

// One RMSProp update from the layer's accumulated gradients; gradients are
// zeroed afterward so the next batch starts clean.
inline void rmsprop_step(LinearLayer& layer, const RmsPropConfig& cfg, std::uint64_t iteration) {
  cfg.validate();
  const double lr = cfg.effective_lr(iteration);
  detail::rmsprop_update(layer.W, layer.grad_W, layer.rms_W, lr, cfg.decay_rho, cfg.epsilon);
  if (layer.has_bias)
    detail::rmsprop_update(layer.b, layer.grad_b, layer.rms_b, lr, cfg.decay_rho, cfg.epsilon);
}

}  // namespace vqarank
