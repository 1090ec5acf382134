#pragma once

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"

namespace odelab {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps_hat = 1e-8;
};

struct SgdConfig {
  double lr = 1e-2;
};

using OptimizerConfig = std::variant<AdamConfig, SgdConfig>;

inline double learning_rate(const OptimizerConfig& c) {
  return std::visit([](const auto& o) { return o.lr; }, c);
}

inline void validate(const OptimizerConfig& c) {
  if (!(learning_rate(c) > 0.0)) throw ConfigError("learning rate must be positive");
  if (const auto* a = std::get_if<AdamConfig>(&c)) {
    if (!(a->beta1 >= 0.0 && a->beta1 < 1.0 && a->beta2 >= 0.0 && a->beta2 < 1.0)) {
      throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(a->eps_hat > 0.0)) throw ConfigError("adam eps_hat must be positive");
  }
}

struct AdamState {
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

namespace detail {

inline void check_param_shapes(std::span<Tensor* const> params, std::span<const Tensor> grads) {
  if (params.size() != grads.size()) throw DimensionError("parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i].shape()) {
      throw DimensionError("gradient " + std::to_string(i) + " has shape " + shape_string(grads[i].shape()) +
                           ", parameter has " + shape_string(params[i]->shape()));
    }
  }
}

}  // namespace detail

/// Bias-corrected Adam. Coordinates whose gradient is exactly zero keep their
/// value while their moments decay.
inline void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      const AdamConfig& config, double lr) {
  detail::check_param_shapes(params, grads);
  if (state.step < 0) throw StateError("adam step counter is negative");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->shape());
      state.v.emplace_back(p->shape());
    }
  }
  if (state.m.size() != params.size()) throw StateError("adam state does not match the parameter list");
  ++state.step;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    std::span<double> w = params[p]->data();
    std::span<const double> g = grads[p].data();
    std::span<double> m = state.m[p].data();
    std::span<double> v = state.v[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      if (g[i] == 0.0) continue;
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.eps_hat);
    }
  }
}

inline void sgd_step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
  detail::check_param_shapes(params, grads);
  for (std::size_t p = 0; p < params.size(); ++p) vec::axpy(-lr, grads[p].data(), params[p]->data());
}

/// Optimizer plus its state, stepping at an externally scheduled learning rate.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) { validate(config_); }

  double base_lr() const { return learning_rate(config_); }
  const OptimizerConfig& config() const { return config_; }

  void step(std::span<Tensor* const> params, std::span<const Tensor> grads, double lr) {
    if (const auto* a = std::get_if<AdamConfig>(&config_)) {
      adam_step(params, grads, adam_, *a, lr);
    } else {
      sgd_step(params, grads, lr);
    }
  }

 private:
  OptimizerConfig config_;
  AdamState adam_;
};

}  // namespace odelab
