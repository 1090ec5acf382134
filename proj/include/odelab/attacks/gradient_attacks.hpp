#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "odelab/models/classifier.hpp"
#include "odelab/netcore/errors.hpp"
#include "odelab/training/loss.hpp"

namespace odelab {

struct ClipRange {
  double lo = 0.0;
  double hi = 1.0;

  void validate() const {
    if (!(lo < hi)) throw ConfigError("clip range needs lo < hi");
  }
  double width() const { return hi - lo; }
};

struct FgsmConfig {
  double eps = 0.1;
};

struct PgdConfig {
  double eps = 0.3;
  double step = 0.01;
  int iters = 40;
  bool random_start = true;
};

struct Di2FgsmConfig {
  double eps = 0.5;
  double step = 0.01;
  int iters = 40;
  double transform_prob = 0.5;
  double pad_fraction = 0.1;
};

inline void validate(const FgsmConfig& c) {
  if (!(c.eps >= 0.0)) throw ConfigError("attack eps must be >= 0");
}

inline void validate(const PgdConfig& c) {
  if (!(c.eps >= 0.0)) throw ConfigError("attack eps must be >= 0");
  if (!(c.step > 0.0)) throw ConfigError("attack step must be > 0");
  if (c.iters < 1) throw ConfigError("attack iters must be >= 1");
}

inline void validate(const Di2FgsmConfig& c) {
  validate(PgdConfig{c.eps, c.step, c.iters, false});
  if (!(c.transform_prob >= 0.0 && c.transform_prob <= 1.0)) throw ConfigError("transform_prob must lie in [0, 1]");
  if (!(c.pad_fraction >= 0.0 && c.pad_fraction < 1.0)) throw ConfigError("pad_fraction must lie in [0, 1)");
}

/// Gradient of the cross-entropy loss at `label` with respect to the input.
inline Tensor input_gradient(const Classifier& model, const Tensor& x, int label, const ForwardOptions& opts = {}) {
  return loss_and_gradient(model, x, label, opts).grads.input;
}

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/// One signed step, projected onto the eps-ball around x0 and the clip box.
inline void signed_step(Tensor& x, const Tensor& x0, const Tensor& g, double step, double eps, const ClipRange& clip) {
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = x[i] + step * sign(g[i]);
    v = std::clamp(v, x0[i] - eps, x0[i] + eps);
    x[i] = std::clamp(v, clip.lo, clip.hi);
  }
}

}  // namespace detail

inline Tensor fgsm(const Classifier& model, const Tensor& x, int label, const FgsmConfig& config, const ClipRange& clip,
                   const ForwardOptions& opts = {}) {
  validate(config);
  clip.validate();
  if (config.eps == 0.0) return x;
  const Tensor g = input_gradient(model, x, label, opts);
  Tensor out = x;
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::clamp(x[i] + config.eps * detail::sign(g[i]), clip.lo, clip.hi);
  return out;
}

inline Tensor pgd(const Classifier& model, const Tensor& x, int label, const PgdConfig& config, const ClipRange& clip,
                  std::mt19937_64& rng, const ForwardOptions& opts = {}) {
  validate(config);
  clip.validate();
  if (config.eps == 0.0) return x;
  Tensor adv = x;
  if (config.random_start) {
    std::uniform_real_distribution<double> u(-config.eps, config.eps);
    for (std::size_t i = 0; i < adv.size(); ++i) adv[i] = std::clamp(x[i] + u(rng), clip.lo, clip.hi);
  }
  for (int k = 0; k < config.iters; ++k) {
    detail::signed_step(adv, x, input_gradient(model, adv, label, opts), config.step, config.eps, clip);
  }
  return adv;
}

/// Index map of a random resize-and-pad of an s x s grid: entry p is the source
/// pixel shown at p, or -1 for padding.
inline std::vector<long> diversity_map(std::size_t side, double pad_fraction, std::mt19937_64& rng) {
  const auto min_side = static_cast<std::size_t>(std::ceil((1.0 - pad_fraction) * static_cast<double>(side)));
  std::uniform_int_distribution<std::size_t> size_dist(std::max<std::size_t>(1, min_side), side);
  const std::size_t s = size_dist(rng);
  std::uniform_int_distribution<std::size_t> off_dist(0, side - s);
  const std::size_t top = off_dist(rng), left = off_dist(rng);
  std::vector<long> map(side * side, -1);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < s; ++c) {
      const std::size_t sr = r * side / s, sc = c * side / s;
      map[(top + r) * side + left + c] = static_cast<long>(sr * side + sc);
    }
  }
  return map;
}

inline std::size_t square_side(std::size_t n) {
  auto s = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  if (s * s != n) throw ContractError("input of size " + std::to_string(n) + " is not a square grid");
  return s;
}

/// Iterative sign attack whose gradients are taken, with probability
/// transform_prob, through a random resize-and-pad of the iterate. Padding
/// takes the clip range's lower end.
inline Tensor di2_fgsm(const Classifier& model, const Tensor& x, int label, const Di2FgsmConfig& config,
                       const ClipRange& clip, std::mt19937_64& rng, const ForwardOptions& opts = {}) {
  validate(config);
  clip.validate();
  const std::size_t side = config.transform_prob > 0.0 ? square_side(x.size()) : 0;
  if (config.eps == 0.0) return x;
  std::bernoulli_distribution coin(config.transform_prob);
  Tensor adv = x;
  for (int k = 0; k < config.iters; ++k) {
    Tensor g;
    if (config.transform_prob > 0.0 && coin(rng)) {
      const std::vector<long> map = diversity_map(side, config.pad_fraction, rng);
      Tensor t(x.shape(), clip.lo);
      for (std::size_t p = 0; p < map.size(); ++p) {
        if (map[p] >= 0) t[p] = adv[static_cast<std::size_t>(map[p])];
      }
      const Tensor gt = input_gradient(model, t, label, opts);
      g = Tensor(x.shape());
      for (std::size_t p = 0; p < map.size(); ++p) {
        if (map[p] >= 0) g[static_cast<std::size_t>(map[p])] += gt[p];
      }
    } else {
      g = input_gradient(model, adv, label, opts);
    }
    detail::signed_step(adv, x, g, config.step, config.eps, clip);
  }
  return adv;
}

}  // namespace odelab
