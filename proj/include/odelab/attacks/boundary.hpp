#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "odelab/attacks/gradient_attacks.hpp"
#include "odelab/netcore/errors.hpp"

namespace odelab {

struct BoundaryConfig {
  int queries = 1000;
  double init_step = 0.1;  // contraction toward the original, as a fraction of the distance
  double orth_step = 0.1;  // orthogonal move, as a fraction of the distance
  int max_init_draws = 100;
};

inline void validate(const BoundaryConfig& c) {
  if (c.queries < 1) throw ConfigError("boundary queries must be >= 1");
  if (!(c.init_step > 0.0 && c.init_step < 1.0)) throw ConfigError("boundary init_step must lie in (0, 1)");
  if (!(c.orth_step > 0.0)) throw ConfigError("boundary orth_step must be > 0");
  if (c.max_init_draws < 1) throw ConfigError("boundary max_init_draws must be >= 1");
}

using DecisionOracle = std::function<int(const Tensor&)>;

struct BoundaryResult {
  Tensor x_adv;
  double initial_distance = 0.0;
  std::vector<double> distance_trace;  // best L2 distance after each query
  int init_draws = 0;
  int queries = 0;  // oracle calls after initialisation
  int accepted = 0;

  double final_distance() const { return distance_trace.empty() ? initial_distance : distance_trace.back(); }
};

/// Decision-only attack: start from a uniform adversarial draw in the clip box,
/// then alternate an orthogonal step on the sphere around x with a contraction
/// toward x, keeping candidates that stay adversarial and move closer.
inline BoundaryResult boundary_attack(const DecisionOracle& oracle, const Tensor& x, int label,
                                      const BoundaryConfig& config, const ClipRange& clip, std::mt19937_64& rng) {
  validate(config);
  clip.validate();
  BoundaryResult out;
  std::uniform_real_distribution<double> box(clip.lo, clip.hi);
  bool found = false;
  Tensor adv(x.shape());
  while (out.init_draws < config.max_init_draws && !found) {
    for (double& v : adv.values()) v = box(rng);
    ++out.init_draws;
    found = oracle(adv) != label;
  }
  if (!found) {
    throw InitializationError("no adversarial starting point in " + std::to_string(config.max_init_draws) +
                              " uniform draws");
  }
  double dist = vec::distance2(adv.data(), x.data());
  out.initial_distance = dist;

  double orth = config.orth_step, contract = config.init_step;
  int success_run = 0, failure_run = 0;
  std::normal_distribution<double> gauss(0.0, 1.0);
  Tensor cand(x.shape()), eta(x.shape());
  out.distance_trace.reserve(static_cast<std::size_t>(config.queries));
  for (int q = 0; q < config.queries; ++q) {
    // Orthogonal step: perturb, project onto the sphere of radius dist around x.
    for (double& v : eta.values()) v = gauss(rng);
    const double en = norm2(eta);
    for (std::size_t i = 0; i < x.size(); ++i) cand[i] = adv[i] + orth * dist * eta[i] / en;
    const double r = vec::distance2(cand.data(), x.data());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double on_sphere = x[i] + (cand[i] - x[i]) * (dist / r);
      // Contraction toward the original input.
      cand[i] = std::clamp(on_sphere + contract * (x[i] - on_sphere), clip.lo, clip.hi);
    }
    const double cd = vec::distance2(cand.data(), x.data());
    ++out.queries;
    const bool success = oracle(cand) != label && cd < dist;
    if (success) {
      adv = cand;
      dist = cd;
      ++out.accepted;
      ++success_run;
      failure_run = 0;
      if (success_run == 10) {
        orth *= 1.1;
        contract = std::min(0.5, contract * 1.1);
        success_run = 0;
      }
    } else {
      ++failure_run;
      success_run = 0;
      if (failure_run == 10) {
        orth *= 0.5;
        contract *= 0.5;
        failure_run = 0;
      }
    }
    out.distance_trace.push_back(dist);
  }
  out.x_adv = adv;
  return out;
}

inline DecisionOracle decision_oracle(const Classifier& model) {
  return [&model](const Tensor& x) { return argmax(classifier_forward(model, x)); };
}

}  // namespace odelab
