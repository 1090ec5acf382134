#pragma once

#include <algorithm>

#include "odelab/models/classifier.hpp"
#include "odelab/netcore/errors.hpp"
#include "odelab/solvers/runge_kutta.hpp"

namespace odelab {

/// Paired clean/perturbed trajectories on a shared time grid: the clean one
/// with the configured method, the perturbed one replayed on the clean grid.
struct PairedTrajectories {
  Trajectory clean;
  Trajectory perturbed;

  double max_deviation() const {
    double m = 0.0;
    for (std::size_t n = 0; n < clean.states.size(); ++n) {
      m = std::max(m, vec::distance2(clean.states[n].data(), perturbed.states[n].data()));
    }
    return m;
  }
};

template <StateField Field>
PairedTrajectories paired_trajectories(const Field& f, const SolverConfig& config, const Tensor& y0, const Tensor& eps) {
  require_same_shape(y0, eps, "perturbation");
  PairedTrajectories out;
  out.clean = integrate(f, config, y0);
  out.perturbed = integrate_on_grid(tableau_for(config.method), f, out.clean.times, y0 + eps);
  return out;
}

/// max_n |z_n - y_n| / |eps| for a single field.
template <StateField Field>
double amplification(const Field& f, const SolverConfig& config, const Tensor& y0, const Tensor& eps) {
  const double en = norm2(eps);
  if (!(en > 0.0)) throw ContractError("amplification needs a non-zero perturbation");
  return paired_trajectories(f, config, y0, eps).max_deviation() / en;
}

/// The same ratio over a classifier's feature trajectory: every intermediate
/// state of every block, with NeuralODE blocks replayed on the clean grids.
inline double amplification(const Classifier& model, const Tensor& x, const Tensor& eps) {
  require_same_shape(x, eps, "perturbation");
  const double en = norm2(eps);
  if (!(en > 0.0)) throw ContractError("amplification needs a non-zero perturbation");
  ClassifierTape clean, perturbed;
  classifier_forward(model, x, &clean);
  ForwardOptions opts;
  opts.grid_source = &clean;
  classifier_forward(model, x + eps, &perturbed, opts);
  double m = 0.0;
  for (std::size_t b = 0; b < clean.blocks.size(); ++b) {
    const auto& a = clean.blocks[b].states;
    const auto& z = perturbed.blocks[b].states;
    for (std::size_t n = 0; n < a.size(); ++n) m = std::max(m, vec::distance2(a[n], z[n]));
  }
  return m / en;
}

}  // namespace odelab
