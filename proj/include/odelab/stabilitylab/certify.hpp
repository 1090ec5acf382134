#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <random>
#include <vector>

#include <nlohmann/json.hpp>

#include "odelab/models/amplification.hpp"
#include "odelab/netcore/lipschitz.hpp"
#include "odelab/solvers/runge_kutta.hpp"
#include "odelab/solvers/tableau.hpp"

namespace odelab {

struct BoundCertificate {
  double K = 0.0;       // Lipschitz bound of the field
  double K_step = 0.0;  // bound for the method's increment function at the largest step taken
  double t0 = 0.0;
  double b = 1.0;
  double c = 1.0;  // exp((b - t0) K_step)
  double stepwise_bound = 1.0;  // prod_n (1 + h_n K_step(h_n))
  double epsilon_norm = 0.0;
  double empirical_max_deviation = 0.0;
  std::vector<double> trial_deviations;
  std::size_t steps = 0;
  bool holds = false;

  double amplification() const { return empirical_max_deviation / epsilon_norm; }
};

/// Unit vector with a uniformly random direction.
inline Tensor random_direction(std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Tensor v({dim});
  double n = 0.0;
  while (n == 0.0) {
    for (double& x : v.values()) x = g(rng);
    n = norm2(v);
  }
  for (double& x : v.values()) x /= n;
  return v;
}

/// Paired clean/perturbed runs for `trials` random perturbations of norm
/// `epsilon_norm`, compared against exp((b - t0) K) |eps|. Higher-order and
/// adaptive methods use the increment-function bound in place of K.
template <StateField Field>
BoundCertificate certify_bound(const Field& f, const SolverConfig& config, const Tensor& y0, double epsilon_norm,
                               int trials, std::uint64_t seed) {
  if (!(epsilon_norm > 0.0)) throw ContractError("certificate needs a non-zero perturbation norm");
  if (trials < 1) throw ContractError("certificate needs at least one trial");
  config.validate();
  const ButcherTableau& tab = tableau_for(config.method);
  BoundCertificate cert;
  cert.K = lipschitz_constant(f);
  cert.t0 = config.t0;
  cert.b = config.t1;
  cert.epsilon_norm = epsilon_norm;
  const Trajectory clean = integrate(f, config, y0);
  cert.steps = clean.steps();
  double h_max = 0.0;
  cert.stepwise_bound = 1.0;
  for (double h : clean.accepted_step_sizes) {
    h_max = std::max(h_max, h);
    cert.stepwise_bound *= 1.0 + h * increment_lipschitz_bound(tab, cert.K, h);
  }
  cert.K_step = increment_lipschitz_bound(tab, cert.K, h_max);
  cert.c = std::exp((cert.b - cert.t0) * cert.K_step);

  std::mt19937_64 rng(seed);
  for (int t = 0; t < trials; ++t) {
    const Tensor eps = epsilon_norm * random_direction(y0.size(), rng);
    const Trajectory pert = integrate_on_grid(tab, f, clean.times, y0 + eps);
    double dev = 0.0;
    for (std::size_t n = 0; n < clean.states.size(); ++n) {
      dev = std::max(dev, vec::distance2(clean.states[n].data(), pert.states[n].data()));
    }
    cert.trial_deviations.push_back(dev);
    cert.empirical_max_deviation = std::max(cert.empirical_max_deviation, dev);
  }
  cert.holds = cert.empirical_max_deviation <= cert.c * cert.epsilon_norm + 1e-9;
  return cert;
}

inline nlohmann::json certificate_json(const BoundCertificate& c) {
  return {{"K", c.K},
          {"K_step", c.K_step},
          {"interval", {c.t0, c.b}},
          {"c", c.c},
          {"stepwise_bound", c.stepwise_bound},
          {"epsilon_norm", c.epsilon_norm},
          {"empirical_max_deviation", c.empirical_max_deviation},
          {"amplification", c.amplification()},
          {"trials", c.trial_deviations.size()},
          {"steps", c.steps},
          {"holds", c.holds}};
}

inline void write_certificate_csv(std::ostream& os, const std::vector<BoundCertificate>& certs) {
  const auto old = os.precision(17);
  os << "epsilon_norm,K,K_step,t0,b,c,stepwise_bound,empirical_max_deviation,amplification,trials,steps,holds\n";
  for (const BoundCertificate& c : certs) {
    os << c.epsilon_norm << ',' << c.K << ',' << c.K_step << ',' << c.t0 << ',' << c.b << ',' << c.c << ','
       << c.stepwise_bound << ',' << c.empirical_max_deviation << ',' << c.amplification() << ','
       << c.trial_deviations.size() << ',' << c.steps << ',' << (c.holds ? "true" : "false") << '\n';
  }
  os.precision(old);
}

}  // namespace odelab
