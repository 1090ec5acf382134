#pragma once

#include <algorithm>
#include <cmath>
#include <concepts>
#include <limits>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"
#include "odelab/netcore/vector_field.hpp"
#include "odelab/solvers/tableau.hpp"

namespace odelab {

/// Anything the integrators can step: a state dimension and an unchecked
/// evaluation f(t, y) -> out.
template <class F>
concept StateField = requires(const F& f, double t, std::span<const double> y, std::span<double> out) {
  { f.state_dim() } -> std::convertible_to<std::size_t>;
  f.evaluate(t, y, out);
};

struct SolverConfig {
  Method method = Method::DOPRI5;
  double t0 = 0.0;
  double t1 = 1.0;
  double h = 0.1;       // fixed-step methods
  double rtol = 1e-6;   // adaptive methods
  double atol = 1e-6;
  long max_steps = 1000000;
  double h_min = 1e-12;
  double h_max = std::numeric_limits<double>::infinity();

  void validate() const {
    if (!(t1 > t0)) throw ContractError("solver interval requires t1 > t0");
    if (!is_adaptive(method) && !(h > 0.0)) throw ContractError("fixed-step solver requires h > 0");
    if (is_adaptive(method) && !(rtol > 0.0 && atol > 0.0)) {
      throw ContractError("adaptive solver requires positive rtol and atol");
    }
    if (max_steps < 1) throw ContractError("max_steps must be positive");
    if (!(h_min > 0.0) || !(h_max > 0.0) || h_min > h_max) throw ContractError("invalid step bounds");
  }

  /// N(h) = ceil((t1 - t0) / h), forgiving representation error in the ratio.
  long fixed_step_count() const {
    const double ratio = (t1 - t0) / h;
    return std::max(1L, static_cast<long>(std::ceil(ratio - 1e-9 * ratio)));
  }
};

/// Discrete solution: states[i] at times[i]; accepted_step_sizes[i] leads
/// from times[i] to times[i + 1].
struct Trajectory {
  std::vector<double> times;
  std::vector<Tensor> states;
  std::vector<double> accepted_step_sizes;
  long rejected_step_count = 0;

  const Tensor& final_state() const { return states.back(); }
  std::size_t steps() const { return accepted_step_sizes.size(); }
};

/// CSV with columns t, state_0..state_{d-1}, h_accepted (0 on the first row).
inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const std::size_t d = traj.states.empty() ? 0 : traj.states.front().size();
  os << "t";
  for (std::size_t i = 0; i < d; ++i) os << ",state_" << i;
  os << ",h_accepted\n";
  const auto old_precision = os.precision(17);
  for (std::size_t n = 0; n < traj.states.size(); ++n) {
    os << traj.times[n];
    for (double v : traj.states[n].data()) os << ',' << v;
    os << ',' << (n == 0 ? 0.0 : traj.accepted_step_sizes[n - 1]) << '\n';
  }
  os.precision(old_precision);
}

/// Stage tapes of every accepted step, for reverse-mode differentiation
/// through a NeuralODE solve with the step sequence held fixed.
struct SolveTape {
  const ButcherTableau* tableau = nullptr;
  std::vector<double> step_sizes;
  std::vector<std::vector<GradientTape>> stages;
};

namespace detail {

struct RkWorkspace {
  std::vector<std::vector<double>> k;
  std::vector<double> stage;

  void prepare(std::size_t stages, std::size_t dim) {
    k.resize(stages);
    for (auto& v : k) v.resize(dim);
    stage.resize(dim);
  }
};

template <class Field>
void rk_attempt(const ButcherTableau& tab, const Field& f, double t, std::span<const double> y, double h,
                RkWorkspace& ws, std::span<double> y_next, std::span<double> err, std::vector<GradientTape>* tapes) {
  const std::size_t s = tab.stages();
  const std::size_t d = y.size();
  ws.prepare(s, d);
  if (tapes) tapes->resize(s);
  for (std::size_t i = 0; i < s; ++i) {
    for (std::size_t m = 0; m < d; ++m) {
      double acc = 0.0;
      for (std::size_t j = 0; j < i; ++j) acc += tab.a[i][j] * ws.k[j][m];
      ws.stage[m] = i == 0 ? y[m] : y[m] + h * acc;
    }
    const double ti = t + tab.c[i] * h;
    if constexpr (std::same_as<Field, VectorField>) {
      if (tapes) {
        f.evaluate_recorded(ti, ws.stage, ws.k[i], (*tapes)[i]);
      } else {
        f.evaluate(ti, ws.stage, ws.k[i]);
      }
    } else {
      f.evaluate(ti, ws.stage, ws.k[i]);
    }
    if (!vec::all_finite(ws.k[i])) {
      throw NumericError("non-finite value at Runge-Kutta stage " + std::to_string(i), static_cast<int>(i));
    }
  }
  for (std::size_t m = 0; m < d; ++m) {
    double acc = 0.0;
    for (std::size_t j = 0; j < s; ++j) acc += tab.b[j] * ws.k[j][m];
    y_next[m] = y[m] + h * acc;
  }
  if (!err.empty()) {
    const std::vector<double>& bh = *tab.b_hat;
    for (std::size_t m = 0; m < d; ++m) {
      double acc = 0.0;
      for (std::size_t j = 0; j < s; ++j) acc += (tab.b[j] - bh[j]) * ws.k[j][m];
      err[m] = h * acc;
    }
  }
}

template <class Field>
void check_initial_state(const Field& f, const Tensor& y0) {
  if (y0.size() != f.state_dim()) {
    throw DimensionError("initial state has " + std::to_string(y0.size()) + " entries, field expects " +
                         std::to_string(f.state_dim()));
  }
  y0.require_finite("initial state");
}

inline Tensor state_like(const Tensor& y0) { return Tensor(y0.shape()); }

}  // namespace detail

struct StepResult {
  Tensor y_next;
  std::optional<Tensor> err_estimate;
};

/// One explicit Runge-Kutta step. The error estimate h sum (b_i - b_hat_i) k_i
/// is returned when the tableau carries embedded weights.
template <StateField Field>
StepResult rk_step(const ButcherTableau& tab, const Field& f, double t, const Tensor& y, double h) {
  if (!(h > 0.0)) throw ContractError("rk_step requires h > 0");
  tab.validate();
  detail::check_initial_state(f, y);
  detail::RkWorkspace ws;
  StepResult r{detail::state_like(y), std::nullopt};
  Tensor err = detail::state_like(y);
  detail::rk_attempt(tab, f, t, y.data(), h, ws, r.y_next.data(),
                     tab.has_embedded() ? err.data() : std::span<double>{}, nullptr);
  if (tab.has_embedded()) r.err_estimate = std::move(err);
  return r;
}

/// Advances y0 along a prescribed time grid with the given tableau.
template <StateField Field>
Trajectory integrate_on_grid(const ButcherTableau& tab, const Field& f, std::span<const double> times, const Tensor& y0,
                             SolveTape* tape = nullptr) {
  detail::check_initial_state(f, y0);
  if (times.empty()) throw ContractError("time grid is empty");
  Trajectory traj;
  traj.times.assign(times.begin(), times.end());
  traj.states.reserve(times.size());
  traj.states.push_back(y0);
  if (tape) {
    tape->tableau = &tab;
    tape->step_sizes.clear();
    tape->stages.clear();
  }
  detail::RkWorkspace ws;
  for (std::size_t n = 0; n + 1 < times.size(); ++n) {
    const double h = times[n + 1] - times[n];
    if (!(h > 0.0)) throw ContractError("time grid must be strictly increasing");
    Tensor next = detail::state_like(y0);
    std::vector<GradientTape>* step_tapes = nullptr;
    if (tape) {
      tape->stages.emplace_back();
      tape->step_sizes.push_back(h);
      step_tapes = &tape->stages.back();
    }
    detail::rk_attempt(tab, f, times[n], traj.states.back().data(), h, ws, next.data(), {}, step_tapes);
    traj.states.push_back(std::move(next));
    traj.accepted_step_sizes.push_back(h);
  }
  return traj;
}

/// Fixed-step integration with N(h) steps; the final step is shortened to land
/// on t1 unless it differs from h only by rounding.
template <StateField Field>
Trajectory integrate_fixed(const Field& f, const SolverConfig& config, const Tensor& y0, SolveTape* tape = nullptr) {
  config.validate();
  if (is_adaptive(config.method)) throw ContractError("integrate_fixed needs a fixed-step method");
  if (config.h > config.t1 - config.t0) throw ContractError("step size exceeds the integration interval");
  const long n_steps = config.fixed_step_count();
  if (n_steps > config.max_steps) {
    throw BudgetError("fixed-step integration needs " + std::to_string(n_steps) + " steps, budget is " +
                      std::to_string(config.max_steps));
  }
  std::vector<double> times(static_cast<std::size_t>(n_steps) + 1);
  const double h = config.h;
  times[0] = config.t0;
  for (long n = 1; n < n_steps; ++n) times[static_cast<std::size_t>(n)] = config.t0 + static_cast<double>(n) * h;
  times.back() = config.t1;

  const ButcherTableau& tab = tableau_for(config.method);
  detail::check_initial_state(f, y0);
  Trajectory traj;
  traj.times = times;
  traj.states.reserve(times.size());
  traj.states.push_back(y0);
  if (tape) {
    tape->tableau = &tab;
    tape->step_sizes.clear();
    tape->stages.clear();
  }
  detail::RkWorkspace ws;
  for (long n = 0; n < n_steps; ++n) {
    const auto i = static_cast<std::size_t>(n);
    double step = h;
    if (n + 1 == n_steps) {
      const double remaining = config.t1 - times[i];
      if (std::abs(remaining - h) > 1e-9 * h) step = remaining;
    }
    Tensor next = detail::state_like(y0);
    std::vector<GradientTape>* step_tapes = nullptr;
    if (tape) {
      tape->stages.emplace_back();
      tape->step_sizes.push_back(step);
      step_tapes = &tape->stages.back();
    }
    detail::rk_attempt(tab, f, times[i], traj.states.back().data(), step, ws, next.data(), {}, step_tapes);
    traj.states.push_back(std::move(next));
    traj.accepted_step_sizes.push_back(step);
  }
  return traj;
}

/// RMS over components of err_i / (atol + rtol max(|y_i|, |y_next_i|)).
inline double scaled_error_norm(std::span<const double> err, std::span<const double> y, std::span<const double> y_next,
                                double rtol, double atol) {
  double acc = 0.0;
  for (std::size_t i = 0; i < err.size(); ++i) {
    const double scale = atol + rtol * std::max(std::abs(y[i]), std::abs(y_next[i]));
    const double r = err[i] / scale;
    acc += r * r;
  }
  return err.empty() ? 0.0 : std::sqrt(acc / static_cast<double>(err.size()));
}

/// Step-size multiplier 0.9 (1/err)^(1/(p_hat+1)), clamped to [0.2, 5].
inline double step_factor(double scaled_err, int embedded_order) {
  if (scaled_err == 0.0) return 5.0;
  const double f = 0.9 * std::pow(1.0 / scaled_err, 1.0 / (embedded_order + 1.0));
  return std::clamp(f, 0.2, 5.0);
}

/// Embedded-pair integration with accept/reject step control. Every accepted
/// step has scaled error <= 1; the last step is shortened to end on t1.
template <StateField Field>
Trajectory integrate_adaptive(const Field& f, const SolverConfig& config, const Tensor& y0, SolveTape* tape = nullptr) {
  config.validate();
  if (!is_adaptive(config.method)) throw ContractError("integrate_adaptive needs RKF45 or DOPRI5");
  const ButcherTableau& tab = tableau_for(config.method);
  detail::check_initial_state(f, y0);

  const double span = config.t1 - config.t0;
  double h = std::clamp(span / 100.0, config.h_min, config.h_max);
  double t = config.t0;

  Trajectory traj;
  traj.times.push_back(t);
  traj.states.push_back(y0);
  if (tape) {
    tape->tableau = &tab;
    tape->step_sizes.clear();
    tape->stages.clear();
  }
  detail::RkWorkspace ws;
  Tensor next = detail::state_like(y0);
  Tensor err = detail::state_like(y0);
  std::vector<GradientTape> attempt_tapes;
  long attempts = 0;
  const int p_hat = tab.embedded_order.value_or(tab.order - 1);

  while (t < config.t1) {
    if (++attempts > config.max_steps) {
      throw BudgetError("adaptive integration exceeded " + std::to_string(config.max_steps) + " steps at t=" +
                        std::to_string(t));
    }
    bool last = false;
    double step = h;
    if (t + step >= config.t1 - 1e-12 * span) {
      step = config.t1 - t;
      last = true;
    }
    const Tensor& y = traj.states.back();
    detail::rk_attempt(tab, f, t, y.data(), step, ws, next.data(), err.data(), tape ? &attempt_tapes : nullptr);
    const double e = scaled_error_norm(err.data(), y.data(), next.data(), config.rtol, config.atol);
    if (!std::isfinite(e)) throw NumericError("non-finite error estimate at t=" + std::to_string(t));
    const double factor = step_factor(e, p_hat);
    if (e <= 1.0) {
      t = last ? config.t1 : t + step;
      traj.times.push_back(t);
      traj.states.push_back(next);
      traj.accepted_step_sizes.push_back(step);
      if (tape) {
        tape->stages.push_back(std::move(attempt_tapes));
        tape->step_sizes.push_back(step);
        attempt_tapes = {};
      }
      // A shortened final step says nothing about the controller's h.
      if (!last) h = std::min(step * factor, config.h_max);
    } else {
      ++traj.rejected_step_count;
      h = std::min(step * factor, config.h_max);
      if (h < config.h_min) {
        throw StiffnessError("step size fell below h_min=" + std::to_string(config.h_min) + " at t=" +
                             std::to_string(t));
      }
    }
  }
  return traj;
}

/// Dispatches on the configured method.
template <StateField Field>
Trajectory integrate(const Field& f, const SolverConfig& config, const Tensor& y0, SolveTape* tape = nullptr) {
  return is_adaptive(config.method) ? integrate_adaptive(f, config, y0, tape) : integrate_fixed(f, config, y0, tape);
}

/// Reverse pass through a recorded solve. `upstream` is the gradient of the
/// objective with respect to the final state; returns the gradient with respect
/// to the initial state and accumulates parameter gradients.
inline std::vector<double> solve_backward(const VectorField& f, const SolveTape& tape, std::span<const double> upstream,
                                          std::span<Tensor> param_grads) {
  if (!tape.tableau) throw StateError("solve tape has not been recorded");
  const ButcherTableau& tab = *tape.tableau;
  const std::size_t s = tab.stages();
  const std::size_t d = upstream.size();
  std::vector<double> g(upstream.begin(), upstream.end());
  std::vector<std::vector<double>> kbar(s, std::vector<double>(d));
  std::vector<double> stage_bar(d);
  for (std::size_t n = tape.stages.size(); n-- > 0;) {
    const double h = tape.step_sizes[n];
    const std::vector<GradientTape>& stages = tape.stages[n];
    for (std::size_t i = 0; i < s; ++i) {
      for (std::size_t m = 0; m < d; ++m) kbar[i][m] = h * tab.b[i] * g[m];
    }
    std::vector<double> y_bar = g;
    for (std::size_t i = s; i-- > 0;) {
      std::fill(stage_bar.begin(), stage_bar.end(), 0.0);
      f.accumulate_backward(stages[i], kbar[i], stage_bar, param_grads);
      for (std::size_t j = 0; j < i; ++j) {
        const double coef = h * tab.a[i][j];
        if (coef == 0.0) continue;
        for (std::size_t m = 0; m < d; ++m) kbar[j][m] += coef * stage_bar[m];
      }
      for (std::size_t m = 0; m < d; ++m) y_bar[m] += stage_bar[m];
    }
    g = std::move(y_bar);
  }
  return g;
}

}  // namespace odelab
