#pragma once

// Skip-connection architectures read as one-step ODE schemes: PolyInception
// (truncated backward Euler), the FractalNet expansion rule (Heun-like) and
// RevNet additive coupling (Euler on a split system).

#include <Eigen/Dense>
#include <utility>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"
#include "odelab/netcore/vector_field.hpp"
#include "odelab/solvers/runge_kutta.hpp"

namespace odelab {

namespace detail {

template <class Field>
void require_autonomous(const Field& f, const char* who) {
  if constexpr (std::same_as<Field, VectorField>) {
    if (f.time_mode() != TimeMode::Ignore) throw ContractError(std::string(who) + " needs an autonomous field");
  }
}

template <class Field>
Tensor apply_field(const Field& f, const Tensor& y) {
  if (y.size() != f.state_dim()) {
    throw DimensionError("field expects state of size " + std::to_string(f.state_dim()) + ", got " +
                         std::to_string(y.size()));
  }
  Tensor out(y.shape());
  f.evaluate(0.0, y.data(), out.data());
  return out;
}

}  // namespace detail

/// y + F(y) + F(F(y)).
template <StateField Field>
Tensor poly_inception_apply(const Field& f, const Tensor& y) {
  detail::require_autonomous(f, "poly_inception_apply");
  const Tensor fy = detail::apply_field(f, y);
  const Tensor ffy = detail::apply_field(f, fy);
  Tensor out = y;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y[i] + fy[i] + ffy[i];
  return out;
}

/// Solves (I - hA) y_next = y for a linear field f(y) = A y.
inline Tensor backward_euler_linear(const Tensor& a, const Tensor& y, double h) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1)) throw DimensionError("backward Euler needs a square matrix");
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  if (y.size() != a.dim(0)) throw DimensionError("backward Euler state size does not match matrix");
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) {
      m(r, c) = (r == c ? 1.0 : 0.0) - h * a.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
    }
  }
  Eigen::VectorXd rhs = Eigen::Map<const Eigen::VectorXd>(y.data().data(), n);
  Eigen::FullPivLU<Eigen::MatrixXd> lu(m);
  if (!lu.isInvertible()) throw NumericError("backward Euler system (I - hA) is singular");
  Eigen::VectorXd x = lu.solve(rhs);
  const double residual = (m * x - rhs).norm();
  if (!(residual <= 1e-10 * std::max(1.0, rhs.norm()))) {
    throw NumericError("backward Euler solve residual " + std::to_string(residual) + " too large");
  }
  return Tensor(y.shape(), std::vector<double>(x.data(), x.data() + n));
}

/// sum_{k=0}^{terms-1} (hA)^k y: the resolvent (I - hA)^{-1} y truncated after
/// `terms` terms. terms = 3 is the PolyInception unit for a linear residual
/// branch F = hA.
inline Tensor truncated_resolvent(const Tensor& a, const Tensor& y, double h, int terms) {
  if (a.rank() != 2 || a.dim(0) != a.dim(1) || a.dim(0) != y.size()) {
    throw DimensionError("truncated_resolvent: matrix and state do not conform");
  }
  const std::size_t n = y.size();
  Tensor sum({n});
  Tensor power = y;
  for (int k = 0; k < terms; ++k) {
    for (std::size_t i = 0; i < n; ++i) sum[i] += power[i];
    Tensor next({n});
    for (std::size_t r = 0; r < n; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += a.at(r, c) * power[c];
      next[r] = h * s;
    }
    power = std::move(next);
  }
  return Tensor(y.shape(), sum.values());
}

inline constexpr int kMaxFractalColumns = 16;

namespace detail {

template <class Field>
Tensor fractal_recurse(const Field& f1, int columns, const Tensor& y, long& evaluations) {
  if (columns == 1) {
    ++evaluations;
    return apply_field(f1, y);
  }
  const Tensor inner = fractal_recurse(f1, columns - 1, y, evaluations);
  const Tensor outer = fractal_recurse(f1, columns - 1, inner, evaluations);
  ++evaluations;
  const Tensor base = apply_field(f1, y);
  Tensor out(y.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * outer[i] + 0.5 * base[i];
  return out;
}

}  // namespace detail

/// f_{C+1}(y) = 1/2 (f_C o f_C)(y) + 1/2 f_1(y), with f_1 the given field.
template <StateField Field>
Tensor fractal_expand(const Field& f1, int columns, const Tensor& y, long* evaluations = nullptr) {
  detail::require_autonomous(f1, "fractal_expand");
  if (columns < 1) throw ContractError("fractal expansion needs at least one column");
  if (columns > kMaxFractalColumns) {
    throw BudgetError("fractal expansion with " + std::to_string(columns) + " columns exceeds the limit of " +
                      std::to_string(kMaxFractalColumns));
  }
  long count = 0;
  Tensor out = detail::fractal_recurse(f1, columns, y, count);
  if (evaluations) *evaluations = count;
  return out;
}

/// Additive coupling: x' = x + f1(y), y' = y + f2(x').
template <StateField F1, StateField F2>
std::pair<Tensor, Tensor> revnet_couple(const F1& f1, const F2& f2, const Tensor& x, const Tensor& y) {
  if (f1.state_dim() != y.size() || f2.state_dim() != x.size() || x.size() != y.size()) {
    throw DimensionError("revnet coupling: field and half-state sizes do not conform");
  }
  const Tensor f1y = detail::apply_field(f1, y);
  Tensor x_next = x + f1y;
  const Tensor f2x = detail::apply_field(f2, x_next);
  Tensor y_next = y + f2x;
  return {std::move(x_next), std::move(y_next)};
}

/// Inverse of revnet_couple: y = y' - f2(x'), x = x' - f1(y).
template <StateField F1, StateField F2>
std::pair<Tensor, Tensor> revnet_invert(const F1& f1, const F2& f2, const Tensor& x_next, const Tensor& y_next) {
  if (f1.state_dim() != y_next.size() || f2.state_dim() != x_next.size() || x_next.size() != y_next.size()) {
    throw DimensionError("revnet inversion: field and half-state sizes do not conform");
  }
  Tensor y = y_next - detail::apply_field(f2, x_next);
  Tensor x = x_next - detail::apply_field(f1, y);
  return {std::move(x), std::move(y)};
}

}  // namespace odelab
