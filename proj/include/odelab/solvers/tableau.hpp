#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "odelab/netcore/errors.hpp"

namespace odelab {

enum class Method { Euler, Heun, RK4, RKF45, DOPRI5 };

inline std::string to_string(Method m) {
  switch (m) {
    case Method::Euler: return "euler";
    case Method::Heun: return "heun";
    case Method::RK4: return "rk4";
    case Method::RKF45: return "rkf45";
    case Method::DOPRI5: return "dopri5";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  if (s == "euler") return Method::Euler;
  if (s == "heun") return Method::Heun;
  if (s == "rk4") return Method::RK4;
  if (s == "rkf45") return Method::RKF45;
  if (s == "dopri5") return Method::DOPRI5;
  throw ConfigError("unknown integration method '" + s + "'");
}

inline bool is_adaptive(Method m) { return m == Method::RKF45 || m == Method::DOPRI5; }

/// Explicit Runge-Kutta coefficients. `a` is stored as full rows; entries on
/// and above the diagonal must be zero.
struct ButcherTableau {
  std::string name;
  std::vector<std::vector<double>> a;
  std::vector<double> b;
  std::optional<std::vector<double>> b_hat;
  std::vector<double> c;
  int order = 1;
  std::optional<int> embedded_order;

  std::size_t stages() const { return b.size(); }
  bool has_embedded() const { return b_hat.has_value(); }

  void validate() const {
    const std::size_t s = b.size();
    if (s == 0 || a.size() != s || c.size() != s) throw ContractError(name + ": inconsistent tableau sizes");
    if (b_hat && b_hat->size() != s) throw ContractError(name + ": embedded weights have wrong length");
    auto sum = [](const std::vector<double>& v) {
      double acc = 0.0;
      for (double x : v) acc += x;
      return acc;
    };
    if (std::abs(sum(b) - 1.0) > 1e-12) throw ContractError(name + ": weights do not sum to 1");
    if (b_hat && std::abs(sum(*b_hat) - 1.0) > 1e-12) throw ContractError(name + ": embedded weights do not sum to 1");
    for (std::size_t i = 0; i < s; ++i) {
      if (a[i].size() != s) throw ContractError(name + ": row " + std::to_string(i) + " has wrong length");
      for (std::size_t j = i; j < s; ++j) {
        if (a[i][j] != 0.0) throw ContractError(name + ": tableau is not explicit");
      }
      if (std::abs(sum(a[i]) - c[i]) > 1e-12) {
        throw ContractError(name + ": node c[" + std::to_string(i) + "] inconsistent with row sum");
      }
    }
  }
};

namespace tableaus {

inline ButcherTableau euler() { return {"euler", {{0.0}}, {1.0}, std::nullopt, {0.0}, 1, std::nullopt}; }

inline ButcherTableau heun() {
  return {"heun", {{0.0, 0.0}, {1.0, 0.0}}, {0.5, 0.5}, std::nullopt, {0.0, 1.0}, 2, std::nullopt};
}

inline ButcherTableau rk4() {
  return {"rk4",
          {{0, 0, 0, 0}, {0.5, 0, 0, 0}, {0, 0.5, 0, 0}, {0, 0, 1.0, 0}},
          {1.0 / 6, 1.0 / 3, 1.0 / 3, 1.0 / 6},
          std::nullopt,
          {0, 0.5, 0.5, 1.0},
          4,
          std::nullopt};
}

// Fehlberg 4(5). The fifth-order weights propagate the solution; the
// fourth-order weights form the embedded estimate.
inline ButcherTableau rkf45() {
  ButcherTableau t;
  t.name = "rkf45";
  t.a = {{0, 0, 0, 0, 0, 0},
         {1.0 / 4, 0, 0, 0, 0, 0},
         {3.0 / 32, 9.0 / 32, 0, 0, 0, 0},
         {1932.0 / 2197, -7200.0 / 2197, 7296.0 / 2197, 0, 0, 0},
         {439.0 / 216, -8.0, 3680.0 / 513, -845.0 / 4104, 0, 0},
         {-8.0 / 27, 2.0, -3544.0 / 2565, 1859.0 / 4104, -11.0 / 40, 0}};
  t.b = {16.0 / 135, 0, 6656.0 / 12825, 28561.0 / 56430, -9.0 / 50, 2.0 / 55};
  t.b_hat = std::vector<double>{25.0 / 216, 0, 1408.0 / 2565, 2197.0 / 4104, -1.0 / 5, 0};
  t.c = {0, 1.0 / 4, 3.0 / 8, 12.0 / 13, 1.0, 1.0 / 2};
  t.order = 5;
  t.embedded_order = 4;
  return t;
}

// Dormand-Prince 5(4).
inline ButcherTableau dopri5() {
  ButcherTableau t;
  t.name = "dopri5";
  t.a = {{0, 0, 0, 0, 0, 0, 0},
         {1.0 / 5, 0, 0, 0, 0, 0, 0},
         {3.0 / 40, 9.0 / 40, 0, 0, 0, 0, 0},
         {44.0 / 45, -56.0 / 15, 32.0 / 9, 0, 0, 0, 0},
         {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729, 0, 0, 0},
         {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656, 0, 0},
         {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0}};
  t.b = {35.0 / 384, 0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84, 0};
  t.b_hat = std::vector<double>{5179.0 / 57600, 0, 7571.0 / 16695, 393.0 / 640, -92097.0 / 339200, 187.0 / 2100,
                                1.0 / 40};
  t.c = {0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
  t.order = 5;
  t.embedded_order = 4;
  return t;
}

}  // namespace tableaus

inline const ButcherTableau& tableau_for(Method m) {
  static const ButcherTableau euler = tableaus::euler();
  static const ButcherTableau heun = tableaus::heun();
  static const ButcherTableau rk4 = tableaus::rk4();
  static const ButcherTableau rkf45 = tableaus::rkf45();
  static const ButcherTableau dopri5 = tableaus::dopri5();
  switch (m) {
    case Method::Euler: return euler;
    case Method::Heun: return heun;
    case Method::RK4: return rk4;
    case Method::RKF45: return rkf45;
    case Method::DOPRI5: return dopri5;
  }
  return euler;
}

/// Lipschitz bound of the step increment F(t, y) = sum_i b_i k_i when f is
/// K-Lipschitz: stage i satisfies L_i <= K (1 + h sum_j |a_ij| L_j), and
/// L_F <= sum_i |b_i| L_i. One step of size h is then (1 + h L_F)-Lipschitz.
inline double increment_lipschitz_bound(const ButcherTableau& tab, double k, double h) {
  const std::size_t s = tab.stages();
  std::vector<double> stage(s, 0.0);
  double bound = 0.0;
  for (std::size_t i = 0; i < s; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < i; ++j) acc += std::abs(tab.a[i][j]) * stage[j];
    stage[i] = k * (1.0 + h * acc);
    bound += std::abs(tab.b[i]) * stage[i];
  }
  return bound;
}

}  // namespace odelab
