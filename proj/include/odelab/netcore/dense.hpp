#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"

namespace odelab {

enum class Activation { ReLU, Identity };

inline std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::ReLU;
  if (s == "identity") return Activation::Identity;
  throw FormatError("unknown activation '" + s + "'");
}

/// Affine map followed by an elementwise activation: act(W x + b).
class DenseLayer {
 public:
  DenseLayer() = default;

  DenseLayer(Tensor weights, Tensor bias, Activation activation)
      : weights_(std::move(weights)), bias_(std::move(bias)), activation_(activation) {
    if (weights_.rank() != 2) throw DimensionError("dense weights must be a matrix");
    if (bias_.rank() != 1 || bias_.dim(0) != weights_.dim(0)) {
      throw DimensionError("dense bias " + shape_string(bias_.shape()) + " does not match weights " +
                           shape_string(weights_.shape()));
    }
  }

  /// Zero-initialised layer.
  static DenseLayer zeros(std::size_t in, std::size_t out, Activation activation) {
    return DenseLayer(Tensor({out, in}), Tensor({out}), activation);
  }

  std::size_t in_dim() const { return weights_.dim(1); }
  std::size_t out_dim() const { return weights_.dim(0); }
  Activation activation() const { return activation_; }

  const Tensor& weights() const { return weights_; }
  const Tensor& bias() const { return bias_; }
  Tensor& weights() { return weights_; }
  Tensor& bias() { return bias_; }

  /// Writes W x + b into `pre` and act(pre) into `out`. `pre` and `out` may alias.
  void forward(std::span<const double> x, std::span<double> pre, std::span<double> out) const {
    const std::size_t rows = out_dim();
    const std::size_t cols = in_dim();
    const double* w = weights_.data().data();
    for (std::size_t r = 0; r < rows; ++r) {
      double s = bias_[r];
      const double* row = w + r * cols;
      for (std::size_t c = 0; c < cols; ++c) s += row[c] * x[c];
      pre[r] = s;
    }
    for (std::size_t r = 0; r < rows; ++r) out[r] = activate(pre[r]);
  }

  Tensor apply(const Tensor& x) const {
    if (x.size() != in_dim()) {
      throw DimensionError("dense layer expects " + std::to_string(in_dim()) + " inputs, got " +
                           std::to_string(x.size()));
    }
    Tensor out({out_dim()});
    forward(x.data(), out.data(), out.data());
    return out;
  }

  double activate(double v) const {
    return activation_ == Activation::ReLU ? (v > 0.0 ? v : 0.0) : v;
  }

  // ReLU subgradient at 0 is 0.
  double activation_slope(double pre) const {
    return activation_ == Activation::ReLU ? (pre > 0.0 ? 1.0 : 0.0) : 1.0;
  }

 private:
  Tensor weights_;
  Tensor bias_;
  Activation activation_ = Activation::Identity;
};

/// Largest singular value of the column block [col_begin, col_end) of a matrix,
/// by power iteration on W^T W with a Rayleigh-quotient estimate. Stops after
/// `max_iter` sweeps or once the estimate changes by less than `rel_tol`.
inline double operator_norm(const Tensor& w, std::size_t col_begin, std::size_t col_end, int max_iter = 2000,
                            double rel_tol = 1e-13) {
  const std::size_t rows = w.dim(0);
  const std::size_t cols = w.dim(1);
  const std::size_t n = col_end - col_begin;
  if (n == 0) return 0.0;
  // Deterministic, non-symmetric start so no singular direction is missed.
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.1 * static_cast<double>(i % 7) + 1e-3 * static_cast<double>(i);
  const double nv = vec::norm2(v);
  for (double& x : v) x /= nv;

  std::vector<double> u(rows);
  std::vector<double> next(n);
  double sigma_sq = -1.0;
  for (int it = 0; it < max_iter; ++it) {
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < n; ++c) s += w[r * cols + col_begin + c] * v[c];
      u[r] = s;
    }
    // Rayleigh quotient v^T W^T W v = |W v|^2 for unit v.
    const double rayleigh = vec::dot(u, u);
    std::fill(next.begin(), next.end(), 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < n; ++c) next[c] += w[r * cols + col_begin + c] * u[r];
    }
    const double norm_next = vec::norm2(next);
    if (norm_next == 0.0) return std::sqrt(rayleigh);
    for (std::size_t c = 0; c < n; ++c) v[c] = next[c] / norm_next;
    const bool converged = sigma_sq >= 0.0 && std::abs(rayleigh - sigma_sq) <= rel_tol * rayleigh;
    sigma_sq = rayleigh;
    if (converged) break;
  }
  // One more Rayleigh evaluation at the final iterate.
  double final_sq = 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < n; ++c) s += w[r * cols + col_begin + c] * v[c];
    final_sq += s * s;
  }
  return std::sqrt(std::max(final_sq, sigma_sq));
}

inline double operator_norm(const Tensor& w) { return operator_norm(w, 0, w.dim(1)); }

struct ContractivityCheck {
  double lhs = 0.0;
  double rhs = 0.0;
  bool holds = false;
};

/// Compares ||g(x) - g(x + eps)|| against ||W|| ||eps|| for a ReLU layer g.
inline ContractivityCheck relu_contractivity_check(const DenseLayer& layer, const Tensor& x, const Tensor& eps) {
  if (layer.activation() != Activation::ReLU) throw ContractError("contractivity check needs a ReLU layer");
  if (x.size() != layer.in_dim() || eps.size() != layer.in_dim()) {
    throw DimensionError("contractivity check: input and perturbation must have " + std::to_string(layer.in_dim()) +
                         " entries");
  }
  const Tensor a = layer.apply(x);
  const Tensor b = layer.apply(x + eps);
  ContractivityCheck out;
  out.lhs = vec::distance2(a.data(), b.data());
  out.rhs = operator_norm(layer.weights()) * norm2(eps);
  out.holds = out.lhs <= out.rhs + 1e-12;
  return out;
}

/// Glorot-uniform weights, zero bias.
inline DenseLayer glorot_layer(std::size_t in, std::size_t out, Activation activation, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor w({out, in});
  for (double& v : w.values()) v = dist(rng);
  return DenseLayer(std::move(w), Tensor({out}), activation);
}

}  // namespace odelab
