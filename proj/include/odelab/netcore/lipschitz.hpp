#pragma once

#include <vector>

#include "odelab/netcore/vector_field.hpp"

namespace odelab {

struct LipschitzEstimate {
  std::vector<double> layer_norms;
  double bound = 1.0;  // product of layer_norms
};

/// Product-of-operator-norms bound on the Lipschitz constant of f in y.
/// ReLU and identity activations are 1-Lipschitz, so the product is an upper
/// bound. The time column of the first layer does not contribute.
inline LipschitzEstimate lipschitz_upper_bound(const VectorField& field) {
  LipschitzEstimate est;
  const auto& layers = field.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const Tensor& w = layers[i].weights();
    const std::size_t cols = i == 0 ? field.state_dim() : w.dim(1);
    est.layer_norms.push_back(operator_norm(w, 0, cols));
  }
  est.bound = 1.0;
  for (double n : est.layer_norms) est.bound *= n;
  return est;
}

inline double lipschitz_constant(const VectorField& field) { return lipschitz_upper_bound(field).bound; }
inline double lipschitz_constant(const FunctionField& field) { return field.lipschitz(); }

}  // namespace odelab
