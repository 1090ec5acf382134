#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "odelab/models/classifier.hpp"
#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"

namespace odelab {

inline void require_label(const Tensor& logits, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= logits.size()) {
    throw ContractError("label " + std::to_string(label) + " outside [0, " + std::to_string(logits.size()) + ")");
  }
}

/// -log softmax(logits)[label] via log-sum-exp.
inline double cross_entropy(const Tensor& logits, int label) {
  require_label(logits, label);
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  double z = 0.0;
  for (double v : logits.data()) z += std::exp(v - m);
  return std::max(0.0, m + std::log(z) - logits[static_cast<std::size_t>(label)]);
}

/// d cross_entropy / d logits = softmax - onehot.
inline Tensor cross_entropy_gradient(const Tensor& logits, int label) {
  require_label(logits, label);
  Tensor g = softmax(logits);
  g[static_cast<std::size_t>(label)] -= 1.0;
  return g;
}

struct LossGradient {
  double loss = 0.0;
  Tensor logits;
  Gradients grads;
};

/// Loss, logits and gradients for one labelled sample.
inline LossGradient loss_and_gradient(const Classifier& model, const Tensor& x, int label,
                                      const ForwardOptions& opts = {}) {
  ClassifierTape tape;
  LossGradient out;
  out.logits = classifier_forward(model, x, &tape, opts);
  out.loss = cross_entropy(out.logits, label);
  out.grads = classifier_backward(model, tape, cross_entropy_gradient(out.logits, label));
  return out;
}

}  // namespace odelab
