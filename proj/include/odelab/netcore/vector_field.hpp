#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "odelab/netcore/dense.hpp"
#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"

namespace odelab {

/// How the time argument reaches the network: dropped, or appended as an
/// extra input feature.
enum class TimeMode { Ignore, AppendScalar };

inline std::string to_string(TimeMode m) { return m == TimeMode::Ignore ? "ignore" : "append"; }

inline TimeMode time_mode_from_string(const std::string& s) {
  if (s == "ignore") return TimeMode::Ignore;
  if (s == "append") return TimeMode::AppendScalar;
  throw FormatError("unknown time mode '" + s + "'");
}

class VectorField;

/// Primal values recorded by one evaluation of a VectorField: the network
/// input (state, plus time when appended) and every layer's pre-activation.
class GradientTape {
 public:
  GradientTape() = default;

  bool finalized() const { return field_ != nullptr; }
  const VectorField& field() const {
    if (!field_) throw StateError("gradient tape has not recorded a forward pass");
    return *field_;
  }
  double time() const { return time_; }
  const std::vector<double>& input() const { return input_; }
  const std::vector<std::vector<double>>& pre_activations() const { return pre_; }

  /// Re-runs the recorded forward pass.
  Tensor replay() const;

 private:
  friend class VectorField;
  const VectorField* field_ = nullptr;
  double time_ = 0.0;
  std::vector<double> input_;
  std::vector<std::vector<double>> pre_;
};

struct Gradients {
  Tensor input;
  std::vector<Tensor> params;
};

/// f(t, y; theta) as a stack of dense layers. Output dimension equals the
/// state dimension so that y + h f(t, y) is well formed.
class VectorField {
 public:
  VectorField() = default;

  VectorField(std::vector<DenseLayer> layers, TimeMode time_mode)
      : layers_(std::move(layers)), time_mode_(time_mode) {
    if (layers_.empty()) throw DimensionError("vector field needs at least one layer");
    for (std::size_t i = 1; i < layers_.size(); ++i) {
      if (layers_[i].in_dim() != layers_[i - 1].out_dim()) {
        throw DimensionError("layer " + std::to_string(i) + " expects " + std::to_string(layers_[i].in_dim()) +
                             " inputs but layer " + std::to_string(i - 1) + " produces " +
                             std::to_string(layers_[i - 1].out_dim()));
      }
    }
    const std::size_t extra = time_mode_ == TimeMode::AppendScalar ? 1 : 0;
    if (layers_.front().in_dim() < extra + 1) throw DimensionError("vector field input too small");
    if (layers_.back().out_dim() + extra != layers_.front().in_dim()) {
      throw DimensionError("vector field output dimension " + std::to_string(layers_.back().out_dim()) +
                           " differs from state dimension " + std::to_string(layers_.front().in_dim() - extra));
    }
  }

  /// Two-layer field: state (+time) -> width (ReLU) -> state.
  static VectorField mlp(std::size_t state_dim, std::size_t width, TimeMode time_mode, std::mt19937_64& rng) {
    const std::size_t in = state_dim + (time_mode == TimeMode::AppendScalar ? 1 : 0);
    std::vector<DenseLayer> layers;
    layers.push_back(glorot_layer(in, width, Activation::ReLU, rng));
    layers.push_back(glorot_layer(width, state_dim, Activation::Identity, rng));
    return VectorField(std::move(layers), time_mode);
  }

  std::size_t state_dim() const { return layers_.back().out_dim(); }
  std::size_t input_dim() const { return layers_.front().in_dim(); }
  TimeMode time_mode() const { return time_mode_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  std::size_t parameter_count() const { return 2 * layers_.size(); }

  /// Unchecked evaluation for the integrators' inner loops.
  void evaluate(double t, std::span<const double> y, std::span<double> out) const {
    evaluate_impl(t, y, out, nullptr);
  }

  void evaluate_recorded(double t, std::span<const double> y, std::span<double> out, GradientTape& tape) const {
    evaluate_impl(t, y, out, &tape);
  }

  Tensor forward(double t, const Tensor& y, GradientTape* tape = nullptr) const {
    if (y.size() != state_dim()) {
      throw DimensionError("vector field expects state of size " + std::to_string(state_dim()) + ", got " +
                           std::to_string(y.size()));
    }
    if (!std::isfinite(t)) throw NumericError("non-finite time passed to vector field");
    y.require_finite("vector field input");
    Tensor out({state_dim()});
    evaluate_impl(t, y.data(), out.data(), tape);
    return out;
  }

  /// Accumulates d(upstream . f)/dy into `input_grad` and the parameter
  /// gradients (W0, b0, W1, b1, ...) into `param_grads`.
  void accumulate_backward(const GradientTape& tape, std::span<const double> upstream, std::span<double> input_grad,
                           std::span<Tensor> param_grads) const {
    std::vector<double> g(upstream.begin(), upstream.end());
    std::vector<double> layer_in;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const DenseLayer& layer = layers_[li];
      const std::vector<double>& pre = tape.pre_[li];
      const std::size_t rows = layer.out_dim();
      const std::size_t cols = layer.in_dim();
      for (std::size_t r = 0; r < rows; ++r) g[r] *= layer.activation_slope(pre[r]);

      std::span<const double> x;
      if (li == 0) {
        x = tape.input_;
      } else {
        const DenseLayer& prev = layers_[li - 1];
        const std::vector<double>& prev_pre = tape.pre_[li - 1];
        layer_in.resize(prev_pre.size());
        for (std::size_t i = 0; i < prev_pre.size(); ++i) layer_in[i] = prev.activate(prev_pre[i]);
        x = layer_in;
      }
      Tensor& gw = param_grads[2 * li];
      Tensor& gb = param_grads[2 * li + 1];
      double* gwd = gw.data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        gb[r] += gr;
        double* row = gwd + r * cols;
        for (std::size_t c = 0; c < cols; ++c) row[c] += gr * x[c];
      }
      std::vector<double> next(cols, 0.0);
      const double* w = layer.weights().data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const double gr = g[r];
        if (gr == 0.0) continue;
        const double* row = w + r * cols;
        for (std::size_t c = 0; c < cols; ++c) next[c] += row[c] * gr;
      }
      g = std::move(next);
    }
    // Drop the time column.
    for (std::size_t i = 0; i < input_grad.size(); ++i) input_grad[i] += g[i];
  }

  std::vector<Tensor> zero_gradients() const {
    std::vector<Tensor> out;
    out.reserve(parameter_count());
    for (const DenseLayer& l : layers_) {
      out.emplace_back(l.weights().shape());
      out.emplace_back(l.bias().shape());
    }
    return out;
  }

 private:
  void evaluate_impl(double t, std::span<const double> y, std::span<double> out, GradientTape* tape) const {
    const std::size_t n = state_dim();
    std::vector<double> input(input_dim());
    std::copy(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(n), input.begin());
    if (time_mode_ == TimeMode::AppendScalar) input[n] = t;

    std::vector<double> cur = std::move(input);
    std::vector<double> pre;
    if (tape) {
      tape->field_ = this;
      tape->time_ = t;
      tape->input_ = cur;
      tape->pre_.resize(layers_.size());
    }
    for (std::size_t li = 0; li < layers_.size(); ++li) {
      const DenseLayer& layer = layers_[li];
      pre.resize(layer.out_dim());
      std::vector<double> next(layer.out_dim());
      layer.forward(cur, pre, next);
      if (tape) tape->pre_[li] = pre;
      cur = std::move(next);
    }
    std::copy(cur.begin(), cur.end(), out.begin());
  }

  std::vector<DenseLayer> layers_;
  TimeMode time_mode_ = TimeMode::Ignore;
};

inline Tensor GradientTape::replay() const {
  const VectorField& f = field();
  Tensor out({f.state_dim()});
  f.evaluate(time_, std::span<const double>(input_).first(f.state_dim()), out.data());
  return out;
}

/// Reverse pass for a single recorded evaluation.
inline Gradients backward(const GradientTape& tape, const Tensor& upstream) {
  const VectorField& f = tape.field();
  if (upstream.size() != f.state_dim()) {
    throw DimensionError("upstream gradient has " + std::to_string(upstream.size()) + " entries, field output has " +
                         std::to_string(f.state_dim()));
  }
  Gradients g{Tensor({f.state_dim()}), f.zero_gradients()};
  f.accumulate_backward(tape, upstream.data(), g.input.data(), g.params);
  return g;
}

/// Analytic field with a declared Lipschitz constant, for test problems such
/// as y' = sin(y) or y' = K y.
class FunctionField {
 public:
  using Fn = std::function<void(double, std::span<const double>, std::span<double>)>;

  FunctionField(std::size_t dim, double lipschitz, Fn fn)
      : dim_(dim), lipschitz_(lipschitz), fn_(std::move(fn)) {}

  std::size_t state_dim() const { return dim_; }
  double lipschitz() const { return lipschitz_; }
  void evaluate(double t, std::span<const double> y, std::span<double> out) const { fn_(t, y, out); }

  static FunctionField linear(std::size_t dim, double k) {
    return FunctionField(dim, std::abs(k), [k](double, std::span<const double> y, std::span<double> out) {
      for (std::size_t i = 0; i < y.size(); ++i) out[i] = k * y[i];
    });
  }

  static FunctionField sine(std::size_t dim) {
    return FunctionField(dim, 1.0, [](double, std::span<const double> y, std::span<double> out) {
      for (std::size_t i = 0; i < y.size(); ++i) out[i] = std::sin(y[i]);
    });
  }

  static FunctionField zero(std::size_t dim) {
    return FunctionField(dim, 0.0, [](double, std::span<const double>, std::span<double> out) {
      std::fill(out.begin(), out.end(), 0.0);
    });
  }

 private:
  std::size_t dim_;
  double lipschitz_;
  Fn fn_;
};

}  // namespace odelab
