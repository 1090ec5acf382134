#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "odelab/netcore/dense.hpp"
#include "odelab/netcore/errors.hpp"
#include "odelab/netcore/tensor.hpp"
#include "odelab/netcore/vector_field.hpp"
#include "odelab/solvers/runge_kutta.hpp"
#include "odelab/solvers/skip_schemes.hpp"

namespace odelab {

/// y <- y + h f(y), `depth` times, with a single (weight-tied) field.
struct ResidualBlock {
  double h = 1.0;
  int depth = 1;
};

/// y <- solution of y' = f(t, y) over [t0, t1] with an adaptive solver.
struct NeuralOdeBlock {
  SolverConfig solver;
};

/// y <- y + F(y) + F(F(y)), `depth` times.
struct PolyBlock {
  int depth = 1;
};

/// y <- f_C(y) with the fractal expansion rule.
struct FractalBlock {
  int columns = 2;
};

/// Additive coupling on the two halves of the state, `depth` times.
struct RevBlock {
  int depth = 1;
};

using BlockKind = std::variant<ResidualBlock, NeuralOdeBlock, PolyBlock, FractalBlock, RevBlock>;

inline std::string block_name(const BlockKind& kind) {
  struct Visitor {
    std::string operator()(const ResidualBlock&) const { return "residual"; }
    std::string operator()(const NeuralOdeBlock&) const { return "neural_ode"; }
    std::string operator()(const PolyBlock&) const { return "poly"; }
    std::string operator()(const FractalBlock&) const { return "fractal"; }
    std::string operator()(const RevBlock&) const { return "rev"; }
  };
  return std::visit(Visitor{}, kind);
}

/// A feature block: its kind plus instantiated fields (two for Rev, one otherwise).
struct BlockSpec {
  BlockKind kind;
  std::vector<VectorField> fields;

  void validate(std::size_t state_dim) const {
    std::visit(
        [&](const auto& k) {
          using K = std::decay_t<decltype(k)>;
          if constexpr (std::is_same_v<K, ResidualBlock>) {
            if (!(k.h > 0.0) || k.depth < 1) throw ContractError("residual block needs h > 0 and depth >= 1");
          } else if constexpr (std::is_same_v<K, NeuralOdeBlock>) {
            if (!is_adaptive(k.solver.method)) throw ContractError("neural ODE block needs an adaptive solver");
            k.solver.validate();
          } else if constexpr (std::is_same_v<K, PolyBlock> || std::is_same_v<K, RevBlock>) {
            if (k.depth < 1) throw ContractError(block_name(kind) + " block needs depth >= 1");
          } else if constexpr (std::is_same_v<K, FractalBlock>) {
            if (k.columns < 1) throw ContractError("fractal block needs at least one column");
            if (k.columns > kMaxFractalColumns) throw BudgetError("fractal block has too many columns");
          }
        },
        kind);
    const bool rev = std::holds_alternative<RevBlock>(kind);
    if (fields.size() != (rev ? 2u : 1u)) throw ContractError(block_name(kind) + " block has the wrong field count");
    const std::size_t expect = rev ? state_dim / 2 : state_dim;
    if (rev && state_dim % 2 != 0) throw DimensionError("rev block needs an even state dimension");
    for (const VectorField& f : fields) {
      if (f.state_dim() != expect) {
        throw DimensionError(block_name(kind) + " field has state dimension " + std::to_string(f.state_dim()) +
                             ", expected " + std::to_string(expect));
      }
      const bool needs_autonomous = !std::holds_alternative<NeuralOdeBlock>(kind) &&
                                    !std::holds_alternative<ResidualBlock>(kind);
      if (needs_autonomous && f.time_mode() != TimeMode::Ignore) {
        throw ContractError(block_name(kind) + " block needs autonomous fields");
      }
    }
  }
};

/// Feature blocks on a state space of `state_dim` (inputs are zero-padded from
/// `input_dim`), followed by a linear head producing `class_count` logits.
class Classifier {
 public:
  Classifier() = default;

  Classifier(std::size_t input_dim, std::size_t state_dim, std::vector<BlockSpec> blocks, DenseLayer head,
             std::uint64_t seed = 0)
      : input_dim_(input_dim), state_dim_(state_dim), blocks_(std::move(blocks)), head_(std::move(head)), seed_(seed) {
    if (input_dim_ == 0 || state_dim_ < input_dim_) throw DimensionError("state dimension must be >= input dimension");
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      try {
        blocks_[i].validate(state_dim_);
      } catch (Error& e) {
        e.add_context("block " + std::to_string(i));
        throw;
      }
    }
    if (head_.in_dim() != state_dim_) throw DimensionError("head input does not match state dimension");
    if (head_.out_dim() < 2) throw DimensionError("classifier needs at least two classes");
    if (head_.activation() != Activation::Identity) throw ContractError("classifier head must be linear");
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t state_dim() const { return state_dim_; }
  std::size_t class_count() const { return head_.out_dim(); }
  std::uint64_t seed() const { return seed_; }
  const std::vector<BlockSpec>& blocks() const { return blocks_; }
  std::vector<BlockSpec>& blocks() { return blocks_; }
  const DenseLayer& head() const { return head_; }
  DenseLayer& head() { return head_; }

  /// Parameters in canonical order: each block's fields' (W, b) per layer, then the head.
  std::vector<Tensor*> parameters() {
    std::vector<Tensor*> out;
    for (BlockSpec& b : blocks_) {
      for (VectorField& f : b.fields) {
        for (DenseLayer& l : f.layers()) {
          out.push_back(&l.weights());
          out.push_back(&l.bias());
        }
      }
    }
    out.push_back(&head_.weights());
    out.push_back(&head_.bias());
    return out;
  }

  std::vector<const Tensor*> parameters() const {
    std::vector<const Tensor*> out;
    for (Tensor* t : const_cast<Classifier*>(this)->parameters()) out.push_back(t);
    return out;
  }

  /// Names matching parameters(), used by checkpoints.
  std::vector<std::string> parameter_names() const {
    std::vector<std::string> out;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (std::size_t f = 0; f < blocks_[b].fields.size(); ++f) {
        for (std::size_t l = 0; l < blocks_[b].fields[f].layers().size(); ++l) {
          const std::string stem =
              "block" + std::to_string(b) + ".field" + std::to_string(f) + ".layer" + std::to_string(l);
          out.push_back(stem + ".weight");
          out.push_back(stem + ".bias");
        }
      }
    }
    out.push_back("head.weight");
    out.push_back("head.bias");
    return out;
  }

  std::vector<Tensor> zero_gradients() const {
    std::vector<Tensor> out;
    for (const Tensor* t : parameters()) out.emplace_back(t->shape());
    return out;
  }

  /// Offset of block b, field f in the parameter list.
  std::size_t parameter_offset(std::size_t block, std::size_t field) const {
    std::size_t off = 0;
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      for (std::size_t f = 0; f < blocks_[b].fields.size(); ++f) {
        if (b == block && f == field) return off;
        off += blocks_[b].fields[f].parameter_count();
      }
    }
    return off;
  }

 private:
  std::size_t input_dim_ = 0;
  std::size_t state_dim_ = 0;
  std::vector<BlockSpec> blocks_;
  DenseLayer head_;
  std::uint64_t seed_ = 0;
};

/// How NeuralODE blocks are integrated during a forward pass.
enum class OdeMode {
  Adaptive,   // embedded-pair step control
  FixedGrid,  // uniform grid with the block's tableau, `fixed_grid_steps` steps
};

struct BlockTape;

/// Per-block primal records of a classifier forward pass.
struct ClassifierTape {
  std::vector<BlockTape> blocks;
  std::vector<double> head_input;
  bool finalized = false;
};

struct BlockTape {
  std::vector<GradientTape> evals;        // field evaluations in execution order
  SolveTape solve;                        // NeuralODE blocks
  std::vector<double> grid;               // NeuralODE accepted times
  std::vector<std::vector<double>> states;  // block input followed by every intermediate state
};

struct ForwardOptions {
  OdeMode ode_mode = OdeMode::Adaptive;
  int fixed_grid_steps = 20;
  /// When set, NeuralODE blocks reuse this tape's accepted time grids.
  const ClassifierTape* grid_source = nullptr;
};

namespace detail {

inline std::vector<double> eval_field(const VectorField& f, double t, std::span<const double> y,
                                      std::vector<GradientTape>* tapes) {
  std::vector<double> out(f.state_dim());
  if (tapes) {
    tapes->emplace_back();
    f.evaluate_recorded(t, y, out, tapes->back());
  } else {
    f.evaluate(t, y, out);
  }
  if (!vec::all_finite(out)) throw NumericError("non-finite field output");
  return out;
}

inline std::vector<double> fractal_forward(const VectorField& f, int columns, std::span<const double> y,
                                           std::vector<GradientTape>* tapes) {
  if (columns == 1) return eval_field(f, 0.0, y, tapes);
  const std::vector<double> inner = fractal_forward(f, columns - 1, y, tapes);
  const std::vector<double> outer = fractal_forward(f, columns - 1, inner, tapes);
  const std::vector<double> base = eval_field(f, 0.0, y, tapes);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * outer[i] + 0.5 * base[i];
  return out;
}

inline std::size_t fractal_eval_count(int columns) { return (std::size_t{1} << columns) - 1; }

inline std::vector<double> fractal_backward(const VectorField& f, int columns, const std::vector<GradientTape>& tapes,
                                            std::size_t offset, std::span<const double> upstream,
                                            std::span<Tensor> grads) {
  std::vector<double> y_bar(upstream.size(), 0.0);
  if (columns == 1) {
    f.accumulate_backward(tapes[offset], upstream, y_bar, grads);
    return y_bar;
  }
  const std::size_t sub = fractal_eval_count(columns - 1);
  std::vector<double> half(upstream.begin(), upstream.end());
  for (double& v : half) v *= 0.5;
  f.accumulate_backward(tapes[offset + 2 * sub], half, y_bar, grads);
  const std::vector<double> inner_bar = fractal_backward(f, columns - 1, tapes, offset + sub, half, grads);
  const std::vector<double> from_inner = fractal_backward(f, columns - 1, tapes, offset, inner_bar, grads);
  for (std::size_t i = 0; i < y_bar.size(); ++i) y_bar[i] += from_inner[i];
  return y_bar;
}

inline std::vector<double> uniform_grid(double t0, double t1, int steps) {
  std::vector<double> g(static_cast<std::size_t>(steps) + 1);
  const double h = (t1 - t0) / steps;
  for (int i = 0; i < steps; ++i) g[static_cast<std::size_t>(i)] = t0 + i * h;
  g.back() = t1;
  return g;
}

inline std::vector<double> block_forward(const BlockSpec& block, std::vector<double> y, BlockTape* tape,
                                         const BlockTape* grid_source, const ForwardOptions& opts) {
  std::vector<GradientTape>* evals = tape ? &tape->evals : nullptr;
  auto record = [&](const std::vector<double>& s) {
    if (tape) tape->states.push_back(s);
  };
  record(y);
  const VectorField& f = block.fields.front();
  if (const auto* res = std::get_if<ResidualBlock>(&block.kind)) {
    for (int n = 0; n < res->depth; ++n) {
      const std::vector<double> k = eval_field(f, static_cast<double>(n) * res->h, y, evals);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] + res->h * k[i];
      record(y);
    }
  } else if (const auto* node = std::get_if<NeuralOdeBlock>(&block.kind)) {
    const Tensor y0 = Tensor::vector(y);
    SolveTape* solve = tape ? &tape->solve : nullptr;
    Trajectory traj;
    if (grid_source) {
      traj = integrate_on_grid(tableau_for(node->solver.method), f, grid_source->grid, y0, solve);
    } else if (opts.ode_mode == OdeMode::FixedGrid) {
      const std::vector<double> grid = uniform_grid(node->solver.t0, node->solver.t1, opts.fixed_grid_steps);
      traj = integrate_on_grid(tableau_for(node->solver.method), f, grid, y0, solve);
    } else {
      traj = integrate_adaptive(f, node->solver, y0, solve);
    }
    if (tape) {
      tape->grid = traj.times;
      for (std::size_t n = 1; n < traj.states.size(); ++n) tape->states.push_back(traj.states[n].values());
    }
    y = traj.final_state().values();
  } else if (const auto* poly = std::get_if<PolyBlock>(&block.kind)) {
    for (int n = 0; n < poly->depth; ++n) {
      const std::vector<double> u = eval_field(f, 0.0, y, evals);
      const std::vector<double> v = eval_field(f, 0.0, u, evals);
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = y[i] + u[i] + v[i];
      record(y);
    }
  } else if (const auto* frac = std::get_if<FractalBlock>(&block.kind)) {
    y = fractal_forward(f, frac->columns, y, evals);
    record(y);
  } else if (const auto* rev = std::get_if<RevBlock>(&block.kind)) {
    const VectorField& f2 = block.fields[1];
    const std::size_t half = y.size() / 2;
    for (int n = 0; n < rev->depth; ++n) {
      std::span<const double> ys(y.data() + half, half);
      const std::vector<double> a = eval_field(f, 0.0, ys, evals);
      for (std::size_t i = 0; i < half; ++i) y[i] = y[i] + a[i];
      std::span<const double> xs(y.data(), half);
      const std::vector<double> b = eval_field(f2, 0.0, xs, evals);
      for (std::size_t i = 0; i < half; ++i) y[half + i] = y[half + i] + b[i];
      record(y);
    }
  }
  if (!vec::all_finite(y)) throw NumericError("non-finite block output");
  return y;
}

inline std::vector<double> block_backward(const BlockSpec& block, const BlockTape& tape, std::vector<double> g,
                                          std::span<Tensor> grads0, std::span<Tensor> grads1) {
  const VectorField& f = block.fields.front();
  const std::size_t d = g.size();
  if (const auto* res = std::get_if<ResidualBlock>(&block.kind)) {
    std::vector<double> scaled(d), acc(d);
    for (int n = res->depth; n-- > 0;) {
      for (std::size_t i = 0; i < d; ++i) scaled[i] = res->h * g[i];
      std::fill(acc.begin(), acc.end(), 0.0);
      f.accumulate_backward(tape.evals[static_cast<std::size_t>(n)], scaled, acc, grads0);
      for (std::size_t i = 0; i < d; ++i) g[i] += acc[i];
    }
  } else if (std::holds_alternative<NeuralOdeBlock>(block.kind)) {
    g = solve_backward(f, tape.solve, g, grads0);
  } else if (const auto* poly = std::get_if<PolyBlock>(&block.kind)) {
    std::vector<double> u_bar(d), y_bar(d);
    for (int n = poly->depth; n-- > 0;) {
      const auto idx = static_cast<std::size_t>(2 * n);
      u_bar = g;
      f.accumulate_backward(tape.evals[idx + 1], g, u_bar, grads0);
      y_bar = g;
      f.accumulate_backward(tape.evals[idx], u_bar, y_bar, grads0);
      g = y_bar;
    }
  } else if (const auto* frac = std::get_if<FractalBlock>(&block.kind)) {
    g = fractal_backward(f, frac->columns, tape.evals, 0, g, grads0);
  } else if (const auto* rev = std::get_if<RevBlock>(&block.kind)) {
    const VectorField& f2 = block.fields[1];
    const std::size_t half = d / 2;
    for (int n = rev->depth; n-- > 0;) {
      const auto idx = static_cast<std::size_t>(2 * n);
      std::span<double> x_bar(g.data(), half);
      std::span<const double> y_bar(g.data() + half, half);
      // y' = y + f2(x'): x' gains J2^T y_bar.
      f2.accumulate_backward(tape.evals[idx + 1], y_bar, x_bar, grads1);
      // x' = x + f1(y): y gains J1^T x'_bar.
      std::vector<double> x_total(x_bar.begin(), x_bar.end());
      f.accumulate_backward(tape.evals[idx], x_total, std::span<double>(g.data() + half, half), grads0);
    }
  }
  return g;
}

}  // namespace detail

/// Logits for input x; records a tape for classifier_backward when given.
inline Tensor classifier_forward(const Classifier& model, const Tensor& x, ClassifierTape* tape = nullptr,
                                 const ForwardOptions& opts = {}) {
  if (x.size() != model.input_dim()) {
    throw DimensionError("classifier expects " + std::to_string(model.input_dim()) + " inputs, got " +
                         std::to_string(x.size()));
  }
  x.require_finite("classifier input");
  std::vector<double> y(model.state_dim(), 0.0);
  std::copy(x.data().begin(), x.data().end(), y.begin());
  if (tape) {
    tape->blocks.assign(model.blocks().size(), BlockTape{});
    tape->finalized = false;
  }
  for (std::size_t b = 0; b < model.blocks().size(); ++b) {
    const BlockTape* grid = nullptr;
    if (opts.grid_source && std::holds_alternative<NeuralOdeBlock>(model.blocks()[b].kind)) {
      grid = &opts.grid_source->blocks.at(b);
    }
    try {
      y = detail::block_forward(model.blocks()[b], std::move(y), tape ? &tape->blocks[b] : nullptr, grid, opts);
    } catch (Error& e) {
      e.add_context("block " + std::to_string(b));
      throw;
    }
  }
  Tensor logits({model.class_count()});
  std::vector<double> pre(model.class_count());
  model.head().forward(y, pre, logits.data());
  if (tape) {
    tape->head_input = std::move(y);
    tape->finalized = true;
  }
  logits.require_finite("logits");
  return logits;
}

/// Gradients of upstream . logits with respect to the input and every parameter.
inline Gradients classifier_backward(const Classifier& model, const ClassifierTape& tape, const Tensor& upstream) {
  if (!tape.finalized) throw StateError("classifier tape has not recorded a forward pass");
  if (upstream.size() != model.class_count()) throw DimensionError("upstream gradient does not match class count");
  Gradients out{Tensor({model.input_dim()}), model.zero_gradients()};
  std::span<Tensor> grads(out.params);
  const std::size_t head_off = grads.size() - 2;
  const DenseLayer& head = model.head();
  const std::size_t d = model.state_dim();
  std::vector<double> g(d, 0.0);
  for (std::size_t r = 0; r < head.out_dim(); ++r) {
    const double u = upstream[r];
    grads[head_off + 1][r] += u;
    for (std::size_t c = 0; c < d; ++c) {
      grads[head_off][r * d + c] += u * tape.head_input[c];
      g[c] += head.weights()[r * d + c] * u;
    }
  }
  for (std::size_t b = model.blocks().size(); b-- > 0;) {
    const BlockSpec& block = model.blocks()[b];
    const std::size_t off0 = model.parameter_offset(b, 0);
    std::span<Tensor> g0 = grads.subspan(off0, block.fields[0].parameter_count());
    std::span<Tensor> g1;
    if (block.fields.size() > 1) g1 = grads.subspan(model.parameter_offset(b, 1), block.fields[1].parameter_count());
    g = detail::block_backward(block, tape.blocks[b], std::move(g), g0, g1);
  }
  std::copy(g.begin(), g.begin() + static_cast<std::ptrdiff_t>(model.input_dim()), out.input.data().begin());
  return out;
}

inline Tensor softmax(const Tensor& logits) {
  double m = logits[0];
  for (double v : logits.data()) m = std::max(m, v);
  Tensor p(logits.shape());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - m));
  for (double& v : p.values()) v /= z;
  return p;
}

/// Index of the largest logit; ties go to the lowest index.
inline int argmax(const Tensor& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.size(); ++i) {
    if (t[i] > t[best]) best = i;
  }
  return static_cast<int>(best);
}

struct Prediction {
  int label = 0;
  Tensor probabilities;
};

inline Prediction predict(const Classifier& model, const Tensor& x, const ForwardOptions& opts = {}) {
  const Tensor logits = classifier_forward(model, x, nullptr, opts);
  return {argmax(logits), softmax(logits)};
}

/// Blueprint for a freshly initialised classifier.
struct ArchitectureSpec {
  std::size_t input_dim = 2;
  std::size_t augment_dims = 0;
  std::size_t class_count = 2;
  std::size_t width = 16;
  std::vector<BlockKind> blocks;

  std::size_t state_dim() const { return input_dim + augment_dims; }
};

/// Glorot-uniform weights and zero biases, drawn from `seed`. NeuralODE fields
/// see time as an extra input; the other blocks are autonomous.
inline Classifier build_classifier(const ArchitectureSpec& arch, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const std::size_t d = arch.state_dim();
  std::vector<BlockSpec> blocks;
  for (const BlockKind& kind : arch.blocks) {
    BlockSpec spec{kind, {}};
    if (std::holds_alternative<RevBlock>(kind)) {
      spec.fields.push_back(VectorField::mlp(d / 2, arch.width, TimeMode::Ignore, rng));
      spec.fields.push_back(VectorField::mlp(d / 2, arch.width, TimeMode::Ignore, rng));
    } else {
      const TimeMode tm = std::holds_alternative<NeuralOdeBlock>(kind) ? TimeMode::AppendScalar : TimeMode::Ignore;
      spec.fields.push_back(VectorField::mlp(d, arch.width, tm, rng));
    }
    blocks.push_back(std::move(spec));
  }
  DenseLayer head = glorot_layer(d, arch.class_count, Activation::Identity, rng);
  return Classifier(arch.input_dim, d, std::move(blocks), std::move(head), seed);
}

}  // namespace odelab
